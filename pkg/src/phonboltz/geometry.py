"""Measure conventions and energy-surface geometry.

Every d-dimensional integral in the suite uses Lebesgue measure divided by
(2 pi)^(d/2); one-dimensional integrals use plain Lebesgue measure.  The
surface-delta measure is

    int F(p) delta(psi(p)) dp = int_{psi=0} F / |grad psi| dsigma

in that normalized convention.  Two implementations are provided: a mollified
delta (Gaussian of width h, Richardson-extrapolated h -> 0) evaluated by
Monte Carlo, and a deterministic radial parametrization that finds the level
set along rays from an interior center (valid for the coercive single-well
shell functions produced by validated models).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import DegenerateGradient, NonConvergent

RHO_TILDE = 0.25  # default small-scale constant; the theory never fixes it


def norm_const(d: int) -> float:
    """(2 pi)^(d/2): the Lebesgue-to-normalized conversion factor."""
    return (2 * math.pi) ** (d / 2)


@dataclass(frozen=True)
class NormalizedMeasure:
    d: int
    convention: str = "lebesgue_over_2pi_halfd"

    @property
    def scale(self) -> float:
        return 1.0 / norm_const(self.d)


@dataclass(frozen=True)
class LevelSetSlab:
    """Neighborhood E_sigma(p, theta, delta) = {k : |Phi_sigma(p,k) - theta| <= delta}."""
    p: tuple
    sigma: int
    theta: float
    delta: float

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("slab half-width delta must be positive")

    def indicator(self, model, k: np.ndarray) -> np.ndarray:
        from .model import phi
        vals = phi(model, np.asarray(self.p, float), k, self.sigma)
        return np.abs(vals - self.theta) <= self.delta


def stream(seed: int, *key: int) -> np.random.Generator:
    """Deterministic counter-based substream (Philox), independent of threading."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**128 - 1),
                                spawn_key=tuple(int(k) & (2**64 - 1) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def unit_ball_volume(d: int) -> float:
    """Lebesgue volume of the unit ball."""
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def sphere_directions(d: int, n: int) -> tuple:
    """Quadrature (directions, weights) with sum(w) = |S^(d-1)| (Lebesgue).

    d=1: the two endpoints; d=2: uniform angles (trapezoid, spectral for
    smooth integrands); d=3: Gauss-Legendre in cos(theta) x uniform phi;
    d>=4: quasi-random directions with equal weights.
    """
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if d == 2:
        ang = np.linspace(0, 2 * math.pi, n, endpoint=False)
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        w = np.full(n, 2 * math.pi / n)
        return dirs, w
    if d == 3:
        n_theta = max(4, int(round(math.sqrt(n / 2))))
        n_phi = 2 * n_theta
        nodes, wts = np.polynomial.legendre.leggauss(n_theta)
        phi_ang = np.linspace(0, 2 * math.pi, n_phi, endpoint=False)
        ct, ph = np.meshgrid(nodes, phi_ang, indexing="ij")
        st = np.sqrt(1 - ct**2)
        dirs = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=-1).reshape(-1, 3)
        w = (np.broadcast_to(wts[:, None], ct.shape) * (2 * math.pi / n_phi)).ravel()
        return dirs, w
    rng = stream(2718281828, d, n)
    v = rng.normal(size=(n, d))
    dirs = v / np.linalg.norm(v, axis=1, keepdims=True)
    area = d * unit_ball_volume(d)
    return dirs, np.full(n, area / n)


def _fd_gradient_norm(fn, pts: np.ndarray, h: float = 1e-5) -> np.ndarray:
    d = pts.shape[-1]
    acc = np.zeros(pts.shape[:-1])
    for i in range(d):
        dk = np.zeros(d)
        dk[i] = h
        acc += ((fn(pts + dk) - fn(pts - dk)) / (2 * h)) ** 2
    return np.sqrt(acc)


def find_center(fn, box_half: float, d: int, n_coarse: int = 11) -> np.ndarray:
    """Approximate minimizer of fn over [-box_half, box_half]^d."""
    ax = np.linspace(-box_half, box_half, n_coarse)
    mesh = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
    vals = fn(mesh)
    x0 = mesh[int(np.argmin(vals))]
    res = optimize.minimize(lambda x: float(fn(x[None, :])[0]), x0, method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 800})
    return res.x


def radial_roots(fn, center: np.ndarray, dirs: np.ndarray, r_max: float,
                 n_scan: int = 256) -> list:
    """All roots of r -> fn(center + r*dir) on (0, r_max], per direction.

    Scans a uniform radial grid for sign changes and polishes with brentq.
    Returns a list of arrays of roots (possibly empty) per direction.
    """
    rs = np.linspace(0.0, r_max, n_scan)
    pts = center[None, None, :] + rs[None, :, None] * dirs[:, None, :]
    vals = fn(pts)
    out = []
    for i in range(dirs.shape[0]):
        v = vals[i]
        sign_change = np.nonzero(v[:-1] * v[1:] < 0)[0]
        roots = []
        for j in sign_change:
            f = lambda r: float(fn((center + r * dirs[i])[None, :])[0])
            roots.append(optimize.brentq(f, rs[j], rs[j + 1], xtol=1e-12))
        for j in np.nonzero(v == 0.0)[0]:
            if rs[j] > 0:
                roots.append(float(rs[j]))
        out.append(np.array(sorted(roots)))
    return out


@dataclass(frozen=True)
class SurfaceIntegral:
    value: float
    stderr: float
    method: str
    details: dict

    def __float__(self):
        return self.value


def surface_delta_integral(F, psi, box_half: float, d: int, *,
                           method: str = "radial",
                           h_values: tuple = (0.08, 0.04, 0.02),
                           n_samples: int = 10**6,
                           n_dirs: int = 3200, n_scan: int = 256,
                           center: np.ndarray | None = None,
                           seed: int = 0,
                           grad_min: float = 1e-6,
                           nonconv_rel: float = 0.05) -> SurfaceIntegral:
    """int F(p) delta(psi(p)) dp over [-box_half, box_half]^d, normalized measure.

    ``method='mollified'``: Monte Carlo with a Gaussian delta of width h and
    Richardson extrapolation over ``h_values`` (common random numbers across
    the h's); raises NonConvergent when the extrapolation residual exceeds
    its tolerance.  ``method='radial'``: deterministic ray parametrization
    from an interior center.  Both raise DegenerateGradient when |grad psi|
    falls below ``grad_min`` at sampled level-set points.
    """
    if method == "radial":
        return _surface_radial(F, psi, box_half, d, n_dirs, n_scan, center, grad_min)
    if method == "mollified":
        return _surface_mollified(F, psi, box_half, d, h_values, n_samples,
                                  seed, grad_min, nonconv_rel)
    raise ValueError("method must be 'radial' or 'mollified'")


def _surface_radial(F, psi, box_half, d, n_dirs, n_scan, center, grad_min):
    if center is None:
        center = find_center(psi, box_half, d)
    center = np.asarray(center, float)
    c_val = float(psi(center[None, :])[0])
    if abs(c_val) < 1e-8:
        # level set touches the minimizer: the gradient vanishes there
        gn = float(_fd_gradient_norm(psi, center[None, :])[0])
        if gn < grad_min:
            raise DegenerateGradient(
                f"|grad psi| = {gn:g} at the level set (tangential contact at {center})")
    if c_val > 0:
        return SurfaceIntegral(0.0, 0.0, "radial", {"empty": True})
    dirs, w = sphere_directions(d, n_dirs)
    roots = radial_roots(psi, center, dirs, box_half * math.sqrt(d), n_scan)
    total = 0.0
    pts_all = []
    for i, rr in enumerate(roots):
        for r in rr:
            pt = center + r * dirs[i]
            pts_all.append(pt)
            gn = float(_fd_gradient_norm(psi, pt[None, :])[0])
            if gn < grad_min:
                raise DegenerateGradient(f"|grad psi| = {gn:g} at {pt}")
            total += w[i] * float(F(pt[None, :])[0]) * r ** (d - 1) / gn
    value = total / norm_const(d)
    # resolution-halving residual as the error proxy
    half = dirs.shape[0] // 2
    if half >= 2 and pts_all:
        sub = slice(0, None, 2)
        total_h = 0.0
        for i in range(0, dirs.shape[0], 2):
            for r in roots[i]:
                pt = center + r * dirs[i]
                gn = float(_fd_gradient_norm(psi, pt[None, :])[0])
                total_h += 2 * w[i] * float(F(pt[None, :])[0]) * r ** (d - 1) / gn
        resid = abs(total_h / norm_const(d) - value)
    else:
        resid = 0.0
    return SurfaceIntegral(value, resid, "radial",
                           {"n_dirs": int(dirs.shape[0]), "center": center.tolist()})


def _surface_mollified(F, psi, box_half, d, h_values, n_samples, seed,
                       grad_min, nonconv_rel):
    rng = stream(seed, 0x6d6f6c6c)
    pts = rng.uniform(-box_half, box_half, size=(n_samples, d))
    psi_v = np.asarray(psi(pts), float)
    f_v = np.asarray(F(pts), float)
    # degenerate-gradient screen at sampled near-surface points
    near = np.abs(psi_v) < min(h_values)
    if np.any(near):
        idx = np.argsort(np.abs(psi_v[near]))[:200]
        gn = _fd_gradient_norm(psi, pts[near][idx])
        if float(np.min(gn)) < grad_min:
            raise DegenerateGradient(f"|grad psi| = {float(np.min(gn)):g} near the level set")
    vol_leb = (2 * box_half) ** d
    h = np.asarray(sorted(h_values, reverse=True), float)
    if len(h) != 3 or not np.allclose(h[:-1] / h[1:], 2.0):
        raise ValueError("h_values must be three widths in ratio 2 (e.g. 0.08, 0.04, 0.02)")
    deltas = np.exp(-0.5 * (psi_v[None, :] / h[:, None]) ** 2) / (np.sqrt(2 * math.pi) * h[:, None])
    per_sample = deltas * f_v[None, :] * (vol_leb / norm_const(d))
    means = per_sample.mean(axis=1)
    # two-level Richardson for an O(h^2) mollifier error: weights (1, -20, 64)/45
    w_r = np.array([1.0, -20.0, 64.0]) / 45.0
    combo = w_r @ per_sample
    value = float(np.mean(combo))
    stderr = float(np.std(combo, ddof=1) / math.sqrt(n_samples))
    t1_last = (4 * means[2] - means[1]) / 3
    resid = abs(value - t1_last)
    tol = nonconv_rel * (abs(value) + 1e-12) + 3 * stderr
    if resid > tol:
        raise NonConvergent(f"mollified-delta extrapolation residual {resid:g} > {tol:g}")
    return SurfaceIntegral(value, stderr, "mollified",
                           {"h_values": h.tolist(), "means": means.tolist(),
                            "residual": resid})


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: float
    stderr: float
    hits: int
    n_samples: int

    def __float__(self):
        return self.value


def sample_ball(rng: np.random.Generator, q: np.ndarray, rho: float, n: int) -> np.ndarray:
    d = q.shape[-1]
    v = rng.normal(size=(n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = rho * rng.random(n) ** (1.0 / d)
    return q[None, :] + v * r[:, None]


def slab_volume(model, slab: LevelSetSlab, q, rho: float,
                n_samples: int = 10**6, seed: int = 0) -> MonteCarloEstimate:
    """Monte Carlo |E_sigma(p, theta, delta) ∩ B(q, rho)| in normalized measure."""
    q = np.asarray(q, float)
    rng = stream(seed, 0x736c6162)
    pts = sample_ball(rng, q, rho, n_samples)
    inside = slab.indicator(model, pts)
    hits = int(np.count_nonzero(inside))
    frac = hits / n_samples
    vol = unit_ball_volume(model.d) * rho ** model.d / norm_const(model.d)
    stderr = vol * math.sqrt(max(frac * (1 - frac), 0.0) / n_samples)
    return MonteCarloEstimate(vol * frac, stderr, hits, n_samples)


@dataclass(frozen=True)
class TransversalityProbe:
    ratio: float
    at_q: tuple
    rows: list   # (q, volume, stderr, ratio)


def transversality_probe(model, p1, p2, theta1, theta2, delta1, delta2, rho,
                         *, n_q: int = 40, n_samples: int = 200_000,
                         seed: int = 0, rho_tilde: float = RHO_TILDE,
                         sigma: int = +1) -> TransversalityProbe:
    """Worst sampled ratio |E1 ∩ E2 ∩ B(q, rho)| |p1-p2| / (d1 d2 rho^(d-2)).

    A finite-sample estimate of the transversality constant.  Ball centers q
    are drawn on the first shell (where the intersection concentrates).
    """
    p1 = np.asarray(p1, float)
    p2 = np.asarray(p2, float)
    sep = float(np.linalg.norm(p1 - p2))
    if sep <= 0:
        raise ValueError("transversality ratio undefined for p1 == p2")
    if max(delta1, delta2, rho) > rho_tilde:
        raise ValueError(f"delta1, delta2, rho must be <= rho_tilde = {rho_tilde}")
    from .model import phi
    slab1 = LevelSetSlab(tuple(p1), sigma, theta1, delta1)
    slab2 = LevelSetSlab(tuple(p2), sigma, theta2, delta2)
    rng = stream(seed, 0x7472616e)
    # ball centers: scanned points closest to both shells at once
    scan = rng.uniform(-6.0, 6.0, size=(200_000, model.d))
    d1 = np.abs(np.asarray(phi(model, p1, scan, sigma), float) - theta1)
    d2 = np.abs(np.asarray(phi(model, p2, scan, sigma), float) - theta2)
    order = np.argsort(np.maximum(d1, d2))
    qs = []
    for idx in order:
        pt = scan[idx]
        if all(np.linalg.norm(pt - q) > rho for q in qs):
            qs.append(pt)
        if len(qs) == n_q:
            break
    rows = []
    best = (0.0, tuple(qs[0]) if qs else tuple(np.zeros(model.d)))
    denom = delta1 * delta2 * rho ** (model.d - 2)
    for q in qs:
        pts = sample_ball(rng, q, rho, n_samples)
        inside = slab1.indicator(model, pts) & slab2.indicator(model, pts)
        frac = np.count_nonzero(inside) / n_samples
        vol_ball = unit_ball_volume(model.d) * rho ** model.d / norm_const(model.d)
        vol = vol_ball * frac
        stderr = vol_ball * math.sqrt(max(frac * (1 - frac), 0.0) / n_samples)
        ratio = vol * sep / denom
        rows.append((tuple(q), vol, stderr, ratio))
        if ratio > best[0]:
            best = (ratio, tuple(q))
    return TransversalityProbe(best[0], best[1], rows)
