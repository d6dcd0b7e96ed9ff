"""Collision kernel and the basic oscillatory/resolvent functions.

Central objects, for p, k in R^d, sigma in {+1, -1}:

    M(k, sigma)        = |Q(k)|^2 (N(k) + (sigma+1)/2)
    Phi_sigma(p, k)    = e(k+p) + sigma * omega(k)
    Theta(s, p, Omega) = sum_sigma int exp(-i s [Phi_sigma + Omega]) M dk
    Upsilon_eta(a, p)  = sum_sigma int M / (a - Phi_sigma + i eta) dk

The evaluation strategy reduces the d-dimensional integrals to the weighted
shell density D_sigma(theta; p) = int M delta(Phi_sigma - theta) dk via a
radial parametrization around the single critical point of Phi (guaranteed
by the validated Hessian bounds).  Upsilon is evaluated by two independent
routes (direct momentum quadrature with the complex denominator, and the
time representation i int_0^inf exp(is(a + i eta)) Theta(s) ds); the public
``upsilon`` asserts their agreement.

The collision kernel sigma(V, U) = 2 pi |Q(U-V)|^2 {(N+1) delta(e(V)-e(U)+omega)
+ N delta(e(V)-e(U)-omega)} splits into the emission branch (out of V this is
the shell e(U) = e(V) - omega with weight N+1, i.e. sigma = +1 here) and the
absorption branch (e(U) = e(V) + omega, weight N, sigma = -1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.interpolate import CubicSpline, PchipInterpolator

from . import SHELL_TOLERANCE
from .errors import NoOpenChannel, QuadratureFail, RouteMismatch
from .geometry import (find_center, norm_const, sphere_directions, stream,
                       surface_delta_integral)
from .model import Model, phonon_occupation


# ---------------------------------------------------------------------------
# Vertex weight M(k, sigma)
# ---------------------------------------------------------------------------

class VertexWeight:
    """M(k, sigma) = |Q(k)|^2 (N(k) + (sigma+1)/2) plus the derivative envelope."""

    def __init__(self, model: Model):
        self.model = model

    def __call__(self, k: np.ndarray, sigma: int) -> np.ndarray:
        if sigma not in (+1, -1):
            raise ValueError("sigma must be +1 or -1")
        k = np.asarray(k, float)
        q2 = np.asarray(self.model.coupling(k), float) ** 2
        occ = np.zeros_like(q2)
        live = q2 != 0.0
        if np.any(live):
            occ[live] = phonon_occupation(self.model, k[live])
        elif q2.size:
            occ = phonon_occupation(self.model, k)
        return q2 * (occ + (sigma + 1) / 2)

    def envelope(self, k: np.ndarray, orders: int = 2, h: float = 1e-4) -> np.ndarray:
        """max over sigma and derivative orders <= `orders` of |D^j M| (FD probe)."""
        k = np.asarray(k, float)
        out = np.zeros(k.shape[:-1])
        for sigma in (+1, -1):
            out = np.maximum(out, np.abs(self(k, sigma)))
            for axis in range(self.model.d):
                dk = np.zeros(self.model.d)
                dk[axis] = h
                d1 = (self(k + dk, sigma) - self(k - dk, sigma)) / (2 * h)
                out = np.maximum(out, np.abs(d1))
                if orders >= 2:
                    d2 = (self(k + dk, sigma) - 2 * self(k, sigma)
                          + self(k - dk, sigma)) / h**2
                    out = np.maximum(out, np.abs(d2))
        return out


def _phi_factory(model: Model, p: np.ndarray, sigma: int):
    p = np.asarray(p, float)

    def f(k):
        k = np.asarray(k, float)
        return np.asarray(model.e(k + p), float) + sigma * np.asarray(model.omega(k), float)

    return f


def _center_of_phi(model: Model, p: np.ndarray, sigma: int) -> np.ndarray:
    """Critical point of k -> Phi_sigma(p, k) (unique for validated models)."""
    p = np.asarray(p, float)
    if model.names.get("electron") == "quadratic" and model.omega_is_constant:
        return -p
    f = _phi_factory(model, p, sigma)
    x0 = -p
    res = optimize.minimize(lambda x: float(f(x[None, :])[0]), x0, method="Nelder-Mead",
                            options={"xatol": 1e-11, "fatol": 1e-14, "maxiter": 2000})
    return res.x


# ---------------------------------------------------------------------------
# Weighted shell density D_sigma(theta; p)
# ---------------------------------------------------------------------------

class EnergyShellDensity:
    """Tabulation of D_sigma(theta; p) = int M(k, sigma) delta(Phi_sigma(p,k) - theta) dk.

    Radial parametrization around the critical point of Phi; theta is sampled
    as theta_min + u^2, which resolves the sqrt-type band edge exactly.  The
    tabulated density supports vectorized evaluation and its own moments.
    """

    def __init__(self, model: Model, p, sigma: int, *, n_dirs: int = 1800,
                 n_u: int = 400, r_pad: float = 8.0):
        self.model = model
        self.p = np.asarray(p, float)
        self.sigma = sigma
        self.weight = VertexWeight(model)
        self.center = _center_of_phi(model, self.p, sigma)
        phi = _phi_factory(model, self.p, sigma)
        self.theta_min = float(phi(self.center[None, :])[0])
        dirs, w = sphere_directions(model.d, n_dirs)
        self.dirs, self.w = dirs, w
        r_max = float(np.linalg.norm(self.p)) + r_pad
        # monotone radial profile per direction (convex Phi under the
        # validated Hessian bounds)
        n_r = 1200
        rs = np.linspace(0.0, r_max, n_r)
        pts = self.center[None, None, :] + rs[None, :, None] * dirs[:, None, :]
        self._g = phi(pts)                      # (n_dirs, n_r)
        if np.any(np.diff(self._g, axis=1) <= 0):
            # fall back: clip to the monotone envelope (tiny non-monotonicity
            # from flat tails); genuine multi-well profiles are rejected
            mono = np.maximum.accumulate(self._g, axis=1)
            if np.max(mono - self._g) > 1e-6 * (1 + np.max(np.abs(self._g))):
                raise QuadratureFail("radial profile of Phi is not monotone; "
                                     "model violates the convexity assumptions")
            self._g = mono
        self._rs = rs
        self.theta_max = float(np.min(self._g[:, -1]))
        self._phi = phi
        u_max = math.sqrt(max(self.theta_max - self.theta_min, 1e-12))
        self.u_nodes = np.linspace(0.0, u_max, n_u)
        self.theta_nodes = self.theta_min + self.u_nodes**2
        dens = self._density(self.theta_nodes[1:])
        self.values = np.concatenate([[0.0], dens])
        self._spline_u = CubicSpline(self.u_nodes, self.values)

    def _roots(self, thetas: np.ndarray):
        """Radial roots r(theta, dir) and |d_r Phi| there, by table + Newton polish."""
        g, rs = self._g, self._rs
        n_dirs = g.shape[0]
        th = np.asarray(thetas, float)
        idx = np.empty((th.size, n_dirs), dtype=int)
        for i in range(n_dirs):
            idx[:, i] = np.searchsorted(g[i], th)
        valid = (idx > 0) & (idx < g.shape[1])
        idx = np.clip(idx, 1, g.shape[1] - 1)
        g_lo = np.take_along_axis(g, idx.T - 1, axis=1).T
        g_hi = np.take_along_axis(g, idx.T, axis=1).T
        r_lo = rs[idx - 1]
        r_hi = rs[idx]
        frac = np.where(g_hi > g_lo, (th[:, None] - g_lo) / (g_hi - g_lo + 1e-300), 0.0)
        r = r_lo + frac * (r_hi - r_lo)
        # one Newton step on the exact profile
        pts = self.center[None, None, :] + r[:, :, None] * self.dirs[None, :, :]
        f = self._phi(pts) - th[:, None]
        h = 1e-6
        pts_h = pts + h * self.dirs[None, :, :]
        dg = (self._phi(pts_h) - (f + th[:, None])) / h
        dg = np.where(np.abs(dg) < 1e-12, 1e-12, dg)
        r = r - f / dg
        r = np.clip(r, 0.0, rs[-1])
        pts = self.center[None, None, :] + r[:, :, None] * self.dirs[None, :, :]
        pts_h = pts + h * self.dirs[None, :, :]
        dg = (self._phi(pts_h) - self._phi(pts)) / h
        return r, np.abs(dg), valid, pts

    def _density(self, thetas: np.ndarray) -> np.ndarray:
        r, dg, valid, pts = self._roots(thetas)
        m = self.weight(pts, self.sigma)
        contrib = np.where(valid, m * r ** (self.model.d - 1) / np.maximum(dg, 1e-12), 0.0)
        return (contrib @ self.w) / norm_const(self.model.d)

    def __call__(self, theta) -> np.ndarray:
        th = np.atleast_1d(np.asarray(theta, float))
        u2 = th - self.theta_min
        out = np.zeros_like(th)
        inside = (u2 > 0) & (th <= self.theta_max)
        out[inside] = self._spline_u(np.sqrt(u2[inside]))
        out = np.maximum(out, 0.0)
        return out if np.ndim(theta) else float(out[0])

    def total(self) -> float:
        """int M(k, sigma) dk = int D dtheta (via the u substitution)."""
        integrand = 2 * self.u_nodes * self.values
        return float(np.trapezoid(integrand, self.u_nodes))

    @property
    def u_support(self) -> float:
        """Largest u carrying mass above 1e-9 of the peak (for tail truncation)."""
        peak = float(np.max(self.values))
        if peak <= 0:
            return 0.0
        alive = np.nonzero(self.values >= 1e-9 * peak)[0]
        u = self.u_nodes[alive[-1]] if alive.size else 0.0
        return float(min(u * 1.1 + 0.2, self.u_nodes[-1]))


# ---------------------------------------------------------------------------
# Theta(s, p, Omega)
# ---------------------------------------------------------------------------

class ThetaEvaluator:
    """Oscillatory evaluator for Theta(s, p, Omega) built on the shell densities."""

    def __init__(self, model: Model, p, *, n_dirs: int = 1800, n_u: int = 400):
        self.model = model
        self.p = np.asarray(p, float)
        self.shells = {s: EnergyShellDensity(model, p, s, n_dirs=n_dirs, n_u=n_u)
                       for s in (+1, -1)}

    def _branch(self, shell: EnergyShellDensity, s: float, tol: float,
                max_nodes: int = 2_000_000) -> complex:
        """int exp(-i s theta) D(theta) dtheta with adaptive Simpson refinement."""
        u_max = shell.u_support
        if u_max <= 0:
            return 0.0 + 0.0j
        # resolve the chirp phase s*u^2: ~10 points per period at the fast end
        n = int(max(512, 4.0 * abs(s) * u_max**2))
        n = min(n, max_nodes)
        prev = None
        while True:
            n_nodes = n + 1 if n % 2 == 0 else n + 2
            u = np.linspace(0.0, u_max, n_nodes)
            f = 2 * u * shell._spline_u(u) * np.exp(-1j * s * (shell.theta_min + u**2))
            w = np.ones(n_nodes)
            w[1:-1:2] = 4.0
            w[2:-2:2] = 2.0
            val = complex(np.sum(w * f) * (u[1] - u[0]) / 3.0)
            if prev is not None and abs(val - prev) <= tol * (abs(val) + 1e-12) + 1e-14:
                return val
            if n_nodes >= max_nodes:
                raise QuadratureFail(
                    f"Theta quadrature stalled at {n_nodes} nodes (s = {s:g})")
            prev = val
            n *= 2

    def __call__(self, s: float, Omega: float = 0.0, tol: float = 1e-7) -> complex:
        out = 0.0 + 0.0j
        for sigma, shell in self.shells.items():
            out += self._branch(shell, s, tol)
        return out * np.exp(-1j * s * Omega)


def theta_fn(model: Model, s: float, p, Omega: float = 0.0, *,
             tol: float = 1e-7, evaluator: ThetaEvaluator | None = None) -> complex:
    """Theta(s, p, Omega) = sum_sigma int exp(-is[Phi_sigma + Omega]) M dk."""
    ev = evaluator or ThetaEvaluator(model, p)
    return ev(s, Omega, tol=tol)


# ---------------------------------------------------------------------------
# Upsilon_eta(alpha, p): direct route, time route, boundary value
# ---------------------------------------------------------------------------

def _upsilon_direct_branch(shell: EnergyShellDensity, eta: float, alpha: float,
                           resolution: float) -> complex:
    """Direct momentum quadrature of int M / (alpha - Phi + i eta) dk.

    Radial Gauss-Legendre panels per direction, refined to `resolution` around
    the resonant radii, evaluated on the exact integrand (no shell-density
    shortcut): this is the reference route.
    """
    model = shell.model
    d = model.d
    dirs, w = shell.dirs, shell.w
    r_max = shell._rs[-1]
    # resonance zone from the monotone radial table
    g, rs = shell._g, shell._rs
    crosses = (g[:, :-1] <= alpha) & (g[:, 1:] > alpha)
    if crosses.any():
        i_dir, i_r = np.nonzero(crosses)
        r_lo = max(float(rs[i_r.min()]) - 3 * eta, 0.0)
        r_hi = min(float(rs[i_r.max() + 1]) + 3 * eta, r_max)
    else:
        r_lo = r_hi = None
    edges = list(np.linspace(0.0, r_max, 25))
    if r_lo is not None:
        zone = np.arange(r_lo, r_hi + resolution, resolution)
        edges = sorted(set(e for e in edges if e < r_lo - 1e-12 or e > r_hi + 1e-12)
                       | set(zone.tolist()))
    edges = np.asarray(edges)
    nodes, weights = np.polynomial.legendre.leggauss(8)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1:] - edges[:-1])
    r_nodes = mid[:, None] + half[:, None] * nodes[None, :]      # (P, 8)
    r_w = half[:, None] * weights[None, :]
    pts = (shell.center[None, None, None, :]
           + r_nodes[None, :, :, None] * dirs[:, None, None, :])  # (D, P, 8, d)
    phi = shell._phi(pts)
    m = shell.weight(pts, shell.sigma)
    integrand = m * r_nodes[None, :, :] ** (d - 1) / (alpha - phi + 1j * eta)
    radial = np.sum(integrand * r_w[None, :, :], axis=(1, 2))
    return complex((radial @ w) / norm_const(d))


def upsilon_direct(model: Model, eta: float, alpha: float, p, *,
                   shells: dict | None = None, tol: float = 1e-5) -> complex:
    """Direct evaluation of Upsilon_eta(alpha, p) with a refinement check."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    shells = shells or {s: EnergyShellDensity(model, p, s) for s in (+1, -1)}
    out = 0.0 + 0.0j
    for sigma, shell in shells.items():
        v1 = _upsilon_direct_branch(shell, eta, alpha, resolution=eta / 2)
        v2 = _upsilon_direct_branch(shell, eta, alpha, resolution=eta / 4)
        if abs(v1 - v2) > 20 * tol * (abs(v2) + 1e-9):
            v3 = _upsilon_direct_branch(shell, eta, alpha, resolution=eta / 8)
            if abs(v2 - v3) > 20 * tol * (abs(v3) + 1e-9):
                raise QuadratureFail("direct resolvent quadrature did not settle")
            v2 = v3
        out += v2
    return out


def upsilon_time_route(model: Model, eta: float, alpha: float, p, *,
                       theta_ev: ThetaEvaluator | None = None,
                       tail_tol: float = 1e-8) -> complex:
    """-i int_0^inf exp(is(alpha + i eta)) Theta(s, p, 0) ds by composite Simpson.

    (The half-line identity is 1/z = -i int_0^inf exp(isz) ds for Im z > 0;
    with z = alpha - Phi + i eta this reconstructs the resolvent from Theta.)
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    ev = theta_ev or ThetaEvaluator(model, p)
    th_min = min(sh.theta_min for sh in ev.shells.values())
    th_cut = max(sh.theta_min + sh.u_support**2 for sh in ev.shells.values())
    f_max = max(abs(alpha - th_min), abs(alpha - th_cut)) + eta + 1.0
    s_max = -math.log(tail_tol) / eta
    ds = 0.35 / f_max
    n = int(s_max / ds)
    if n % 2 == 1:
        n += 1
    s_grid = np.linspace(0.0, s_max, n + 1)
    # Theta on the s grid, branch by branch, vectorized over s in chunks
    theta_vals = np.zeros(n + 1, dtype=complex)
    for sigma, shell in ev.shells.items():
        u_max = shell.u_support
        if u_max <= 0:
            continue
        n_u = int(max(1024, 4.0 * s_max * u_max**2))
        n_u = min(n_u, 400_000)
        u = np.linspace(0.0, u_max, n_u + (1 if n_u % 2 == 0 else 2))
        du = u[1] - u[0]
        wu = np.ones(u.size)
        wu[1:-1:2] = 4.0
        wu[2:-2:2] = 2.0
        base = 2 * u * shell._spline_u(u) * wu * (du / 3.0)
        chunk = max(1, int(4e7 // u.size))
        for lo in range(0, s_grid.size, chunk):
            ss = s_grid[lo:lo + chunk, None]
            phase = np.exp(-1j * ss * (shell.theta_min + u[None, :] ** 2))
            theta_vals[lo:lo + chunk] += phase @ base
    integrand = -1j * np.exp(1j * s_grid * (alpha + 1j * eta)) * theta_vals
    ws = np.ones(n + 1)
    ws[1:-1:2] = 4.0
    ws[2:-2:2] = 2.0
    return complex(np.sum(ws * integrand) * (s_grid[1] - s_grid[0]) / 3.0)


def upsilon(model: Model, eta: float, alpha: float, p, *,
            check_tol: float = 1e-3, shells: dict | None = None) -> complex:
    """Upsilon_eta(alpha, p), returning the direct value after the dual-route check.

    Raises RouteMismatch when the direct momentum quadrature and the time
    representation disagree beyond 10x the combined quadrature error budget.
    """
    shells = shells or {s: EnergyShellDensity(model, p, s) for s in (+1, -1)}
    direct = upsilon_direct(model, eta, alpha, p, shells=shells)
    ev = ThetaEvaluator.__new__(ThetaEvaluator)
    ev.model = model
    ev.p = np.asarray(p, float)
    ev.shells = shells
    timed = upsilon_time_route(model, eta, alpha, p, theta_ev=ev)
    budget = 10 * check_tol * (abs(direct) + abs(timed) + 1e-9)
    if abs(direct - timed) > budget:
        raise RouteMismatch(
            f"resolvent routes disagree: direct {direct:.6g}, time {timed:.6g}, "
            f"budget {budget:.2g}")
    return direct


def _aitken_limit(values, ratios_hint: float = 2.0):
    """Extrapolate v(eta), eta halving, assuming an eta^q error model."""
    v0, v1, v2 = values
    d0, d1 = v1 - v0, v2 - v1
    if abs(d1) < 1e-15 or abs(d0) <= abs(d1):
        return v2, abs(d1)
    rate = d0 / d1
    limit = v2 + d1 / (rate - 1.0)
    return limit, abs(d1 / (rate - 1.0))


@dataclass(frozen=True)
class BoundaryResolvent:
    value: complex
    im_surface: float
    im_extrapolated: float
    re_extrapolated: float
    im_rel_discrepancy: float
    etas: tuple


def upsilon_boundary(model: Model, alpha: float, p, *,
                     etas: tuple = (0.1, 0.05, 0.025),
                     shells: dict | None = None,
                     n_dirs: int = 3200) -> BoundaryResolvent:
    """Boundary value Upsilon_{0+}(alpha, p).

    Im part directly as -pi sum_sigma int M delta(alpha - Phi_sigma) dk via
    the co-area surface integral; Re part by eta -> 0 extrapolation of the
    direct route; Im cross-checked against its own eta extrapolation.
    """
    p = np.asarray(p, float)
    shells = shells or {s: EnergyShellDensity(model, p, s) for s in (+1, -1)}
    weight = VertexWeight(model)
    im_surface = 0.0
    for sigma in (+1, -1):
        phi = _phi_factory(model, p, sigma)
        psi = lambda k, _f=phi: _f(k) - alpha
        F = lambda k, _s=sigma: weight(k, _s)
        box = float(np.linalg.norm(p)) + 8.0
        res = surface_delta_integral(F, psi, box, model.d, method="radial",
                                     n_dirs=n_dirs,
                                     center=shells[sigma].center)
        im_surface -= math.pi * res.value
    vals = [upsilon_direct(model, eta, alpha, p, shells=shells)
            for eta in sorted(etas, reverse=True)]
    re_lim, _ = _aitken_limit([v.real for v in vals])
    im_lim, _ = _aitken_limit([v.imag for v in vals])
    scale = max(abs(im_surface), abs(im_lim), 1e-12)
    rel = abs(im_surface - im_lim) / scale
    return BoundaryResolvent(complex(re_lim, im_surface), im_surface, im_lim,
                             re_lim, rel, tuple(sorted(etas, reverse=True)))


def self_energy(model: Model, V, **kw) -> BoundaryResolvent:
    """Psi(V) = Upsilon_{0+}(e(V), V); -2 Im Psi(V) equals the total cross section."""
    V = np.asarray(V, float)
    alpha = float(np.asarray(model.e(V[None, :]))[0])
    return upsilon_boundary(model, alpha, V, **kw)


# ---------------------------------------------------------------------------
# Collision kernel: cross sections and post-collision sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CrossSection:
    total: float
    emission: float
    absorption: float


class CollisionKernel:
    """sigma(V, U) of the kinetic equation: emission/absorption on energy shells.

    Out of a state V the jump rate density over outgoing U is sigma(U, V);
    its branches live on e(U) = e(V) - omega (emission, weight N+1) and
    e(U) = e(V) + omega (absorption, weight N).  sigma0(V) integrates it.
    """

    def __init__(self, model: Model, *, shell_tol: float = SHELL_TOLERANCE,
                 table_vmax: float = 8.0, table_n: int = 257):
        self.model = model
        self.weight = VertexWeight(model)
        self.shell_tol = shell_tol
        self._fast = (model.names.get("electron") == "quadratic"
                      and model.omega_is_constant)
        self._omega0 = float(np.asarray(model.omega(np.zeros((1, model.d))))[0])
        self._table = None
        self._table_vmax = table_vmax
        self._table_n = table_n
        if self._fast and model.isotropic:
            self._build_table()

    # -- cross sections ----------------------------------------------------

    def cross_section(self, V) -> CrossSection:
        """Branch-resolved sigma0(V) from co-area surface integrals."""
        V = np.asarray(V, float)
        alpha = float(np.asarray(self.model.e(V[None, :]))[0])
        parts = {}
        for sigma in (+1, -1):
            phi = _phi_factory(self.model, V, sigma)
            psi = lambda k, _f=phi: _f(k) - alpha
            F = lambda k, _s=sigma: self.weight(k, _s)
            box = float(np.linalg.norm(V)) + 8.0
            res = surface_delta_integral(F, psi, box, self.model.d,
                                         method="radial", n_dirs=1800)
            parts[sigma] = 2 * math.pi * res.value
        return CrossSection(parts[+1] + parts[-1], parts[+1], parts[-1])

    def _fast_branch(self, speed: np.ndarray, sigma: int) -> np.ndarray:
        """Quadratic-e, constant-omega branch cross section as a function of |V|.

        2 pi (2 pi)^(-d/2) r^(d-2) int_{S^(d-1)} M(r u - V, sigma) dS(u),
        with r^2 = |V|^2 - 2 sigma omega; Gauss-Legendre in the polar angle.
        """
        model = self.model
        d = model.d
        speed = np.atleast_1d(np.asarray(speed, float))
        r2 = speed**2 - 2 * sigma * self._omega0
        out = np.zeros_like(speed)
        open_ch = r2 > 0
        if not np.any(open_ch):
            return out
        r = np.sqrt(r2[open_ch])
        v = speed[open_ch]
        nodes, wts = np.polynomial.legendre.leggauss(96)
        if d == 3:
            # k = r*u - V: |k|^2 = r^2 + v^2 - 2 r v t
            k2 = r[:, None]**2 + v[:, None]**2 - 2 * np.outer(r * v, nodes)
            kmag = np.sqrt(np.maximum(k2, 0.0))
            kvec = np.zeros(kmag.shape + (d,))
            kvec[..., 0] = kmag
            m = self.weight(kvec, sigma)
            ang = 2 * math.pi * np.sum(m * wts[None, :], axis=1)
        elif d == 1:
            ang = np.zeros_like(r)
            for t in (-1.0, 1.0):
                kvec = (r * t - v)[:, None]
                ang += self.weight(kvec, sigma)
        else:
            k2 = r[:, None]**2 + v[:, None]**2 - 2 * np.outer(r * v, nodes)
            kmag = np.sqrt(np.maximum(k2, 0.0))
            kvec = np.zeros(kmag.shape + (d,))
            kvec[..., 0] = kmag
            m = self.weight(kvec, sigma)
            st = np.sqrt(np.maximum(1 - nodes**2, 0.0))
            area_fac = (d - 1) * math.pi ** ((d - 1) / 2) / math.gamma((d - 1) / 2 + 1)
            ang = area_fac * np.sum(m * st[None, :] ** (d - 2) * wts[None, :], axis=1)
        out[open_ch] = 2 * math.pi * r ** (d - 2) * ang / norm_const(d)
        return out

    def _build_table(self):
        # emission opens only above |V| = sqrt(2 omega); its interpolant is
        # built on the open interval so the threshold is exact
        s_em = math.sqrt(2 * self._omega0) if self._omega0 > 0 else 0.0
        speeds_ab = np.linspace(0.0, self._table_vmax, self._table_n)
        speeds_em = np.linspace(s_em, self._table_vmax, self._table_n)
        em = self._fast_branch(speeds_em, +1)
        ab = self._fast_branch(speeds_ab, -1)
        self._table = {
            "threshold": s_em,
            "emission": PchipInterpolator(speeds_em, em),
            "absorption": PchipInterpolator(speeds_ab, ab),
        }

    def branch_rates(self, V) -> tuple:
        """(emission, absorption) rates out of V; fast table when available."""
        V = np.asarray(V, float)
        if self._table is not None:
            s = float(np.linalg.norm(V))
            if s <= self._table_vmax:
                em = 0.0 if s <= self._table["threshold"] \
                    else max(float(self._table["emission"](s)), 0.0)
                return em, max(float(self._table["absorption"](s)), 0.0)
            return (float(self._fast_branch(np.array([s]), +1)[0]),
                    float(self._fast_branch(np.array([s]), -1)[0]))
        cs = self.cross_section(V)
        return cs.emission, cs.absorption

    def sigma0(self, V) -> float:
        em, ab = self.branch_rates(V)
        return em + ab

    # -- post-collision sampling --------------------------------------------

    def sample_post_collision(self, V, rng: np.random.Generator) -> tuple:
        """Draw U with density sigma(U, V)/sigma0(V); returns (U, branch label).

        The branch is chosen proportionally to the branch cross sections; the
        outgoing momentum sits on the corresponding energy shell with surface
        density proportional to M / |grad Phi|.
        """
        V = np.asarray(V, float)
        em, ab = self.branch_rates(V)
        total = em + ab
        if total <= 0:
            raise NoOpenChannel(f"sigma0 = 0 at V = {V}")
        sigma = +1 if rng.random() * total < em else -1
        if self._fast:
            U = self._sample_fast(V, sigma, rng)
        else:
            U = self._sample_radial(V, sigma, rng)
        return U, ("emission" if sigma == +1 else "absorption")

    def _sample_fast(self, V, sigma, rng):
        """Exact shell sampling for quadratic e, constant omega.

        U = r*u with r fixed by energy conservation; the direction density is
        proportional to M(r u - V, sigma) with the Gaussian coupling, i.e.
        exp(2 r |V| cos angle) about V: inverse-CDF in the polar cosine.
        """
        d = self.model.d
        speed = float(np.linalg.norm(V))
        r2 = speed**2 - 2 * sigma * self._omega0
        if r2 <= 0:
            raise NoOpenChannel(f"branch sigma={sigma:+d} closed at V = {V}")
        r = math.sqrt(r2)
        if self.model.names.get("coupling") == "gaussian" and d == 3 and speed > 1e-12:
            a = 2 * r * speed
            u = rng.random()
            # cos(angle) from the density ~ exp(a t) on [-1, 1]
            if a < 1e-9:
                t = 2 * u - 1
            else:
                t = 1 + math.log(u + (1 - u) * math.exp(-2 * a)) / a
            phi_ang = 2 * math.pi * rng.random()
            e1 = V / speed
            tmp = np.zeros(d)
            tmp[np.argmin(np.abs(e1))] = 1.0
            e2 = np.cross(e1, tmp)
            e2 /= np.linalg.norm(e2)
            e3 = np.cross(e1, e2)
            st = math.sqrt(max(1 - t * t, 0.0))
            u_dir = t * e1 + st * (math.cos(phi_ang) * e2 + math.sin(phi_ang) * e3)
            U = r * u_dir
        else:
            # rejection against the direction maximum of M(r u - V, sigma)
            U = self._reject_directions(V, sigma, r, rng)
        self._check_shell(V, U, sigma)
        return U

    def _reject_directions(self, V, sigma, r, rng):
        d = self.model.d
        scan, _ = sphere_directions(d, 512)
        w_scan = self.weight(r * scan - V[None, :], sigma)
        w_max = float(np.max(w_scan)) * 1.5 + 1e-300
        for _ in range(100_000):
            u_dir = rng.normal(size=d)
            u_dir /= np.linalg.norm(u_dir)
            w = float(self.weight((r * u_dir - V)[None, :], sigma)[0])
            if w > w_max:
                raise RuntimeError("rejection envelope exceeded; increase the margin")
            if rng.random() * w_max < w:
                return r * u_dir
        raise NoOpenChannel(f"sampler starved on branch sigma={sigma:+d} at V = {V}")

    def _sample_radial(self, V, sigma, rng):
        """Generic shell sampler: uniform directions, radial root, M r^(d-1)/|Phi'| weight."""
        model = self.model
        d = model.d
        V = np.asarray(V, float)
        alpha = float(np.asarray(model.e(V[None, :]))[0])
        phi = _phi_factory(model, V, sigma)
        center = _center_of_phi(model, V, sigma)
        if float(phi(center[None, :])[0]) >= alpha:
            raise NoOpenChannel(f"branch sigma={sigma:+d} closed at V = {V}")
        r_max = float(np.linalg.norm(V)) + 8.0

        def radial_weight(u_dir):
            f = lambda r: float(phi((center + r * u_dir)[None, :])[0]) - alpha
            if f(r_max) < 0:
                return 0.0, 0.0
            root = optimize.brentq(f, 0.0, r_max, xtol=1e-12)
            h = 1e-6
            slope = abs(f(root + h) - f(root - h)) / (2 * h)
            m = float(self.weight((center + root * u_dir)[None, :], sigma)[0])
            return m * root ** (d - 1) / max(slope, 1e-12), root

        scan, _ = sphere_directions(d, 256)
        w_scan = [radial_weight(u)[0] for u in scan]
        w_max = max(w_scan) * 1.6 + 1e-300
        for _ in range(100_000):
            u_dir = rng.normal(size=d)
            u_dir /= np.linalg.norm(u_dir)
            w, root = radial_weight(u_dir)
            if w > w_max:
                raise RuntimeError("rejection envelope exceeded; increase the margin")
            if rng.random() * w_max < w:
                U = V + center + root * u_dir
                self._check_shell(V, U, sigma)
                return U
        raise NoOpenChannel(f"sampler starved on branch sigma={sigma:+d} at V = {V}")

    def sample_post_collision_slab(self, V, sigma: int, rng: np.random.Generator,
                                   h_shell: float | None = None, n_samples: int = 1,
                                   max_chunks: int = 4000, chunk: int = 65536):
        """Literal slab sampler: rejection from {|Phi - e(V)| <= h} weighted by M,
        then projection onto the shell along the radial direction.  Slow; kept
        as the cross-validation route for the production samplers.  Returns an
        (n_samples, d) array."""
        model = self.model
        d = model.d
        V = np.asarray(V, float)
        h_shell = h_shell or self.shell_tol
        alpha = float(np.asarray(model.e(V[None, :]))[0])
        phi = _phi_factory(model, V, sigma)
        center = _center_of_phi(model, V, sigma)
        box = float(np.linalg.norm(V)) + 7.0
        scan = rng.uniform(-box, box, size=(4096, d))
        m_max = float(np.max(self.weight(scan, sigma))) * 1.5 + 1e-300
        out = []
        for _ in range(max_chunks):
            k = rng.uniform(-box, box, size=(chunk, d))
            in_slab = np.abs(phi(k) - alpha) <= h_shell
            k = k[in_slab]
            if k.size:
                m = self.weight(k, sigma)
                if float(np.max(m)) > m_max:
                    raise RuntimeError("rejection envelope exceeded; increase the margin")
                k = k[rng.random(k.shape[0]) * m_max < m]
            for kk in k:
                u_dir = kk - center
                rr = np.linalg.norm(u_dir)
                if rr < 1e-12:
                    continue
                u_dir = u_dir / rr
                f = lambda r: float(phi((center + r * u_dir)[None, :])[0]) - alpha
                if f(0.0) * f(rr + 2.0) > 0:
                    continue
                root = optimize.brentq(f, 0.0, rr + 2.0, xtol=1e-12)
                U = V + center + root * u_dir
                self._check_shell(V, U, sigma)
                out.append(U)
                if len(out) == n_samples:
                    return np.array(out)
        raise NoOpenChannel(f"slab sampler starved on branch sigma={sigma:+d}")

    def _check_shell(self, V, U, sigma):
        eV = float(np.asarray(self.model.e(V[None, :]))[0])
        eU = float(np.asarray(self.model.e(U[None, :]))[0])
        om = float(np.asarray(self.model.omega((U - V)[None, :]))[0])
        if abs(eU - (eV - sigma * om)) > self.shell_tol:
            raise AssertionError(
                f"sampled momentum off shell: |e(U) - e(V) + sigma*omega| = "
                f"{abs(eU - (eV - sigma * om)):.2e}")

    def tabulate(self, speeds) -> list:
        """Rows (|V|, sigma0, emission, absorption) for export/plotting."""
        rows = []
        for s in np.atleast_1d(speeds):
            V = np.zeros(self.model.d)
            V[0] = s
            em, ab = self.branch_rates(V)
            rows.append((float(s), em + ab, em, ab))
        return rows


# ---------------------------------------------------------------------------
# Cached resolvent evaluator
# ---------------------------------------------------------------------------

class ResolventFunction:
    """Upsilon_eta on a quantized (alpha, p) grid with multilinear interpolation.

    Nodes are evaluated lazily with the direct route and cached; queries
    interpolate between the 2^(d+1) surrounding nodes.  The interpolation
    error budget is O(q^2) in the quantization steps, documented here rather
    than estimated per call.  eta defaults to 1/t when a horizon time t is
    given (the regularization convention used throughout).
    """

    def __init__(self, model: Model, eta: float | None = None,
                 t_horizon: float | None = None,
                 q_alpha: float = 0.05, q_p: float = 0.25):
        if eta is None:
            if t_horizon is None:
                raise ValueError("provide eta or t_horizon (eta = 1/t)")
            eta = 1.0 / t_horizon
        self.model = model
        self.eta = float(eta)
        self.q_alpha = q_alpha
        self.q_p = q_p
        self._cache: dict = {}
        self._shell_cache: dict = {}

    def _node(self, ia: int, ip: tuple) -> complex:
        key = (ia, ip)
        if key not in self._cache:
            p = np.array(ip, float) * self.q_p
            pk = tuple(ip)
            if pk not in self._shell_cache:
                self._shell_cache[pk] = {s: EnergyShellDensity(self.model, p, s)
                                         for s in (+1, -1)}
            self._cache[key] = upsilon_direct(self.model, self.eta,
                                              ia * self.q_alpha, p,
                                              shells=self._shell_cache[pk])
        return self._cache[key]

    def __call__(self, alpha: float, p) -> complex:
        p = np.asarray(p, float)
        fa = alpha / self.q_alpha
        fp = p / self.q_p
        ia0 = math.floor(fa)
        ip0 = np.floor(fp).astype(int)
        ta = fa - ia0
        tp = fp - ip0
        out = 0.0 + 0.0j
        for da in (0, 1):
            wa = (1 - ta) if da == 0 else ta
            if wa == 0:
                continue
            for corner in range(2 ** self.model.d):
                w = wa
                ip = []
                for axis in range(self.model.d):
                    bit = (corner >> axis) & 1
                    w *= (1 - tp[axis]) if bit == 0 else tp[axis]
                    ip.append(int(ip0[axis] + bit))
                if w == 0:
                    continue
                out += w * self._node(ia0 + da, tuple(ip))
        return out

    @property
    def cache_size(self) -> int:
        return len(self._cache)

    def measured_sup(self) -> float:
        return max((abs(v) for v in self._cache.values()), default=0.0)


# ---------------------------------------------------------------------------
# One-loop resummation identity
# ---------------------------------------------------------------------------

def resummation_partial_sums(alpha: float, e_p: float, Omega: float, eta: float,
                             lam2_psi: complex, m_max: int = 40):
    """Partial sums sum_{m<=M} R^(m+1) (lam^2 Psi)^m versus the shifted resolvent.

    Converges geometrically to 1/(alpha - e_p - Omega - lam^2 Psi + i eta)
    when |lam^2 Psi| < |alpha - e_p - Omega + i eta|.
    """
    R = 1.0 / (alpha - e_p - Omega + 1j * eta)
    closed = 1.0 / (alpha - e_p - Omega - lam2_psi + 1j * eta)
    partial = 0.0 + 0.0j
    rows = []
    term = R
    for m in range(m_max + 1):
        partial += term
        rows.append((m, partial, abs(partial - closed)))
        term *= R * lam2_psi
    return rows, closed, abs(R * lam2_psi)
