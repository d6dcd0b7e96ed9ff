"""Physical model: dispersions, coupling, bath parameters, and assumption validation.

A :class:`Model` bundles the electron dispersion e(k), the phonon dispersion
omega(k), the coupling Q(k) and the bath parameters (beta, mu) together with
the coupling constant lambda and the scaling parameter epsilon.  All momentum
functions are vectorized: they accept arrays of shape (..., d) and return
shape (...).

``validate_assumptions`` checks the standing regularity/decay assumptions on
a sampled grid by finite differences and reports the measured constants.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .errors import BathUnstable, ConfigError, GridTooCoarse

MomentumFn = Callable[[np.ndarray], np.ndarray]

# Default thresholds for the assumption checks.  The theory leaves the
# constants abstract, so they are config knobs.
DEFAULT_C3 = 0.2      # lower Hessian bound for k -> e(k+p) +/- omega(k)
DEFAULT_C4 = 50.0     # upper Hessian bound
DEFAULT_C6 = 0.1      # inf omega - mu/beta >= C6
DEFAULT_C1_CAP = 50.0  # cap on the measured derivative-growth constants
DEFAULT_KMAX = 6.0    # grid half-width; Gaussian coupling decay makes the
                      # exterior contribution < 1e-7 beyond |k| = 6


def _as_points(k: np.ndarray, d: int) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if k.shape[-1] != d:
        raise ValueError(f"expected last axis of size d={d}, got shape {k.shape}")
    return k


@dataclass(frozen=True)
class Model:
    """Electron-phonon model data.

    Momentum functions must be even; ``validate_assumptions`` checks this on
    sampled pairs.  ``omega_is_constant`` flags a k-independent phonon branch
    (the simpler combinatorial regime).  When ``weak_coupling_linkage`` is on,
    lambda**2 == epsilon is enforced.
    """

    d: int
    e: MomentumFn
    omega: MomentumFn
    coupling: MomentumFn
    beta: float
    mu: float = 0.0
    lam: float = 0.1
    eps: float = 0.01
    omega_is_constant: bool = False
    grad_e: MomentumFn | None = None
    weak_coupling_linkage: bool = True
    isotropic: bool = False
    names: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError("dimension must be >= 1")
        if self.beta <= 0:
            raise ConfigError("beta must be positive")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if not (0.0 < self.eps <= 1.0):
            raise ConfigError("epsilon must lie in (0, 1]")
        if self.weak_coupling_linkage and abs(self.lam**2 - self.eps) > 1e-12:
            raise ConfigError(
                f"weak-coupling linkage requires lambda^2 == epsilon, "
                f"got lambda^2={self.lam**2:g}, epsilon={self.eps:g}")

    @property
    def toy_dimension(self) -> bool:
        """True for d < 3 runs, which the theory does not cover (oracle-only)."""
        return self.d < 3

    def velocity(self, k: np.ndarray) -> np.ndarray:
        """grad e(k); analytic if registered, else central finite differences."""
        k = _as_points(k, self.d)
        if self.grad_e is not None:
            return self.grad_e(k)
        h = 1e-5
        out = np.empty_like(k)
        for i in range(self.d):
            dk = np.zeros(self.d)
            dk[i] = h
            out[..., i] = (self.e(k + dk) - self.e(k - dk)) / (2 * h)
        return out

    def with_coupling(self, coupling: MomentumFn, name: str | None = None) -> "Model":
        names = dict(self.names)
        if name is not None:
            names["coupling"] = name
        return replace(self, coupling=coupling, names=names)


def phonon_occupation(model: Model, k: np.ndarray) -> np.ndarray:
    """Expected phonon number N(k) = x/(1-x), x = exp(-beta*omega(k) + mu).

    Raises BathUnstable when beta*omega(k) - mu <= 0 at any sampled k.
    """
    k = _as_points(k, model.d)
    expo = model.beta * np.asarray(model.omega(k), dtype=float) - model.mu
    if np.any(expo <= 0):
        raise BathUnstable(
            f"beta*omega - mu <= 0 at sampled momentum (min value {np.min(expo):g})")
    x = np.exp(-expo)
    return x / (1.0 - x)


def phi(model: Model, p: np.ndarray, k: np.ndarray, sigma: int) -> np.ndarray:
    """Shifted shell function e(k+p) + sigma*omega(k), sigma in {+1, -1}."""
    if sigma not in (+1, -1):
        raise ValueError("sigma must be +1 or -1")
    p = np.asarray(p, dtype=float)
    k = _as_points(k, model.d)
    return model.e(k + p) + sigma * model.omega(k)


# ---------------------------------------------------------------------------
# Dispersion / coupling registry (used by the config file interface)
# ---------------------------------------------------------------------------

def _quadratic(k):
    return 0.5 * np.sum(np.asarray(k, float) ** 2, axis=-1)


def _grad_quadratic(k):
    return np.asarray(k, float).copy()


def make_electron_dispersion(name: str, params: dict | None = None):
    """Return (e, grad_e, isotropic) for a registered electron dispersion."""
    params = dict(params or {})
    if name == "quadratic":
        _reject_unknown(params, (), f"electron dispersion '{name}'")
        return _quadratic, _grad_quadratic, True
    if name == "quadratic_plus_eps_cos":
        amp = float(params.pop("amplitude", 0.1))
        _reject_unknown(params, (), f"electron dispersion '{name}'")

        def e(k, _a=amp):
            k = np.asarray(k, float)
            return 0.5 * np.sum(k**2, axis=-1) + _a * np.sum(np.cos(k), axis=-1)

        def grad(k, _a=amp):
            k = np.asarray(k, float)
            return k - _a * np.sin(k)

        return e, grad, False
    raise ConfigError(f"unknown electron dispersion '{name}'")


def make_phonon_dispersion(name: str, params: dict | None = None):
    """Return (omega, is_constant) for a registered phonon dispersion."""
    params = dict(params or {})
    if name == "constant_omega":
        w0 = float(params.pop("omega0", 1.0))
        _reject_unknown(params, (), f"phonon dispersion '{name}'")

        def omega(k, _w=w0):
            k = np.asarray(k, float)
            return np.full(k.shape[:-1], _w)

        return omega, True
    if name == "acoustic_soft":
        w0 = float(params.pop("omega0", 1.0))
        soft = float(params.pop("softness", 0.05))
        _reject_unknown(params, (), f"phonon dispersion '{name}'")

        def omega(k, _w=w0, _s=soft):
            k = np.asarray(k, float)
            return _w * np.sqrt(1.0 + _s * np.sum(k**2, axis=-1))

        return omega, False
    raise ConfigError(f"unknown phonon dispersion '{name}'")


def make_coupling(name: str, params: dict | None = None):
    params = dict(params or {})
    if name == "gaussian":
        amp = float(params.pop("amplitude", 1.0))
        _reject_unknown(params, (), f"coupling '{name}'")

        def q(k, _a=amp):
            k = np.asarray(k, float)
            return _a * np.exp(-0.5 * np.sum(k**2, axis=-1))

        return q
    if name == "constant":
        amp = float(params.pop("amplitude", 1.0))
        _reject_unknown(params, (), f"coupling '{name}'")

        def q(k, _a=amp):
            k = np.asarray(k, float)
            return np.full(k.shape[:-1], _a)

        return q
    if name == "zero":
        _reject_unknown(params, (), f"coupling '{name}'")

        def q(k):
            k = np.asarray(k, float)
            return np.zeros(k.shape[:-1])

        return q
    raise ConfigError(f"unknown coupling '{name}'")


def _reject_unknown(params: dict, allowed: Sequence[str], where: str):
    for key in params:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in {where}")


def default_model(d: int = 3, beta: float = 1.0, mu: float = 0.0,
                  eps: float = 0.01, omega0: float = 1.0,
                  coupling_amplitude: float = 1.0) -> Model:
    """Primary example: e = |k|^2/2, constant omega, Gaussian coupling."""
    e, grad, _ = make_electron_dispersion("quadratic")
    omega, const = make_phonon_dispersion("constant_omega", {"omega0": omega0})
    q = make_coupling("gaussian", {"amplitude": coupling_amplitude})
    return Model(d=d, e=e, omega=omega, coupling=q, beta=beta, mu=mu,
                 lam=math.sqrt(eps), eps=eps, omega_is_constant=const,
                 grad_e=grad, isotropic=True,
                 names={"electron": "quadratic", "phonon": "constant_omega",
                        "coupling": "gaussian", "omega0": omega0,
                        "coupling_amplitude": coupling_amplitude})


def model_from_config(cfg: dict) -> Model:
    """Build a model from a config mapping; unknown keys are rejected."""
    cfg = dict(cfg)
    d = int(cfg.pop("dimension", 3))
    beta = float(cfg.pop("beta", 1.0))
    mu = float(cfg.pop("mu", 0.0))
    eps = float(cfg.pop("epsilon", 0.01))
    lam = cfg.pop("lambda", None)
    linkage = bool(cfg.pop("weak_coupling_linkage", lam is None))
    e_name = cfg.pop("electron_dispersion", "quadratic")
    e_params = cfg.pop("electron_params", {})
    w_name = cfg.pop("phonon_dispersion", "constant_omega")
    w_params = cfg.pop("phonon_params", {})
    q_name = cfg.pop("coupling", "gaussian")
    q_params = cfg.pop("coupling_params", {})
    _reject_unknown(cfg, (), "model config")

    e, grad, iso_e = make_electron_dispersion(e_name, e_params)
    omega, const = make_phonon_dispersion(w_name, w_params)
    q = make_coupling(q_name, q_params)
    lam = math.sqrt(eps) if lam is None else float(lam)
    return Model(d=d, e=e, omega=omega, coupling=q, beta=beta, mu=mu,
                 lam=lam, eps=eps, omega_is_constant=const, grad_e=grad,
                 weak_coupling_linkage=linkage,
                 isotropic=iso_e and q_name in ("gaussian", "zero", "constant"),
                 names={"electron": e_name, "electron_params": dict(e_params),
                        "phonon": w_name, "phonon_params": dict(w_params),
                        "coupling": q_name, "coupling_params": dict(q_params)})


# ---------------------------------------------------------------------------
# Assumption validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Uniform box [-k_max, k_max]^d with n points per axis."""
    k_max: float = DEFAULT_KMAX
    n: int = 25

    def axes(self, d: int) -> np.ndarray:
        if self.n < 9:
            raise GridTooCoarse("need at least 9 points per axis for the stencils")
        return np.linspace(-self.k_max, self.k_max, self.n)

    def mesh(self, d: int) -> np.ndarray:
        ax = self.axes(d)
        grids = np.meshgrid(*([ax] * d), indexing="ij")
        return np.stack(grids, axis=-1)

    @property
    def spacing(self) -> float:
        return 2 * self.k_max / (self.n - 1)


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    measured: float
    threshold: float
    worst_point: tuple
    note: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed),
                "measured": float(self.measured),
                "threshold": float(self.threshold),
                "worst_point": [float(x) for x in self.worst_point],
                "note": self.note}


@dataclass
class AssumptionReport:
    """Outcome of validate_assumptions; every assumption appears exactly once."""
    checks: list
    derivative_order: int
    note: str = ""

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> AssumptionCheck:
        found = [c for c in self.checks if c.name == name]
        if len(found) != 1:
            raise KeyError(f"assumption '{name}' appears {len(found)} times")
        return found[0]

    def to_dict(self) -> dict:
        return {"passed": self.passed,
                "derivative_order": self.derivative_order,
                "note": self.note,
                "checks": [c.to_dict() for c in self.checks]}


def _axis_diff(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Central difference along one mesh axis; output shrinks by 2 on that axis."""
    sl_p = [slice(None)] * values.ndim
    sl_m = [slice(None)] * values.ndim
    sl_p[axis] = slice(2, None)
    sl_m[axis] = slice(None, -2)
    return (values[tuple(sl_p)] - values[tuple(sl_m)]) / (2 * h)


def _multi_derivative(values: np.ndarray, alpha: Sequence[int], h: float) -> np.ndarray:
    """Apply the mixed central-difference stencil for multi-index alpha."""
    out = values
    for axis, order in enumerate(alpha):
        for _ in range(order):
            out = _axis_diff(out, axis, h)
    return out


def _trim_to(values: np.ndarray, target_shape: tuple) -> np.ndarray:
    """Center-crop a mesh array to a common shape."""
    slices = []
    for cur, tgt in zip(values.shape, target_shape):
        lo = (cur - tgt) // 2
        slices.append(slice(lo, lo + tgt))
    return values[tuple(slices)]


def _angle_bracket(k_norm2: np.ndarray) -> np.ndarray:
    return np.sqrt(k_norm2 + 1.0)


def validate_assumptions(model: Model, grid: GridSpec | None = None,
                         c3: float = DEFAULT_C3, c4: float = DEFAULT_C4,
                         c6: float = DEFAULT_C6, c1_cap: float = DEFAULT_C1_CAP,
                         p_samples: np.ndarray | None = None,
                         seed: int = 0) -> AssumptionReport:
    """Check the standing assumptions on a uniform grid and report constants.

    Finite differences verify derivative growth up to order min(4, 2d) (higher
    orders are numerically unstable; the gap is recorded in the report note),
    coercivity of Phi_+- by boundary sampling, Hessian bounds via the smallest
    and largest eigenvalue of the finite-difference Hessian, decay of the
    coupling, the bath-stability condition, evenness of all model functions,
    and uniqueness of the critical point of k -> Phi_+-(p, k).
    """
    grid = grid or GridSpec()
    d = model.d
    mesh = grid.mesh(d)          # (n,)*d + (d,)
    h = grid.spacing
    flat = mesh.reshape(-1, d)
    rng = np.random.default_rng(seed)
    if p_samples is None:
        p_samples = np.vstack([np.zeros((1, d)),
                               rng.uniform(-2, 2, size=(2, d))])
    order = min(4, 2 * d)
    checks: list[AssumptionCheck] = []

    e_vals = model.e(mesh)
    w_vals = model.omega(mesh)
    q_vals = model.coupling(mesh)
    k2 = np.sum(mesh**2, axis=-1)

    # Evenness of e, omega, Q (and hence of the occupation).
    for name, vals in (("symmetry_e", e_vals), ("symmetry_omega", w_vals),
                       ("symmetry_Q", q_vals)):
        mirrored = vals[tuple(slice(None, None, -1) for _ in range(d))]
        defect = float(np.max(np.abs(vals - mirrored)))
        scale = float(np.max(np.abs(vals)) + 1.0)
        idx = np.unravel_index(np.argmax(np.abs(vals - mirrored)), vals.shape)
        checks.append(AssumptionCheck(name, defect <= 1e-10 * scale, defect,
                                      1e-10 * scale, tuple(mesh[idx])))

    # Derivative growth |D^l f| <= C (1 + <k>^{2-l}) for l <= order.
    for name, vals in (("derivative_growth_e", e_vals),
                       ("derivative_growth_omega", w_vals)):
        worst = 0.0
        worst_pt = (0.0,) * d
        for ell in range(order + 1):
            for alpha in _multi_indices(d, ell):
                dv = _multi_derivative(vals, alpha, h)
                kk = _trim_to(k2, dv.shape)
                ratio = np.abs(dv) / (1.0 + _angle_bracket(kk) ** (2 - ell))
                m = float(np.max(ratio))
                if m > worst:
                    worst = m
                    idx = np.unravel_index(np.argmax(ratio), ratio.shape)
                    worst_pt = tuple(_trim_to(mesh[..., i], dv.shape)[idx]
                                     for i in range(d))
        checks.append(AssumptionCheck(name, worst <= c1_cap, worst, c1_cap,
                                      worst_pt,
                                      note=f"orders 0..{order} via central differences"))

    # Coupling decay: max_l |D^l Q| <k>^{2d+12} must peak strictly inside the box.
    checks.append(_qdec_check(model, mesh, q_vals, k2, h, order, grid))

    # Coercivity and Hessian bounds of k -> Phi_+-(p, k).
    lim_ok, lim_meas, lim_pt = True, np.inf, (0.0,) * d
    hess_lo, hess_hi = np.inf, -np.inf
    hess_lo_pt = (0.0,) * d
    for p in p_samples:
        for sigma in (+1, -1):
            phi_vals = model.e(mesh + p) + sigma * w_vals
            # boundary sampling: minimum over the boundary shell must exceed
            # the interior minimum by a positive margin
            interior = phi_vals[tuple(slice(1, -1) for _ in range(d))]
            bmask = np.ones(phi_vals.shape, bool)
            bmask[tuple(slice(1, -1) for _ in range(d))] = False
            margin = float(np.min(phi_vals[bmask]) - np.min(interior))
            if margin < lim_meas:
                lim_meas = margin
                lim_pt = tuple(p)
            if margin <= 0:
                lim_ok = False
            lo, hi, pt = _hessian_extremes(phi_vals, mesh, h)
            if lo < hess_lo:
                hess_lo, hess_lo_pt = lo, pt
            hess_hi = max(hess_hi, hi)
    checks.append(AssumptionCheck("phi_coercive", lim_ok, lim_meas, 0.0, lim_pt,
                                  note="boundary minimum minus interior minimum"))
    checks.append(AssumptionCheck("hessian_phi_lower", hess_lo >= c3, hess_lo,
                                  c3, hess_lo_pt))
    checks.append(AssumptionCheck("hessian_phi_upper", hess_hi <= c4, hess_hi,
                                  c4, hess_lo_pt))

    # Bath stability (trace-class condition).
    expo = model.omega(flat) - model.mu / model.beta
    i_min = int(np.argmin(expo))
    checks.append(AssumptionCheck("bath_stable", float(expo[i_min]) >= c6,
                                  float(expo[i_min]), c6, tuple(flat[i_min])))

    # Unique critical point of k -> Phi_+-(p, k) on the grid.
    crit_ok, n_crit = True, 1
    for p in p_samples[:1]:
        for sigma in (+1, -1):
            phi_vals = model.e(mesh + p) + sigma * w_vals
            n_crit = _count_critical_clusters(phi_vals, h)
            if n_crit != 1:
                crit_ok = False
    checks.append(AssumptionCheck("single_critical_point", crit_ok,
                                  float(n_crit), 1.0, tuple(p_samples[0]),
                                  note="clusters of sign changes of the FD gradient"))

    note = (f"derivative checks limited to order {order}"
            + (" (below the nominal 2d: higher finite-difference orders are "
               "numerically unstable)" if order < 2 * d else ""))
    if model.toy_dimension:
        note += "; d < 3 is outside the theory (toy/oracle-only run)"
    return AssumptionReport(checks=checks, derivative_order=order, note=note)


def _multi_indices(d: int, ell: int):
    """All multi-indices alpha with |alpha| = ell."""
    if d == 1:
        yield (ell,)
        return
    for head in range(ell + 1):
        for rest in _multi_indices(d - 1, ell - head):
            yield (head,) + rest


def _qdec_check(model, mesh, q_vals, k2, h, order, grid) -> AssumptionCheck:
    d = model.d
    weight = _angle_bracket(k2) ** (2 * d + 12)
    worst_envelope = None
    for ell in range(order + 1):
        for alpha in _multi_indices(d, ell):
            dv = np.abs(_multi_derivative(q_vals, alpha, h))
            w = _trim_to(weight, dv.shape)
            prod = dv * w
            prod = _pad_to(prod, q_vals.shape)
            worst_envelope = prod if worst_envelope is None else np.maximum(worst_envelope, prod)
    radius = np.sqrt(k2)
    # decay holds when the weighted envelope peaks strictly inside the box
    r_edges = np.linspace(0, float(np.max(radius)) * (1 + 1e-12), 9)
    shell_max = []
    for lo, hi in zip(r_edges[:-1], r_edges[1:]):
        mask = (radius >= lo) & (radius < hi)
        shell_max.append(float(worst_envelope[mask].max()) if mask.any() else 0.0)
    peak_shell = int(np.argmax(shell_max))
    interior_peak = peak_shell < len(shell_max) - 1
    outer_controlled = shell_max[-1] <= shell_max[peak_shell] * (1 + 1e-9)
    idx = np.unravel_index(np.argmax(worst_envelope), worst_envelope.shape)
    return AssumptionCheck("coupling_decay", interior_peak and outer_controlled,
                           float(np.max(worst_envelope)), float(shell_max[-1]),
                           tuple(mesh[idx]),
                           note="max_l |D^l Q| <k>^{2d+12}; requires an interior peak")


def _pad_to(values: np.ndarray, target_shape: tuple) -> np.ndarray:
    # zero padding: points lost to the stencil contribute nothing (the
    # order-0 term always covers the full grid)
    pads = []
    for cur, tgt in zip(values.shape, target_shape):
        lo = (tgt - cur) // 2
        pads.append((lo, tgt - cur - lo))
    return np.pad(values, pads, mode="constant")


def _hessian_extremes(phi_vals: np.ndarray, mesh: np.ndarray, h: float):
    """(min, max) eigenvalue of the FD Hessian over interior grid points."""
    d = mesh.shape[-1]
    hess = np.empty(phi_vals.shape + (d, d))
    for i in range(d):
        for j in range(i, d):
            if i == j:
                sl_p = [slice(None)] * d
                sl_m = [slice(None)] * d
                sl_0 = [slice(None)] * d
                dv = np.full(phi_vals.shape, np.nan)
                sl_p[i], sl_m[i], sl_0[i] = slice(2, None), slice(None, -2), slice(1, -1)
                dv[tuple(sl_0)] = (phi_vals[tuple(sl_p)] - 2 * phi_vals[tuple(sl_0)]
                                   + phi_vals[tuple(sl_m)]) / h**2
            else:
                dv = np.full(phi_vals.shape, np.nan)
                core = _axis_diff(_axis_diff(phi_vals, i, h), j, h)
                sl = [slice(None)] * d
                sl[i] = slice(1, -1)
                sl[j] = slice(1, -1)
                dv[tuple(sl)] = core
            hess[..., i, j] = dv
            hess[..., j, i] = dv
    interior = tuple(slice(1, -1) for _ in range(d))
    hmat = hess[interior].reshape(-1, d, d)
    eig = np.linalg.eigvalsh(hmat)
    lo_idx = int(np.argmin(eig[:, 0]))
    lo = float(eig[lo_idx, 0])
    hi = float(np.max(eig[:, -1]))
    pts = mesh[interior].reshape(-1, d)
    return lo, hi, tuple(pts[lo_idx])


def _count_critical_clusters(phi_vals: np.ndarray, h: float) -> int:
    """Cluster count of grid cells where every FD-gradient component changes sign."""
    d = phi_vals.ndim
    candidate = np.ones(tuple(s - 2 for s in phi_vals.shape), dtype=bool)
    for axis in range(d):
        g = _axis_diff(phi_vals, axis, h)
        g = _trim_to(g, candidate.shape)
        sl_p = [slice(None)] * d
        sl_m = [slice(None)] * d
        sl_p[axis] = slice(1, None)
        sl_m[axis] = slice(None, -1)
        # sign change along the axis within the one-cell neighborhood
        interiorized = np.zeros_like(candidate)
        gp = g[tuple(sl_p)]
        gm = g[tuple(sl_m)]
        change = (gp * gm <= 0)
        pad = [(0, 0)] * d
        pad[axis] = (0, 1)
        change = np.pad(change, pad, mode="edge")
        interiorized |= change
        candidate &= interiorized
    labeled, n = ndimage.label(candidate)
    return int(n)
