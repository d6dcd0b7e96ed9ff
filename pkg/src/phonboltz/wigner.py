"""Wigner transforms of density matrices on momentum grids.

Grid conventions follow the box normalization: momenta live on a uniform
grid of spacing Delta = sqrt(2 pi)/L and d-dimensional sums carry the
measure L^(-d) = Delta^d / (2 pi)^(d/2).  The Fourier form of the Wigner
distribution is W_hat(xi, v) = gamma_hat(v + xi/2, v - xi/2); on the grid v
lives on the half-spacing (doubled) grid and xi on the matching-parity
offsets, so v +/- xi/2 always lands on stored momenta.  The position form
uses the dual grid of 2n points spanning the periodic box.

Observables pair through <J, W^eps_gamma> = Tr(gamma O_eps) with
O_eps(u, v) = eps^(-d) J_hat((u - v)/eps, (u + v)/2); the identity is checked
on every pairing call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch, NormUnbounded
from .geometry import norm_const


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentumGrid:
    """Uniform momentum box: n points per axis, spacing sqrt(2 pi)/L."""

    d: int
    n: int
    delta: float

    def __post_init__(self):
        if self.n % 2 != 0:
            raise ValueError("use an even point count so 0 is on the grid")

    @property
    def L(self) -> float:
        return math.sqrt(2 * math.pi) / self.delta

    @property
    def measure(self) -> float:
        """Weight of one grid point in the normalized momentum integral."""
        return self.delta**self.d / norm_const(self.d)

    def axis(self) -> np.ndarray:
        return (np.arange(self.n) - self.n // 2) * self.delta

    def points(self) -> np.ndarray:
        ax = self.axis()
        mesh = np.meshgrid(*([ax] * self.d), indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.d)

    @property
    def size(self) -> int:
        return self.n**self.d

    def position_axis(self) -> np.ndarray:
        """Dual position grid: 2n points spanning the periodic box."""
        dx = math.pi / (self.n * self.delta)
        return (np.arange(2 * self.n) - self.n) * dx

    def half_axis(self) -> np.ndarray:
        """Half-spacing grid carrying the Wigner centers (2n - 1 points)."""
        return (np.arange(2 * self.n - 1) - self.n) * (self.delta / 2)


def _centered_dft(values: np.ndarray, h: float, d: int) -> np.ndarray:
    """DFT with symmetric index conventions: f_hat(p_k) = sum f(x_j) e^{-i p_k x_j} h^d/(2pi)^(d/2),
    x_j = (j - n/2) h, p_k = (k - n/2) 2 pi/(n h), per axis."""
    out = np.asarray(values, complex)
    n = out.shape[0]
    alt = (-1.0) ** np.arange(n)
    rot = np.exp(-1j * math.pi * n / 2)
    for axis in range(d):
        sh = [1] * out.ndim
        sh[axis] = n
        out = out * alt.reshape(sh)
        out = np.fft.fft(out, axis=axis)
        out = out * alt.reshape(sh) * rot
    return out * (h**d / norm_const(d))


# ---------------------------------------------------------------------------
# States
# ---------------------------------------------------------------------------

@dataclass
class DensityMatrixGrid:
    """Momentum-kernel density matrix gamma_hat on a flattened grid.

    Normalization: Tr gamma = L^(-d) sum_p gamma_hat(p, p) (= 1 for states).
    """

    grid: MomentumGrid
    gamma_hat: np.ndarray

    def __post_init__(self):
        self.gamma_hat = np.asarray(self.gamma_hat, complex)
        if self.gamma_hat.shape != (self.grid.size, self.grid.size):
            raise ValueError("gamma_hat must be (n^d, n^d)")

    @property
    def trace(self) -> float:
        return float(np.real(np.sum(np.diag(self.gamma_hat))) * self.grid.measure)

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.gamma_hat - self.gamma_hat.conj().T)))

    def min_eigenvalue(self) -> float:
        """Smallest eigenvalue in the normalized-trace scaling."""
        ev = np.linalg.eigvalsh(0.5 * (self.gamma_hat + self.gamma_hat.conj().T))
        return float(ev[0] * self.grid.measure)

    def validate(self, tol_herm: float = 1e-10, tol_psd: float = -1e-10,
                 tol_trace: float = 1e-8) -> None:
        if self.hermiticity_defect() > tol_herm * (1 + np.abs(self.gamma_hat).max()):
            raise ValueError("density matrix is not Hermitian")
        if self.min_eigenvalue() < tol_psd:
            raise ValueError("density matrix is not positive semidefinite")
        if abs(self.trace - 1.0) > tol_trace:
            raise ValueError(f"trace {self.trace:g} != 1")

    def normalized(self) -> "DensityMatrixGrid":
        return DensityMatrixGrid(self.grid, self.gamma_hat / self.trace)

    def entry(self, i, j) -> np.ndarray:
        flat_i = np.ravel_multi_index(i, (self.grid.n,) * self.grid.d)
        flat_j = np.ravel_multi_index(j, (self.grid.n,) * self.grid.d)
        return self.gamma_hat[flat_i, flat_j]

    def momentum_density(self) -> np.ndarray:
        """gamma_hat(p, p) on the grid (sums to Tr against the grid measure)."""
        return np.real(np.diag(self.gamma_hat)).reshape((self.grid.n,) * self.grid.d)

    def decay_moment(self, power: float | None = None) -> float:
        """int <p>^power gamma_hat(p, p) dp (default power 3d + 12)."""
        power = (3 * self.grid.d + 12) if power is None else power
        p = self.grid.points()
        br = np.sqrt(np.sum(p**2, axis=1) + 1.0) ** power
        return float(np.sum(br * np.real(np.diag(self.gamma_hat))) * self.grid.measure)

    @classmethod
    def from_momentum_wavefunction(cls, grid: MomentumGrid,
                                   psi_hat: np.ndarray) -> "DensityMatrixGrid":
        psi_hat = np.asarray(psi_hat, complex).reshape(-1)
        gamma = np.outer(psi_hat, psi_hat.conj())
        return cls(grid, gamma)

    @classmethod
    def random(cls, grid: MomentumGrid, rng: np.random.Generator,
               rank: int = 3, decay: float = 1.0) -> "DensityMatrixGrid":
        """Random PSD unit-trace state with Gaussian-localized columns."""
        p = grid.points()
        env = np.exp(-decay * np.sum(p**2, axis=1) / 2)
        cols = (rng.normal(size=(grid.size, rank))
                + 1j * rng.normal(size=(grid.size, rank))) * env[:, None]
        gamma = cols @ cols.conj().T
        out = cls(grid, gamma)
        return out.normalized()


@dataclass
class PureStateGrid:
    """Pure state stored as the momentum wavefunction (no dense matrix)."""

    grid: MomentumGrid
    psi_hat: np.ndarray

    def __post_init__(self):
        self.psi_hat = np.asarray(self.psi_hat, complex).reshape((self.grid.n,) * self.grid.d)

    @property
    def trace(self) -> float:
        return float(np.sum(np.abs(self.psi_hat) ** 2) * self.grid.measure)

    def normalized(self) -> "PureStateGrid":
        return PureStateGrid(self.grid, self.psi_hat / math.sqrt(self.trace))

    def entry(self, i, j) -> complex:
        return self.psi_hat[tuple(i)] * np.conj(self.psi_hat[tuple(j)])

    @classmethod
    def from_position_samples(cls, psi_x: np.ndarray, h: float) -> "PureStateGrid":
        psi_x = np.asarray(psi_x, complex)
        d = psi_x.ndim
        n = psi_x.shape[0]
        psi_hat = _centered_dft(psi_x, h, d)
        grid = MomentumGrid(d, n, 2 * math.pi / (n * h))
        return cls(grid, psi_hat)


# ---------------------------------------------------------------------------
# Wigner transform
# ---------------------------------------------------------------------------

@dataclass
class WignerGrid:
    """W(x, v) sampled on the dual position grid x and half-spacing v grid."""

    values: np.ndarray       # shape (2n,)*d + (2n-1,)*d, real
    x_axis: np.ndarray
    v_axis: np.ndarray
    d: int
    eps: float = 1.0

    @property
    def x_measure(self) -> float:
        dx = float(self.x_axis[1] - self.x_axis[0])
        return dx**self.d / norm_const(self.d)

    @property
    def v_measure(self) -> float:
        dv = float(self.v_axis[1] - self.v_axis[0])
        return dv**self.d / norm_const(self.d)

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.values) * self.x_measure * self.v_measure)

    def position_density(self) -> np.ndarray:
        axes = tuple(range(self.d, 2 * self.d))
        return np.sum(self.values, axis=axes) * self.v_measure

    def velocity_density(self) -> np.ndarray:
        axes = tuple(range(self.d))
        return np.sum(self.values, axis=axes) * self.x_measure


def fourier_entry(state, xi_steps, v_steps):
    """W_hat(xi, v) = gamma_hat(v + xi/2, v - xi/2) on the grid.

    ``v_steps`` indexes the half-spacing grid (integers, v = steps * Delta/2
    per axis) and ``xi_steps`` the Delta-spaced offsets; raises GridMismatch
    when v +/- xi/2 leaves the stored grid (parity or range).
    """
    grid = state.grid
    n = grid.n
    xi = np.atleast_1d(np.asarray(xi_steps, int))
    vs = np.atleast_1d(np.asarray(v_steps, int))
    i_idx, j_idx = [], []
    for axis in range(grid.d):
        s = vs[axis] + n  # center in doubled units, grid offset
        m = xi[axis]
        if (s + m) % 2 != 0:
            raise GridMismatch(f"xi/2 shift leaves the grid on axis {axis} "
                               f"(parity of v and xi differ)")
        i = (s + m) // 2
        j = (s - m) // 2
        if not (0 <= i < n and 0 <= j < n):
            raise GridMismatch(f"v +/- xi/2 outside the grid on axis {axis}")
        i_idx.append(i)
        j_idx.append(j)
    return state.entry(tuple(i_idx), tuple(j_idx))


def wigner_transform(state) -> WignerGrid:
    """Full Wigner grid from a density matrix (d <= 2) or pure state.

    The position transform is an explicit phase-matrix contraction per axis
    (transparent about the symmetric index conventions).
    """
    grid = state.grid
    d, n = grid.d, grid.n
    if isinstance(state, DensityMatrixGrid):
        if d > 2:
            raise GridMismatch("full Wigner grids are limited to d <= 2 for "
                               "dense density matrices; use wigner_value")
        gamma = state.gamma_hat.reshape((n,) * (2 * d))
    else:
        if d > 2:
            raise GridMismatch("use wigner_value for d > 2")
        psi = state.psi_hat
        gamma = np.multiply.outer(psi, psi.conj())  # axes already (i..., j...)
    # scatter gamma[i, j] into (center s = i+j, offset m = i-j)
    ns, nm = 2 * n - 1, 2 * n - 1
    big = np.zeros((ns,) * d + (nm,) * d, dtype=complex)
    idx = np.indices((n,) * (2 * d))
    i_ax = idx[:d]
    j_ax = idx[d:]
    coords = []
    for axis in range(d):
        coords.append(i_ax[axis] + j_ax[axis])
    for axis in range(d):
        coords.append(i_ax[axis] - j_ax[axis] + (n - 1))
    big[tuple(c.reshape(-1) for c in coords)] = gamma.reshape(-1)
    big = big.reshape((ns**d, nm,) + (nm,) * (d - 1))
    # contract offset axes against the position phase matrix
    x_ax = (np.arange(2 * n) - n) * (math.pi / (n * grid.delta))
    m_vals = (np.arange(nm) - (n - 1)) * grid.delta
    E = np.exp(1j * np.outer(x_ax, m_vals))       # (2n, 2n-1)
    out = big
    for axis in range(d):
        out = np.tensordot(out, E, axes=([1], [1]))  # consumes one m axis
    # out shape: (ns^d, x axes...); reorder to x..., center...
    out = out.reshape((ns,) * d + (2 * n,) * d)
    out = out.transpose(list(range(d, 2 * d)) + list(range(d)))
    vals = np.real(out) * (2 * grid.delta) ** d / norm_const(d)
    v_axis = (np.arange(ns) - n) * grid.delta / 2   # center s = i + j maps to (s - n) Delta/2
    return WignerGrid(vals, x_ax, v_axis, d)


def wigner_value(state, x, v_steps) -> float:
    """W(x, v) at one phase-space point; v on the half-spacing grid (steps)."""
    grid = state.grid
    d, n = grid.d, grid.n
    x = np.asarray(x, float)
    vs = np.atleast_1d(np.asarray(v_steps, int))
    parities = [(vs[a] + n) % 2 for a in range(d)]
    ranges = []
    for a in range(d):
        s = vs[a] + n
        m_lo = -(n - 1)
        ms = [m for m in range(m_lo, n) if (s + m) % 2 == 0
              and 0 <= (s + m) // 2 < n and 0 <= (s - m) // 2 < n]
        ranges.append(np.array(ms, int))
    mesh = np.meshgrid(*ranges, indexing="ij")
    m_flat = np.stack([mm.reshape(-1) for mm in mesh], axis=-1)
    i_idx = tuple(((vs[a] + n) + m_flat[:, a]) // 2 for a in range(d))
    j_idx = tuple(((vs[a] + n) - m_flat[:, a]) // 2 for a in range(d))
    if isinstance(state, DensityMatrixGrid):
        flat_i = np.ravel_multi_index(i_idx, (n,) * d)
        flat_j = np.ravel_multi_index(j_idx, (n,) * d)
        vals = state.gamma_hat[flat_i, flat_j]
    else:
        psi = state.psi_hat.reshape(-1)
        flat_i = np.ravel_multi_index(i_idx, (n,) * d)
        flat_j = np.ravel_multi_index(j_idx, (n,) * d)
        vals = psi[flat_i] * np.conj(psi[flat_j])
    phase = np.exp(1j * (m_flat * grid.delta) @ x)
    return float(np.real(np.sum(vals * phase)) * (2 * grid.delta) ** d / norm_const(d))


def rescale(w: WignerGrid, eps: float) -> WignerGrid:
    """Macroscopic rescaling W^eps(X, V) = eps^(-d) W(X/eps, V)."""
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    return WignerGrid(w.values * eps ** (-w.d), w.x_axis * eps, w.v_axis,
                      w.d, eps=w.eps * eps)


# ---------------------------------------------------------------------------
# Observables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseSpaceObservable:
    """J(X, V) = P(V) g_a(X - x0) g_b(V - v0): Gaussian x (Gaussian-polynomial).

    The X-Fourier transform is analytic: J_hat(xi, v) = a^d exp(-i xi.x0)
    exp(-a^2 |xi|^2/2) P(v) g_b(v - v0) in the normalized convention.
    ``v_poly`` maps V (..., d) to a bounded polynomial factor.
    """

    d: int
    a: float = 2.0
    b: float = 1.5
    x0: tuple = None
    v0: tuple = None
    v_poly: object = None

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(self.x0 or (0.0,) * self.d))
        object.__setattr__(self, "v0", tuple(self.v0 or (0.0,) * self.d))

    def _vfactor(self, V) -> np.ndarray:
        V = np.asarray(V, float)
        gb = np.exp(-np.sum((V - np.asarray(self.v0)) ** 2, axis=-1) / (2 * self.b**2))
        if self.v_poly is not None:
            gb = gb * self.v_poly(V)
        return gb

    def __call__(self, X, V) -> np.ndarray:
        X = np.asarray(X, float)
        ga = np.exp(-np.sum((X - np.asarray(self.x0)) ** 2, axis=-1) / (2 * self.a**2))
        return ga * self._vfactor(V)

    def fourier(self, xi, V) -> np.ndarray:
        """J_hat(xi, v): Fourier transform in the first variable (normalized)."""
        xi = np.asarray(xi, float)
        quad = np.sum(xi**2, axis=-1) * self.a**2 / 2
        phase = xi @ np.asarray(self.x0)
        return self.a**self.d * np.exp(-quad - 1j * phase) * self._vfactor(V)

    def jeps_norm(self, v_samples=None) -> float:
        """||J|| = sup_eps int sup_v |J_hat_eps(xi, v)| dxi (eps-independent here)."""
        sup_v = 1.0
        if self.v_poly is not None:
            if v_samples is None:
                ax = np.linspace(-8, 8, 41)
                mesh = np.meshgrid(*([ax] * self.d), indexing="ij")
                v_samples = np.stack(mesh, axis=-1).reshape(-1, self.d)
            sup_v = float(np.max(np.abs(self._vfactor(v_samples))))
        # int a^d exp(-a^2 xi^2/2) dxi_norm = 1
        return sup_v


def observable_kernel(J: PhaseSpaceObservable, eps: float, grid: MomentumGrid,
                      norm_cap: float = 1e6, sampled: bool = False) -> np.ndarray:
    """O_eps(u, v) = J_hat_eps(u - v, (u + v)/2) on the grid.

    ``sampled=False`` uses the analytic continuum transform
    eps^(-d) J_hat((u-v)/eps, (u+v)/2).  ``sampled=True`` replaces the
    X-transform by the discrete one over the dual position grid, which makes
    Tr(gamma O_eps) agree with the grid pairing <J, W^eps> identically (the
    continuum and sampled kernels differ by Poisson-summation aliasing, small
    for observables supported well inside the box).
    """
    if J.jeps_norm() > norm_cap:
        raise NormUnbounded(f"observable norm exceeds cap {norm_cap:g}")
    pts = grid.points()
    u = pts[:, None, :]
    v = pts[None, :, :]
    if not sampled:
        return eps ** (-J.d) * J.fourier((u - v) / eps, (u + v) / 2)
    # per-axis discrete X-transform of the Gaussian factor at offsets m*Delta
    x_ax = grid.position_axis()
    dx = float(x_ax[1] - x_ax[0])
    m_vals = np.arange(-(grid.n - 1), grid.n) * grid.delta
    ghat_axes = []
    for axis in range(grid.d):
        g = np.exp(-((eps * x_ax - J.x0[axis]) ** 2) / (2 * J.a**2))
        ghat_axes.append(np.exp(-1j * np.outer(m_vals, x_ax)) @ g
                         * dx / math.sqrt(2 * math.pi))
    idx = np.round((u - v) / grid.delta).astype(int) + (grid.n - 1)
    ker = np.ones(idx.shape[:2], dtype=complex)
    for axis in range(grid.d):
        ker = ker * ghat_axes[axis][idx[..., axis]]
    return ker * J._vfactor((u + v) / 2)


def operator_norm_bound_check(J: PhaseSpaceObservable, eps: float,
                              grid: MomentumGrid, iters: int = 60,
                              seed: int = 0) -> tuple:
    """Power iteration for ||O_eps O_eps*|| against the bound ||J||^2.

    Operator composition on the grid carries the measure L^(-d) per momentum
    integration.
    """
    O = observable_kernel(J, eps, grid) * grid.measure
    rng = np.random.default_rng(seed)
    x = rng.normal(size=grid.size) + 1j * rng.normal(size=grid.size)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = O @ (O.conj().T @ x)
        lam = float(np.linalg.norm(y))
        if lam == 0:
            break
        x = y / lam
    return lam, J.jeps_norm() ** 2


@dataclass(frozen=True)
class PairingResult:
    grid_value: float
    trace_value: float
    trace_value_analytic: float

    @property
    def diff(self) -> float:
        return abs(self.grid_value - self.trace_value)

    @property
    def aliasing(self) -> float:
        return abs(self.trace_value - self.trace_value_analytic)


def pair(J: PhaseSpaceObservable, w: WignerGrid) -> float:
    """<J, W> by direct phase-space quadrature on the Wigner grid."""
    X = w.x_axis
    V = w.v_axis
    xm = np.meshgrid(*([X] * w.d), indexing="ij")
    vm = np.meshgrid(*([V] * w.d), indexing="ij")
    Xp = np.stack(xm, axis=-1).reshape(-1, w.d)
    Vp = np.stack(vm, axis=-1).reshape(-1, w.d)
    jj = np.conj(J(Xp[:, None, :], Vp[None, :, :]))
    vals = w.values.reshape(Xp.shape[0], Vp.shape[0])
    return float(np.real(np.sum(jj * vals)) * w.x_measure * w.v_measure)


def pair_via_trace(J: PhaseSpaceObservable, state, eps: float,
                   sampled: bool = False) -> float:
    """<J, W^eps_gamma> = Tr(gamma O_eps) evaluated directly in momentum space."""
    grid = state.grid
    O = observable_kernel(J, eps, grid, sampled=sampled)
    if isinstance(state, DensityMatrixGrid):
        val = np.sum(state.gamma_hat * O.T)
    else:
        psi = state.psi_hat.reshape(-1)
        val = psi @ (O.T @ psi.conj())
    return float(np.real(val) * grid.measure**2)


def pair_checked(J: PhaseSpaceObservable, state, eps: float,
                 grid_tol: float = 1e-8) -> PairingResult:
    """Pairing with the Tr(gamma O_eps) identity asserted on every call.

    The check uses the grid-consistent kernel (exact identity up to floating
    point); the analytic-kernel value is also reported, differing by the
    aliasing of observables not supported inside the box.
    """
    w = rescale(wigner_transform(state), eps)
    gv = pair(J, w)
    tv = pair_via_trace(J, state, eps, sampled=True)
    tva = pair_via_trace(J, state, eps, sampled=False)
    res = PairingResult(gv, tv, tva)
    if res.diff > grid_tol * (1 + abs(tv)):
        raise AssertionError(
            f"<J, W^eps> = {gv:.10g} disagrees with Tr(gamma O_eps) = {tv:.10g}")
    return res


# ---------------------------------------------------------------------------
# WKB states
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WKBState:
    """psi_eps(x) = eps^(d/2) A(eps x) exp(i S(eps x)/eps) with smooth A, S."""

    amplitude: object
    phase: object
    eps: float

    def build(self, x_half: float, n: int) -> PureStateGrid:
        """Sample on n grid points covering [-x_half, x_half] (microscopic)."""
        h = 2 * x_half / n
        x = (np.arange(n) - n // 2) * h
        psi = self.eps ** 0.5 * np.asarray(self.amplitude(self.eps * x), complex) \
            * np.exp(1j * np.asarray(self.phase(self.eps * x), float) / self.eps)
        return PureStateGrid.from_position_samples(psi, h)


@dataclass
class WKBReport:
    eps_values: tuple
    pairings: tuple
    limit: float

    @property
    def defects(self) -> tuple:
        return tuple(abs(p - self.limit) for p in self.pairings)

    @property
    def monotone(self) -> bool:
        d = self.defects
        return all(d[i + 1] < d[i] for i in range(len(d) - 1))


def wkb_wigner_limit_check(amplitude, phase, grad_phase,
                           J: PhaseSpaceObservable,
                           eps_values=(0.2, 0.1, 0.05),
                           macro_half: float = 8.0, n: int = 4096) -> WKBReport:
    """Pairings <J, W^eps_(psi^eps)> against int J(X, grad S(X)) |A(X)|^2 dX.

    One-dimensional check: the limit is evaluated by quadrature on the
    macroscopic grid; defects should decrease as eps -> 0.
    """
    Xq = np.linspace(-macro_half, macro_half, 4001)
    dX = Xq[1] - Xq[0]
    A2 = np.abs(np.asarray(amplitude(Xq), complex)) ** 2
    JV = np.conj(J(Xq[:, None], np.asarray(grad_phase(Xq), float)[:, None]))
    limit = float(np.real(np.sum(JV * A2)) * dX / norm_const(1))
    pair_vals = []
    for eps in eps_values:
        state = WKBState(amplitude, phase, eps).build(macro_half / eps, n)
        pair_vals.append(pair_via_trace(J, state, eps))
    return WKBReport(tuple(eps_values), tuple(pair_vals), limit)
