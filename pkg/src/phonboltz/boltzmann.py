"""Kinetic Monte Carlo solver for the linear Boltzmann equation, with the
Dyson-series expansion as an independent oracle.

The jump process: a particle at (X, V) free-streams with velocity grad e(V),
waits an Exp(sigma0(V)) macroscopic time, then jumps V -> U with density
sigma(U, V)/sigma0(V).  This is the process generated by

    dF/dT + grad e(V). grad_X F = int [sigma(V,U) F(U) - sigma(U,V) F(V)] dU.

The n-th Dyson term integrates over a time simplex and a chain of n on-shell
jumps with damping exp(2 a_j Im Psi_j) = exp(-a_j sigma0(V_j)); sampling maps
every factor to one importance weight (simplex ~ Dirichlet, chain momenta via
the shell sampler with weight sigma0, damping as an explicit factor).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import SHELL_TOLERANCE
from .errors import NoOpenChannel
from .geometry import stream
from .kernels import CollisionKernel
from .model import Model


# ---------------------------------------------------------------------------
# Ensemble
# ---------------------------------------------------------------------------

@dataclass
class ParticleEnsemble:
    """Weighted phase-space particles (X, V, w) at a common macroscopic time."""

    X: np.ndarray
    V: np.ndarray
    w: np.ndarray
    time: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.X = np.asarray(self.X, float)
        self.V = np.asarray(self.V, float)
        self.w = np.asarray(self.w, float)
        if self.X.shape != self.V.shape or self.w.shape != self.X.shape[:1]:
            raise ValueError("inconsistent ensemble shapes")

    @property
    def size(self) -> int:
        return self.X.shape[0]

    @property
    def total_weight(self) -> float:
        return float(np.sum(self.w))

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.X.copy(), self.V.copy(), self.w.copy(),
                                self.time, self.seed)


def free_flight(model: Model, ens: ParticleEnsemble, dt: float) -> ParticleEnsemble:
    """Transport step X <- X + dt * grad e(V); V unchanged."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    out = ens.copy()
    out.X = out.X + dt * model.velocity(out.V)
    out.time = ens.time + dt
    return out


@dataclass
class JumpStats:
    jumps: np.ndarray            # per-particle jump count
    integrated_rate: np.ndarray  # per-particle int sigma0(V_s) ds

    @property
    def mean_jumps(self) -> float:
        return float(np.mean(self.jumps))

    @property
    def mean_integrated_rate(self) -> float:
        return float(np.mean(self.integrated_rate))


def _evolve_block(kernel, X, V, T, seed, offset, velocity):
    n = X.shape[0]
    jumps = np.zeros(n, dtype=np.int64)
    acc_rate = np.zeros(n)
    for i in range(n):
        rng = stream(seed, 1, offset + i)
        x = X[i].copy()
        v = V[i].copy()
        t = 0.0
        while True:
            em, ab = kernel.branch_rates(v)
            rate = em + ab
            if rate <= 0:
                x += (T - t) * velocity(v)
                break
            wait = rng.exponential(1.0 / rate)
            if t + wait >= T:
                x += (T - t) * velocity(v)
                acc_rate[i] += (T - t) * rate
                break
            x += wait * velocity(v)
            acc_rate[i] += wait * rate
            t += wait
            v, _ = kernel.sample_post_collision(v, rng)
            jumps[i] += 1
        X[i] = x
        V[i] = v
    return jumps, acc_rate


def evolve(kernel: CollisionKernel, ens: ParticleEnsemble, T: float,
           threads: int = 1, block: int = 4096):
    """Run the jump process for macroscopic time T.

    Particles evolve independently with counter-based per-particle streams, so
    the result is identical for any thread count.  Returns (ensemble, stats);
    weights and particle count are conserved exactly.
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    model = kernel.model
    velocity = lambda v: model.velocity(v[None, :])[0]
    out = ens.copy()
    n = out.size
    blocks = [(lo, min(lo + block, n)) for lo in range(0, n, block)]

    def work(b):
        lo, hi = b
        return _evolve_block(kernel, out.X[lo:hi], out.V[lo:hi], T,
                             ens.seed, lo, velocity)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]
    jumps = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0, int)
    rates = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0)
    out.time = ens.time + T
    return out, JumpStats(jumps, rates)


def pair_observable(J, ens: ParticleEnsemble) -> float:
    """Empirical pairing <J, F> = sum w J(X, V) / sum w."""
    vals = np.asarray(J(ens.X, ens.V), float)
    return float(np.sum(ens.w * vals) / np.sum(ens.w))


# ---------------------------------------------------------------------------
# Initial states and test observables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianState:
    """Product Gaussian phase-space density: X ~ N(x0, sx^2), V ~ N(v0, sv^2)."""

    d: int
    x0: tuple = None
    v0: tuple = None
    sx: float = 1.0
    sv: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(self.x0 or (0.0,) * self.d))
        object.__setattr__(self, "v0", tuple(self.v0 or (0.0,) * self.d))

    @classmethod
    def thermal(cls, model: Model, sx: float = 1.0) -> "GaussianState":
        """V-marginal exp(-beta e(V)) for the quadratic dispersion."""
        return cls(model.d, sx=sx, sv=1.0 / math.sqrt(model.beta))

    def sample(self, rng: np.random.Generator, n: int):
        X = np.asarray(self.x0) + self.sx * rng.normal(size=(n, self.d))
        V = np.asarray(self.v0) + self.sv * rng.normal(size=(n, self.d))
        return X, V

    def x_integral_against_gaussian(self, center: np.ndarray, width: float) -> np.ndarray:
        """int exp(-|X - center|^2 / (2 width^2)) rho_X(X) dX, closed form."""
        center = np.atleast_2d(center)
        s2 = self.sx**2 + width**2
        norm = (width**2 / s2) ** (self.d / 2)
        dist2 = np.sum((center - np.asarray(self.x0)) ** 2, axis=-1)
        return norm * np.exp(-dist2 / (2 * s2))


@dataclass(frozen=True)
class GaussObservable:
    """J(X, V) = exp(-|X-x0|^2/(2 a^2)) exp(-|V-v0|^2/(2 b^2)); sup |J| = 1."""

    d: int
    x0: tuple = None
    v0: tuple = None
    a: float = 2.0
    b: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(self.x0 or (0.0,) * self.d))
        object.__setattr__(self, "v0", tuple(self.v0 or (0.0,) * self.d))

    def __call__(self, X, V) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        V = np.atleast_2d(np.asarray(V, float))
        qx = np.sum((X - np.asarray(self.x0)) ** 2, axis=-1) / (2 * self.a**2)
        qv = np.sum((V - np.asarray(self.v0)) ** 2, axis=-1) / (2 * self.b**2)
        return np.exp(-qx - qv)

    def x_part(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        return np.exp(-np.sum((X - np.asarray(self.x0)) ** 2, axis=-1) / (2 * self.a**2))

    def v_part(self, V) -> np.ndarray:
        V = np.atleast_2d(np.asarray(V, float))
        return np.exp(-np.sum((V - np.asarray(self.v0)) ** 2, axis=-1) / (2 * self.b**2))


# ---------------------------------------------------------------------------
# Dyson-series terms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CollisionChain:
    """One sampled chain of the n-th Dyson term: simplex times, momenta, branches."""

    alphas: tuple    # n+1 nonnegative times summing to T
    momenta: tuple   # V_0 .. V_n (observation first, initial last)
    branches: tuple  # branch labels of the n jumps

    @property
    def order(self) -> int:
        return len(self.branches)

    def validate(self, model: Model, tol: float = SHELL_TOLERANCE) -> bool:
        """Consecutive momenta satisfy e(V_j) - e(V_j+1) + s_j+1 omega = 0."""
        Vs = [np.asarray(v, float) for v in self.momenta]
        for j, label in enumerate(self.branches):
            vj, vj1 = Vs[j], Vs[j + 1]
            sig = +1 if label == "emission" else -1
            e_j = float(np.asarray(model.e(vj[None, :]))[0])
            e_j1 = float(np.asarray(model.e(vj1[None, :]))[0])
            om = float(np.asarray(model.omega((vj - vj1)[None, :]))[0])
            if abs(e_j - e_j1 + sig * om) > tol:
                return False
        return True


@dataclass(frozen=True)
class MonteCarloValue:
    value: float
    stderr: float
    n_samples: int

    def __float__(self):
        return self.value


def dyson_term(kernel: CollisionKernel, n: int, T: float,
               initial: GaussianState, J: GaussObservable,
               n_samples: int = 20_000, seed: int = 0,
               keep_chains: int = 0):
    """Monte Carlo estimate of the n-th Dyson term of <J, F_T>.

    Sampling: (X0, V_n) ~ F0; alphas uniform on the simplex (Dirichlet);
    V_{j-1} drawn out of V_j by the shell sampler (importance weight
    sigma0(V_j) each); integrand J(X0 + sum a_j grad e(V_j), V_0) times the
    damping prod exp(-a_j sigma0(V_j)).  Chains hitting a closed channel
    contribute zero.
    """
    if n < 0:
        raise ValueError("order n must be >= 0")
    model = kernel.model
    rng = stream(seed, 2, n)
    X0, Vn = initial.sample(rng, n_samples)
    vals = np.zeros(n_samples)
    chains = []
    for i in range(n_samples):
        gam = rng.gamma(1.0, size=n + 1)
        alphas = T * gam / np.sum(gam)
        Vs = [Vn[i]]
        weight = 1.0
        branches = []
        dead = False
        for _ in range(n):
            v = Vs[-1]
            rate = kernel.sigma0(v)
            if rate <= 0:
                dead = True
                break
            try:
                u, br = kernel.sample_post_collision(v, rng)
            except NoOpenChannel:
                dead = True
                break
            weight *= rate
            branches.append(br)
            Vs.append(u)
        if dead:
            continue
        Vs = Vs[::-1]           # V_0 first (observation end)
        damp = 0.0
        drift = np.zeros(model.d)
        for j in range(n + 1):
            damp += alphas[j] * kernel.sigma0(Vs[j])
            drift += alphas[j] * model.velocity(Vs[j][None, :])[0]
        x_eval = X0[i] + drift
        vals[i] = weight * math.exp(-damp) * float(J(x_eval[None, :], Vs[0][None, :])[0])
        if keep_chains and len(chains) < keep_chains:
            chains.append(CollisionChain(tuple(alphas), tuple(map(tuple, Vs)),
                                         tuple(branches[::-1])))
    scale = T**n / math.factorial(n)
    vals *= scale
    est = MonteCarloValue(float(np.mean(vals)),
                          float(np.std(vals, ddof=1) / math.sqrt(n_samples)),
                          n_samples)
    return (est, chains) if keep_chains else est


def dyson_term_zero_oracle(kernel: CollisionKernel, T: float,
                           initial: GaussianState, J: GaussObservable,
                           n_v: int = 40, v_max: float = 5.0) -> float:
    """Quadrature oracle for the n = 0 term:
    int J(X, V) exp(-T sigma0(V)) F0(X - T grad e(V), V) dX dV.

    The X integral is a closed-form Gaussian convolution; the V integral is a
    tensor-grid quadrature (independent of the Monte Carlo path).
    """
    model = kernel.model
    d = model.d
    ax = np.linspace(-v_max, v_max, n_v)
    mesh = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
    dv = (ax[1] - ax[0]) ** d
    rho_v = (2 * math.pi * initial.sv**2) ** (-d / 2) * np.exp(
        -np.sum((mesh - np.asarray(initial.v0)) ** 2, axis=-1) / (2 * initial.sv**2))
    sig = np.array([kernel.sigma0(v) for v in mesh])
    centers = np.asarray(J.x0) - T * model.velocity(mesh)
    x_int = initial.x_integral_against_gaussian(centers, J.a)
    jv = J.v_part(mesh)
    return float(np.sum(jv * np.exp(-T * sig) * x_int * rho_v) * dv)


@dataclass(frozen=True)
class DysonComparison:
    kmc: MonteCarloValue
    terms: tuple
    partial_sum: float
    combined_stderr: float
    poisson_tail: float
    sigma0_max: float

    @property
    def discrepancy(self) -> float:
        return abs(self.kmc.value - self.partial_sum)

    @property
    def tolerance(self) -> float:
        return 3.0 * self.combined_stderr + self.poisson_tail

    @property
    def within_tolerance(self) -> bool:
        return self.discrepancy <= self.tolerance


def dyson_vs_kmc(kernel: CollisionKernel, T: float, initial: GaussianState,
                 J: GaussObservable, n_orders: int = 4,
                 n_particles: int = 100_000, n_samples: int = 30_000,
                 seed: int = 0, threads: int = 1) -> DysonComparison:
    """Compare sum_{n<=n_orders} dyson_term against <J, evolve(F0, T)>.

    The tolerance is 3 combined standard errors plus the Poisson truncation
    tail sup|J| (sigma0_max T)^(n_orders+1)/(n_orders+1)!.
    """
    model = kernel.model
    rng = stream(seed, 3)
    X, V = initial.sample(rng, n_particles)
    ens = ParticleEnsemble(X, V, np.ones(n_particles), seed=seed)
    ens_T, _ = evolve(kernel, ens, T, threads=threads)
    jvals = np.asarray(J(ens_T.X, ens_T.V), float)
    kmc = MonteCarloValue(float(np.mean(jvals)),
                          float(np.std(jvals, ddof=1) / math.sqrt(n_particles)),
                          n_particles)
    terms = tuple(dyson_term(kernel, n, T, initial, J,
                             n_samples=n_samples, seed=seed + 17 * n)
                  for n in range(n_orders + 1))
    partial = sum(t.value for t in terms)
    stderr = math.sqrt(kmc.stderr**2 + sum(t.stderr**2 for t in terms))
    # rate bound over the sampled speeds (the thermal tail beyond is negligible
    # for the Gaussian coupling: sigma0 decays in |V|)
    speeds = np.linspace(0.0, float(np.max(np.linalg.norm(V, axis=1))) + 1.0, 64)
    sig_max = max(kernel.sigma0(np.pad([s], (0, model.d - 1))) for s in speeds)
    tail = (sig_max * T) ** (n_orders + 1) / math.factorial(n_orders + 1)
    return DysonComparison(kmc, terms, partial, stderr, tail, sig_max)
