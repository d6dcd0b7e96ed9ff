"""Batch experiment runner.

Usage:
    phonboltz --config cfg.json [--seed N] [--out DIR] [--threads N]
    phonboltz --list-experiments

The config is a JSON mapping with keys: experiment, model, params, seed, out.
Unknown keys anywhere are rejected (exit code 2).  Every run writes
manifest.json (the resolved config and package version), result files
(CSV/JSON), and summary.json with one pass/fail entry per check.  Exit codes:
0 all checks pass, 1 a check failed, 2 invalid config.

A single top-level seed is expanded into per-module counter-based streams, so
the same config and seed give byte-identical CSV output at any thread count.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, PhonboltzError
from .model import GridSpec, default_model, make_coupling, model_from_config, validate_assumptions

EXPERIMENTS = {}


def experiment(name):
    def deco(fn):
        EXPERIMENTS[name] = fn
        return fn
    return deco


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    tolerance: float

    def row(self):
        return {"name": self.name, "passed": bool(self.passed),
                "value": _num(self.value), "tolerance": _num(self.tolerance)}


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else repr(x)


class Runner:
    def __init__(self, out_dir: Path):
        self.out = out_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.checks: list[Check] = []

    def check(self, name, passed, value, tolerance):
        self.checks.append(Check(name, bool(passed), value, tolerance))

    def write_csv(self, name, header, rows):
        with open(self.out / name, "w", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])

    def write_json(self, name, payload):
        with open(self.out / name, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def finish(self, experiment_name, config):
        summary = {"experiment": experiment_name,
                   "passed": all(c.passed for c in self.checks),
                   "checks": [c.row() for c in self.checks]}
        self.write_json("summary.json", summary)
        self.write_json("manifest.json", {"experiment": experiment_name,
                                          "config": config,
                                          "package_version": __version__})
        return summary


def _pop(params: dict, key, default):
    return params.pop(key, default)


def _reject_leftover(params: dict, where: str):
    for key in params:
        raise ConfigError(f"unknown key '{key}' in {where}")


def _get_model(config):
    return model_from_config(dict(config.get("model", {})))


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

@experiment("validate-model")
def run_validate_model(config, runner: Runner, seed: int, threads: int):
    params = dict(config.get("params", {}))
    k_max = float(_pop(params, "k_max", 6.0))
    n = int(_pop(params, "n", 25))
    _reject_leftover(params, "validate-model params")
    model = _get_model(config)
    report = validate_assumptions(model, GridSpec(k_max=k_max, n=n), seed=seed)
    runner.write_csv("assumptions.csv",
                     ["check", "passed", "measured", "threshold", "note"],
                     [(c.name, int(c.passed), c.measured, c.threshold, c.note)
                      for c in report.checks])
    runner.write_json("assumptions.json", report.to_dict())
    for c in report.checks:
        runner.check(c.name, c.passed, c.measured, c.threshold)


@experiment("kernel-table")
def run_kernel_table(config, runner: Runner, seed: int, threads: int):
    from .kernels import CollisionKernel
    params = dict(config.get("params", {}))
    v_max = float(_pop(params, "v_max", 5.0))
    n_points = int(_pop(params, "n_points", 41))
    _reject_leftover(params, "kernel-table params")
    model = _get_model(config)
    kernel = CollisionKernel(model)
    speeds = np.linspace(0.0, v_max, n_points)
    rows = kernel.tabulate(speeds)
    runner.write_csv("kernel_table.csv",
                     ["speed", "sigma0", "emission", "absorption"], rows)
    runner.check("sigma0_nonnegative", all(r[1] >= 0 for r in rows),
                 min(r[1] for r in rows), 0.0)
    V = np.zeros(model.d)
    V[0] = v_max / 2
    runner.check("sigma0_even", abs(kernel.sigma0(V) - kernel.sigma0(-V)) < 1e-12,
                 abs(kernel.sigma0(V) - kernel.sigma0(-V)), 1e-12)


@experiment("boltzmann-run")
def run_boltzmann(config, runner: Runner, seed: int, threads: int):
    from .boltzmann import GaussianState, ParticleEnsemble, evolve
    from .kernels import CollisionKernel
    params = dict(config.get("params", {}))
    n_particles = int(_pop(params, "n_particles", 10_000))
    T = float(_pop(params, "T", 2.0))
    sx = float(_pop(params, "sx", 1.0))
    _reject_leftover(params, "boltzmann-run params")
    model = _get_model(config)
    kernel = CollisionKernel(model)
    from .geometry import stream
    init = GaussianState.thermal(model, sx=sx)
    X, V = init.sample(stream(seed, 50), n_particles)
    ens = ParticleEnsemble(X, V, np.ones(n_particles), seed=seed)
    out, stats = evolve(kernel, ens, T, threads=threads)
    np.save(runner.out / "ensemble.npy",
            np.concatenate([out.X, out.V, out.w[:, None]], axis=1))
    head = [f"x{i}" for i in range(model.d)] + [f"v{i}" for i in range(model.d)] + ["w"]
    rows = [tuple(out.X[i]) + tuple(out.V[i]) + (out.w[i],)
            for i in range(min(n_particles, 2000))]
    runner.write_csv("ensemble_head.csv", head, rows)
    runner.write_csv("jump_stats.csv", ["mean_jumps", "mean_integrated_rate"],
                     [(stats.mean_jumps, stats.mean_integrated_rate)])
    runner.check("mass_conserved", out.total_weight == ens.total_weight,
                 abs(out.total_weight - ens.total_weight), 0.0)
    runner.check("count_conserved", out.size == ens.size,
                 out.size - ens.size, 0.0)
    if model.names.get("coupling") == "zero":
        shift = X + T * model.velocity(V)
        err = float(np.max(np.abs(out.X - shift)))
        runner.check("free_transport_exact", err == 0.0, err, 0.0)


@experiment("dyson-compare")
def run_dyson(config, runner: Runner, seed: int, threads: int):
    from .boltzmann import GaussObservable, GaussianState, dyson_vs_kmc
    from .kernels import CollisionKernel
    params = dict(config.get("params", {}))
    T = float(_pop(params, "T", 1.0))
    n_orders = int(_pop(params, "n_orders", 4))
    n_particles = int(_pop(params, "n_particles", 50_000))
    n_samples = int(_pop(params, "n_samples", 20_000))
    a = float(_pop(params, "observable_a", 2.0))
    b = float(_pop(params, "observable_b", 1.5))
    _reject_leftover(params, "dyson-compare params")
    model = _get_model(config)
    kernel = CollisionKernel(model)
    init = GaussianState.thermal(model)
    J = GaussObservable(model.d, a=a, b=b)
    cmpr = dyson_vs_kmc(kernel, T, init, J, n_orders=n_orders,
                        n_particles=n_particles, n_samples=n_samples,
                        seed=seed, threads=threads)
    runner.write_json("dyson_compare.json", {
        "kmc": {"value": cmpr.kmc.value, "stderr": cmpr.kmc.stderr},
        "terms": [{"order": i, "value": t.value, "stderr": t.stderr}
                  for i, t in enumerate(cmpr.terms)],
        "partial_sum": cmpr.partial_sum,
        "poisson_tail": cmpr.poisson_tail,
        "sigma0_max_T": cmpr.sigma0_max * T,
    })
    runner.check("sigma0T_small", cmpr.sigma0_max * T <= 0.5,
                 cmpr.sigma0_max * T, 0.5)
    runner.check("dyson_matches_kmc", cmpr.within_tolerance,
                 cmpr.discrepancy, cmpr.tolerance)


@experiment("quantum-oracle")
def run_quantum(config, runner: Runner, seed: int, threads: int):
    from .quantum import (CoupledSystem, FockTruncation, LatticeSpec,
                          covariance_check, evolve)
    params = dict(config.get("params", {}))
    n_electron = int(_pop(params, "n_electron", 8))
    modes = tuple(_pop(params, "modes", [1, -1]))
    n_max = int(_pop(params, "n_max", 3))
    lam = float(_pop(params, "lambda", 0.2))
    t_max = float(_pop(params, "t_max", 10.0))
    n_times = int(_pop(params, "n_times", 6))
    cov_n_max = int(_pop(params, "covariance_n_max", 8))
    _reject_leftover(params, "quantum-oracle params")
    model = _get_model(config)
    if model.d != 1:
        raise ConfigError("quantum-oracle runs on d = 1 lattices (oracle-only)")
    system = CoupledSystem(model, LatticeSpec.chain(n_electron, modes=modes),
                           FockTruncation(n_max=n_max))
    H = system.build_hamiltonian(lam=lam)
    Gamma0 = system.initial_state()
    e0 = float(np.real(np.trace(Gamma0 @ H)))
    rows = []
    worst_tr, worst_en = 0.0, 0.0
    for t in np.linspace(0.0, t_max, n_times):
        Gt = evolve(H, Gamma0, float(t))
        dtr = abs(float(np.real(np.trace(Gt))) - 1.0)
        den = abs(float(np.real(np.trace(Gt @ H))) - e0)
        worst_tr, worst_en = max(worst_tr, dtr), max(worst_en, den)
        rows.append((float(t), dtr, den))
    runner.write_csv("drift.csv", ["t", "trace_drift", "energy_drift"], rows)
    runner.check("trace_drift", worst_tr <= 1e-10, worst_tr, 1e-10)
    runner.check("energy_drift", worst_en <= 1e-10, worst_en, 1e-10)
    cov_sys = CoupledSystem(model, LatticeSpec.chain(2, modes=(1, -1)),
                            FockTruncation(n_max=cov_n_max))
    k0 = cov_sys.fock.modes[0]
    rep = covariance_check(cov_sys, [(k0, k0)], [(0.5, 0.0), (1.5, 0.7)])
    runner.check("covariance", rep.max_error <= 1e-3, rep.max_error, 1e-3)


@experiment("ladder-check")
def run_ladder(config, runner: Runner, seed: int, threads: int):
    from .quantum import CoupledSystem, FockTruncation, LatticeSpec, ladder_term_check
    params = dict(config.get("params", {}))
    n_electron = int(_pop(params, "n_electron", 4))
    modes = tuple(_pop(params, "modes", [1, -1]))
    n_max = int(_pop(params, "n_max", 1))
    lam = float(_pop(params, "lambda", 0.1))
    t = float(_pop(params, "t", 2.0))
    _reject_leftover(params, "ladder-check params")
    model = _get_model(config)
    system = CoupledSystem(model, LatticeSpec.chain(n_electron, modes=modes),
                           FockTruncation(n_max=n_max))
    rep = ladder_term_check(system, lam=lam, t=t)
    runner.write_json("ladder.json", {
        "perturbative": rep.perturbative, "ladder_sum": rep.ladder_sum,
        "ladder_sum_ideal_occupation": rep.ladder_sum_ideal,
        "discrepancy": rep.discrepancy, "truncation_gap": rep.truncation_gap,
        "lambda": lam, "t": t})
    runner.check("ladder_agreement", rep.discrepancy <= 1e-8,
                 rep.discrepancy, 1e-8)


@experiment("wigner-demo")
def run_wigner(config, runner: Runner, seed: int, threads: int):
    from .geometry import stream
    from .wigner import (DensityMatrixGrid, MomentumGrid, PhaseSpaceObservable,
                         PureStateGrid, pair_checked, wigner_transform,
                         wigner_value)
    params = dict(config.get("params", {}))
    n = int(_pop(params, "n", 32))
    delta = float(_pop(params, "delta", 0.5))
    n_pairs = int(_pop(params, "n_pairs", 10))
    _reject_leftover(params, "wigner-demo params")
    # 1-D Gaussian closed form on the grid
    h = 0.25
    x = (np.arange(64) - 32) * h
    st = PureStateGrid.from_position_samples(np.pi**-0.25 * np.exp(-x**2 / 2), h)
    w = wigner_transform(st)
    exact = (2 / math.pi) ** 0.5
    err = abs(w.values[64, 64] - exact)
    runner.check("gaussian_peak_1d", err <= 1e-6, err, 1e-6)
    pd = w.position_density()
    pd_exact = np.abs(np.pi**-0.25 * np.exp(-w.x_axis**2 / 2)) ** 2
    merr = float(np.max(np.abs(pd - pd_exact)))
    runner.check("position_marginal", merr <= 1e-10, merr, 1e-10)
    runner.write_csv("wigner_slice.csv", ["x", "W(x,0)"],
                     list(zip(w.x_axis.tolist(), w.values[:, 64].tolist())))
    grid = MomentumGrid(1, n, delta)
    rng = stream(seed, 60)
    worst = 0.0
    for i in range(n_pairs):
        gamma = DensityMatrixGrid.random(grid, rng, rank=3)
        J = PhaseSpaceObservable(1, a=1.0 + rng.random(), b=0.8 + rng.random(),
                                 x0=(float(rng.normal()),), v0=(float(rng.normal()),))
        res = pair_checked(J, gamma, 0.5)
        worst = max(worst, res.diff)
    runner.check("pairing_identity", worst <= 1e-8, worst, 1e-8)


@experiment("combinatorics-suite")
def run_combinatorics(config, runner: Runner, seed: int, threads: int):
    from .diagrams import (count_by_max_peaks, enumerate_patterns, pattern_count,
                           peak_count_bound, ramsey_check)
    params = dict(config.get("params", {}))
    n_max = int(_pop(params, "n_max", 8))
    Ks = list(_pop(params, "peak_bounds_K", [0, 1, 2]))
    cases = [tuple(c) for c in _pop(params, "ramsey_cases", [[1, 1], [2, 1]])]
    _reject_leftover(params, "combinatorics-suite params")
    rows = []
    all_ok = True
    for n in range(3, n_max + 1):
        for K in Ks:
            res = count_by_max_peaks(n, K)
            rows.append((n, K, int(res.count), res.bound, int(res.bound_ok)))
            all_ok &= res.bound_ok
    runner.write_csv("peak_counts.csv", ["n", "K", "count", "bound", "ok"], rows)
    runner.check("lemma_peak_bound", all_ok, int(all_ok), 1)
    res3 = count_by_max_peaks(3, 0)
    runner.check("count_n3_K0", res3.count == 4, res3.count, 4)
    runner.check("patterns_1_3", len(enumerate_patterns(1, 3)) == 2,
                 len(enumerate_patterns(1, 3)), 2)
    runner.check("patterns_formula", len(enumerate_patterns(4, 10)) == pattern_count(4, 10),
                 len(enumerate_patterns(4, 10)), pattern_count(4, 10))
    counterexamples = []
    for (alpha, beta) in cases:
        rep = ramsey_check(alpha, beta, range(4, n_max + 1),
                           processes=threads if threads > 1 else None)
        counterexamples.extend(
            {"alpha": alpha, "beta": beta, "kind": kind, "pi": list(pi)}
            for kind, pi in rep.counterexamples)
    runner.write_json("counterexamples.json", counterexamples)
    runner.check("ramsey_counterexamples", len(counterexamples) == 0,
                 len(counterexamples), 0)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    allowed = {"experiment", "model", "params", "seed", "out"}
    for key in cfg:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in config")
    if "experiment" not in cfg:
        raise ConfigError("config is missing the 'experiment' key")
    if cfg["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment '{cfg['experiment']}'; "
                          f"choices: {sorted(EXPERIMENTS)}")
    return cfg


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="phonboltz",
                                 description="electron-phonon kinetics experiment runner")
    ap.add_argument("--config", help="JSON experiment config")
    ap.add_argument("--seed", type=int, default=None, help="override config seed")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--list-experiments", action="store_true")
    args = ap.parse_args(argv)

    if args.list_experiments:
        for name in sorted(EXPERIMENTS):
            print(name)
        return 0
    if not args.config:
        print("error: --config is required (or --list-experiments)", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        out_dir = Path(args.out or cfg.get("out", "results")) / cfg["experiment"]
        runner = Runner(out_dir)
        resolved = dict(cfg)
        resolved["seed"] = seed
        EXPERIMENTS[cfg["experiment"]](cfg, runner, seed, max(args.threads, 1))
        summary = runner.finish(cfg["experiment"], resolved)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except PhonboltzError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for c in summary["checks"]:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"[{status}] {c['name']}: value={c['value']:.6g} tol={c['tolerance']:.6g}")
    if not summary["passed"]:
        print("FAILED", file=sys.stderr)
        return 1
    print("OK")
    return 0


if __name__ == "__main__":
    sys.exit(main())
