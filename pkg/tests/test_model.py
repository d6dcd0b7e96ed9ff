import math
from dataclasses import replace

import numpy as np
import pytest

from phonboltz.errors import BathUnstable, ConfigError, GridTooCoarse
from phonboltz.model import (GridSpec, Model, default_model, make_coupling,
                             make_electron_dispersion, make_phonon_dispersion,
                             model_from_config, phi, phonon_occupation,
                             validate_assumptions)


@pytest.fixture(scope="module")
def model():
    return default_model()


def test_occupation_direct_value(model):
    # beta = 1, omega = 1, mu = 0: N = e^-1/(1 - e^-1) = 1/(e - 1)
    val = float(phonon_occupation(model, np.zeros((1, 3)))[0])
    assert val == pytest.approx(1.0 / (math.e - 1.0), abs=1e-12)


def test_occupation_zero_temperature_limit(model):
    cold = replace(model, beta=1e6)
    val = float(phonon_occupation(cold, np.zeros((1, 3)))[0])
    assert 0.0 <= val <= 1e-300


def test_occupation_bath_unstable(model):
    hot = replace(model, mu=2.0)
    with pytest.raises(BathUnstable):
        phonon_occupation(hot, np.zeros((1, 3)))


def test_occupation_monotone_in_beta_and_omega():
    # monotone decreasing in beta and in omega(k) for fixed mu <= 0
    vals = []
    for beta in (0.5, 1.0, 2.0, 4.0):
        m = default_model(beta=beta, mu=0.0)
        vals.append(float(phonon_occupation(m, np.zeros((1, 3)))[0]))
    assert all(a > b for a, b in zip(vals, vals[1:]))
    vals = []
    for w0 in (0.5, 1.0, 2.0):
        m = default_model(omega0=w0, mu=0.0)
        vals.append(float(phonon_occupation(m, np.zeros((1, 3)))[0]))
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_phi_quadratic_zero_omega():
    omega, const = make_phonon_dispersion("constant_omega", {"omega0": 0.0})
    m = replace(default_model(), omega=omega)
    val = float(phi(m, np.zeros(3), np.array([1.0, 0.0, 0.0]), +1))
    assert val == pytest.approx(0.5)


def test_phi_hand_value(model):
    # e(0) - omega = -1 for p = (1,0,0), k = (-1,0,0), sigma = -
    val = float(phi(model, np.array([1.0, 0, 0]), np.array([-1.0, 0, 0]), -1))
    assert val == pytest.approx(-1.0)


def test_phi_reflection_symmetry(model):
    rng = np.random.default_rng(0)
    for _ in range(100):
        p = rng.uniform(-3, 3, 3)
        k = rng.uniform(-3, 3, (1, 3))
        for sigma in (+1, -1):
            a = phi(model, p, k, sigma)
            b = phi(model, -p, -k, sigma)
            assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_phi_rejects_bad_sigma(model):
    with pytest.raises(ValueError):
        phi(model, np.zeros(3), np.zeros((1, 3)), 2)


@pytest.fixture(scope="module")
def default_report(model):
    return validate_assumptions(model, GridSpec(k_max=6.0, n=25))


def test_validate_default_passes(default_report):
    assert default_report.passed


def test_validate_hessian_identity(default_report):
    # Hess Phi_+- = identity for the quadratic dispersion with constant omega
    lo = default_report.check("hessian_phi_lower").measured
    hi = default_report.check("hessian_phi_upper").measured
    assert lo == pytest.approx(1.0, abs=5e-3)
    assert hi == pytest.approx(1.0, abs=5e-3)


def test_validate_single_critical_point(default_report):
    assert default_report.check("single_critical_point").measured == 1


def test_validate_every_assumption_once(default_report):
    names = [c.name for c in default_report.checks]
    assert len(names) == len(set(names))


def test_validate_soft_omega_hessian_fails(model):
    # omega = 0.9 |k|^2/2: Hess Phi_- = 0.1 * identity < C3 = 0.2
    omega = lambda k: 0.45 * np.sum(np.asarray(k, float) ** 2, axis=-1)
    soft = replace(model, omega=omega, omega_is_constant=False)
    rep = validate_assumptions(soft, GridSpec(k_max=6.0, n=25))
    c = rep.check("hessian_phi_lower")
    assert not c.passed
    assert c.measured == pytest.approx(0.1, abs=5e-3)


def test_validate_constant_coupling_fails_decay(model):
    flat = model.with_coupling(make_coupling("constant"), name="constant")
    rep = validate_assumptions(flat, GridSpec(k_max=6.0, n=25))
    assert not rep.check("coupling_decay").passed


def test_validate_grid_too_coarse(model):
    with pytest.raises(GridTooCoarse):
        validate_assumptions(model, GridSpec(k_max=6.0, n=5))


def test_registry_dispersions_evaluate():
    e, grad, iso = make_electron_dispersion("quadratic_plus_eps_cos",
                                            {"amplitude": 0.05})
    k = np.array([[0.3, -0.2, 1.0]])
    assert np.isfinite(e(k)).all() and not iso
    h = 1e-6
    fd = (e(k + [h, 0, 0]) - e(k - [h, 0, 0])) / (2 * h)
    assert grad(k)[0, 0] == pytest.approx(float(fd[0]), abs=1e-6)
    omega, const = make_phonon_dispersion("acoustic_soft", {"softness": 0.05})
    assert not const
    assert float(omega(np.zeros((1, 3)))[0]) == pytest.approx(1.0)


def test_validate_acoustic_soft_passes():
    cfg = {"dimension": 3, "phonon_dispersion": "acoustic_soft",
           "phonon_params": {"softness": 0.02}}
    m = model_from_config(cfg)
    rep = validate_assumptions(m, GridSpec(k_max=6.0, n=25))
    assert rep.passed


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        model_from_config({"dimension": 3, "bogus": 1})
    with pytest.raises(ConfigError):
        model_from_config({"electron_params": {"junk": 2},
                           "electron_dispersion": "quadratic"})


def test_weak_coupling_linkage():
    m = model_from_config({"epsilon": 0.04})
    assert m.lam == pytest.approx(0.2)
    with pytest.raises(ConfigError):
        Model(d=3, e=m.e, omega=m.omega, coupling=m.coupling, beta=1.0,
              lam=0.5, eps=0.04, weak_coupling_linkage=True)


def test_toy_dimension_flagged():
    assert default_model(d=1).toy_dimension
    assert not default_model(d=3).toy_dimension
