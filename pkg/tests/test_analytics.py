import math

import pytest
from hypothesis import assume, given, strategies as st

import oracles
from disasterbp.analytics import (bd_decay_rate, bd_survival_probability, binary_dual_moments,
                                  classify_homogeneous, classify_mu_form, homogeneous_decay_rate,
                                  pjump_decay_rate, survival_from_moments)
from disasterbp.core import OffspringLaw
from disasterbp.errors import DomainError, RegimeError, ValidationError

E1 = math.exp(-1.0)


def test_phase_examples():
    r = classify_homogeneous(1.0, OffspringLaw.from_mapping({0: 0.5, 2: 0.5}), 1.0, 0.5)
    assert r.nu == 0.0 and r.decay_rate == pytest.approx(0.5, abs=1e-15)
    r = classify_homogeneous(1.0, OffspringLaw.from_mapping({0: 0.25, 2: 0.75}), 1.0, E1)
    assert r.nu == pytest.approx(0.5)
    assert r.decay_rate == pytest.approx(0.15343, abs=5e-6)
    r = classify_homogeneous(1.0, OffspringLaw.from_mapping({2: 1.0}), 1.0, 0.0)
    assert r.decay_rate == 1.0
    r = classify_homogeneous(2.0, OffspringLaw.from_mapping({2: 1.0}), 1.0, E1)
    assert r.regime == "supercritical" and r.survival_prob == pytest.approx(0.5, abs=1e-12)


def test_mu_form_examples():
    t = classify_mu_form(1.0, 1.5, 1.0, E1)
    assert (t.lower, t.upper) == (pytest.approx(1 + E1), pytest.approx(2.0))
    t = classify_mu_form(1.0, 1.5, 1.0, 1.0)
    assert t.lower == 1.0 and t.upper == 1.0
    assert classify_mu_form(2.0, 1.9, 1.0, E1).regime == "supercritical"
    with pytest.raises(ValidationError):
        classify_homogeneous(1.0, OffspringLaw.from_mapping({1: 1.0}), 1.0, 1.0)


def test_bd_closed_forms():
    assert bd_survival_probability(1, 2, 0, 1, E1) == 0.5
    assert bd_survival_probability(2, 2, 0, 1, E1) == pytest.approx(0.65803, abs=5e-6)
    assert bd_survival_probability(1, 1.0, 0.0, 1.0, E1) == 0.0
    assert bd_decay_rate(0.2, 0, 1, E1) == pytest.approx(0.43212, abs=5e-6)
    assert bd_decay_rate(0.5, 0, 1, E1) == pytest.approx(0.15343, abs=5e-6)
    assert bd_decay_rate(0.7, 0.7, 2.0, 0.3) == pytest.approx(0.7 * 2.0)
    with pytest.raises(RegimeError):
        bd_decay_rate(2, 0, 1, E1)


def test_moments_examples():
    m = binary_dual_moments(2, 0, 1, E1, 3)
    assert m[0] == pytest.approx(0.5, abs=1e-15)
    assert m[1] == pytest.approx(1 - 0.65803, abs=5e-6)
    assert survival_from_moments(1, m) == m[0]
    assert survival_from_moments(2, m) == pytest.approx(0.65803, abs=5e-6)
    # p -> 1: first moment tends to the classical survival probability 1 - d/b
    near = binary_dual_moments(2.0, 0.5, 1.0, 1 - 1e-9, 1)[0]
    assert near == pytest.approx(0.75, abs=1e-8)
    with pytest.raises(DomainError):
        bd_survival_probability(61, 2, 0, 1, E1)


@given(st.floats(0.01, 1.0), st.integers(1, 12))
def test_degenerate_moments(m, z0):
    # X identically m has moments m^k; a Bernoulli(m) variable has all moments equal to m
    assert survival_from_moments(z0, [m ** k for k in range(1, z0 + 1)]) == pytest.approx(
        1 - (1 - m) ** z0, abs=1e-12)
    assert survival_from_moments(z0, [m] * z0) == pytest.approx(m, abs=1e-12)


@given(st.floats(-3, 3), st.floats(0.1, 5), st.floats(0.01, 0.99))
def test_decay_rate_matches_variational_oracle(growth, kappa, p):
    assume(growth < kappa * -math.log(p))
    lam = 1.0
    mu = 1.0 + growth / lam
    assume(mu >= 0)
    rate = homogeneous_decay_rate(lam, mu, kappa, p)
    assert rate == pytest.approx(oracles.variational_decay_rate(growth, kappa, p), abs=1e-6)


@given(st.floats(0.1, 5), st.floats(0.01, 0.99))
def test_rate_continuous_at_boundaries(kappa, p):
    L = -math.log(p)
    g = p * kappa * L
    lin = (1 - p) * kappa - g
    ld = kappa * (1 - p - p * math.log(1 / p))
    assert abs(lin - ld) < 1e-12
    below = homogeneous_decay_rate(1.0, 1.0 + g * (1 - 1e-13), kappa, p)
    above = homogeneous_decay_rate(1.0, 1.0 + g * (1 + 1e-13), kappa, p)
    assert abs(below - above) < 1e-11
    # at nu = 1 the rate vanishes, matching zero decay on the supercritical side
    assert abs(homogeneous_decay_rate(1.0, 1.0 + kappa * L * (1 - 1e-13), kappa, p)) < 1e-11


@given(st.floats(0.1, 4), st.floats(0.05, 3), st.floats(0.01, 0.99), st.floats(0.1, 3))
def test_classifications_agree(lam, mu, p, kappa):
    law_mu = mu
    ks = OffspringLaw.from_mapping({0: 1 - law_mu / 4, 4: law_mu / 4}) if mu < 4 else None
    assume(ks is not None)
    a = classify_homogeneous(lam, ks, kappa, p).regime
    b = classify_mu_form(lam, ks.mean, kappa, p).regime
    assert a == b


def _grid_params():
    return [(b, d, k, p) for b in (1.5, 2.5, 4.0) for d in (0.0, 0.3) for k in (0.5, 1.0)
            for p in (0.3, 0.6)]


def test_survival_monotonicity():
    for b, d, kap, p in _grid_params():
        base = bd_survival_probability(2, b, d, kap, p)
        assert bd_survival_probability(2, b + 0.2, d, kap, p) >= base - 1e-12
        assert bd_survival_probability(2, b, d + 0.1, kap, p) <= base + 1e-12
        assert bd_survival_probability(2, b, d, kap + 0.1, p) <= base + 1e-12
        assert bd_survival_probability(2, b, d, kap, p * 0.9) <= base + 1e-12
        assert bd_survival_probability(3, b, d, kap, p) >= base - 1e-12


def test_survival_below_classical_bound():
    for b, d, kap, p in _grid_params():
        lam, law = OffspringLaw.birth_death(b, d)
        for z0 in (1, 2, 5):
            s = bd_survival_probability(z0, b, d, kap, p)
            assert s < 1 - law.fixed_point ** z0


def test_pjump_decay_rate_branches():
    assert pjump_decay_rate(0.2, E1) == pytest.approx(1 - E1 - 0.2)
    assert pjump_decay_rate(0.5, E1) == pytest.approx(0.15343, abs=5e-6)
    assert pjump_decay_rate(-0.7, 0.0) == pytest.approx(1.7)
    a = E1 * 1.0  # boundary p log(1/p)
    assert pjump_decay_rate(a, E1) == pytest.approx(1 - E1 - a, abs=1e-12)
    with pytest.raises(RegimeError):
        pjump_decay_rate(1.2, E1)
