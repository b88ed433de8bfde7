import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

import oracles
from disasterbp.analytics import bd_decay_rate
from disasterbp.branching import BranchingConfig, sample_population
from disasterbp.errors import DomainError, ValidationError
from disasterbp.inhom import (DisasterPath, check_inhom_criterion, classify_limit,
                              conditional_rate_estimate, conditioned_pgf, dual_series, dual_state,
                              inhom_survival_mc, kendall_pgf, sample_disaster_path)
from disasterbp.schedule import RateSchedule

E1 = math.exp(-1.0)
OUTCOMES = {"extinction-sure", "x-independent", "x-dependent", "inconclusive"}


def _no_disasters(b, d):
    return RateSchedule.constant(b, d, 0.0, 1.0)


def test_kendall_examples():
    s = _no_disasters(1.0, 1.0)
    assert kendall_pgf(s, 1.0, 0.0, 1.0, 1) == pytest.approx(0.5, abs=1e-12)
    assert kendall_pgf(s, 0.0, 0.0, 1.0, 3) == 1.0
    death = _no_disasters(0.0, 0.7)
    assert kendall_pgf(death, 1.0, 0.0, 2.0, 1) == pytest.approx(1 - math.exp(-1.4), abs=1e-12)
    with pytest.raises(ValidationError):
        kendall_pgf(RateSchedule.constant(1, 1, 1, 0.5), 0.5, 0.0, 1.0, 1)


def test_sampler_examples():
    assert len(sample_disaster_path(_no_disasters(1, 1), 100.0, 0)) == 0
    n = len(sample_disaster_path(RateSchedule.constant(1, 1, 1.0, 0.5), 1000.0, 1))
    assert abs(n / 1000 - 1) < 0.1
    T = 30.0
    s = RateSchedule.piecewise([{"t_start": 0, "b": 1, "d": 1, "kappa": 2, "p": 0.5},
                                {"t_start": T, "b": 1, "d": 1, "kappa": 0, "p": 1}])
    counts = np.array([len(sample_disaster_path(s, 100.0, i)) for i in range(400)])
    assert abs(counts.mean() - 2 * T) < 3 * counts.std(ddof=1) / math.sqrt(len(counts))


def test_sampler_bound_violation():
    s = RateSchedule.from_callables(lambda t: 1, lambda t: 1, lambda t: 1 + t, lambda t: 0.5)
    with pytest.raises(DomainError):
        sample_disaster_path(s, 50.0, 0, kappa_bound=2.0)


SCHEDS = {
    "periodic": RateSchedule.periodic(1.2, 0.4, 0.8, 0.6, 0.7, 4.0),
    "decay": RateSchedule.exponential_decay(1.0, 0.5, 2.0, 0.5, 0.2),
    "pieces": RateSchedule.piecewise([{"t_start": 0, "b": 2, "d": 0.5, "kappa": 0.5, "p": 0.3},
                                      {"t_start": 3, "b": 0.3, "d": 0.6, "kappa": 1.5, "p": 0.8}]),
}
NO_DIS = {
    "periodic": RateSchedule.periodic(1.2, 0.4, 0.0, 1.0, 0.7, 4.0),
    "decay": RateSchedule.exponential_decay(1.0, 0.5, 0.0, 1.0, 0.2),
    "pieces": RateSchedule.piecewise([{"t_start": 0, "b": 2, "d": 0.5, "kappa": 0, "p": 1},
                                      {"t_start": 3, "b": 0.3, "d": 0.6, "kappa": 0, "p": 1}]),
}


@given(st.sampled_from(sorted(NO_DIS)), st.floats(0, 1), st.floats(0, 8), st.integers(1, 6))
def test_reduction_to_kendall(name, x, t, k):
    s = NO_DIS[name]
    assert conditioned_pgf(s, DisasterPath.empty(), x, t, k) == pytest.approx(
        kendall_pgf(s, x, 0.0, t, k), abs=1e-10)


@given(st.integers(0, 2 ** 32), st.floats(0.01, 1), st.floats(0.1, 12), st.integers(1, 4),
       st.floats(0.2, 3), st.floats(0, 2), st.floats(0.05, 0.95))
def test_matches_backward_recursion(seed, x, t, k, b, d, p):
    s = RateSchedule.constant(b, d, 1.0, p)
    path = sample_disaster_path(s, t, seed)
    got = conditioned_pgf(s, path, x, t, k)
    want = oracles.backward_recursion_pgf(b, d, path.tau, path.p_at_tau, x, t, k)
    assert got == pytest.approx(want, rel=1e-9, abs=1e-12)


@settings(max_examples=20)
@given(st.sampled_from(sorted(SCHEDS)), st.integers(0, 2 ** 32), st.floats(0.05, 1.0))
def test_dual_state_identity_and_monotone_I(name, seed, x):
    s = SCHEDS[name]
    T = 8.0
    path = sample_disaster_path(s, T, seed)
    times = np.linspace(0.25, T, 32)
    series = dual_series(s, path, x, times)
    logI = np.array([st_.log_I for st_ in series])
    assert np.all(np.diff(logI) >= -1e-12)

    def L(u):
        m = path.tau <= u
        return s.v(u) + np.log(path.p_at_tau[m]).sum()

    cuts = sorted(set([0.0, T] + list(path.tau) + list(s.breakpoints)))
    st_ = series[-1]
    I = math.fsum(integrate.quad(lambda u: math.exp(-L(u)) * s.b(u), a, c, epsabs=1e-13,
                                 epsrel=1e-12, limit=200)[0]
                  for a, c in zip(cuts[:-1], cuts[1:]) if c > a)
    assert st_.L == pytest.approx(L(T), abs=1e-10)
    inv = math.exp(-st_.L) / x + I
    assert 1.0 / st_.X == pytest.approx(inv, rel=1e-10)


@given(st.integers(0, 2 ** 32), st.floats(0.0, 0.95), st.floats(0.01, 0.05))
def test_monotone_in_x(seed, x, dx):
    s = SCHEDS["pieces"]
    path = sample_disaster_path(s, 6.0, seed)
    a, b = dual_state(s, path, x, 6.0), dual_state(s, path, x + dx, 6.0)
    assert b.X >= a.X - 1e-15
    assert conditioned_pgf(s, path, x + dx, 6.0, 2) <= conditioned_pgf(s, path, x, 6.0, 2) + 1e-15


def test_tower_property():
    b, d, kap, p = 1.1, 0.6, 0.8, 0.5
    x, t, k = 0.6, 2.0, 2
    s = RateSchedule.constant(b, d, kap, p)
    n = 100_000
    gen = np.random.default_rng(123)
    counts = gen.poisson(kap * t, n)
    vals = np.empty(n)
    for i in range(n):
        tau = np.sort(gen.uniform(0, t, counts[i]))
        vals[i] = conditioned_pgf(s, DisasterPath(tau, np.full(len(tau), p)), x, t, k)
    cfg = BranchingConfig.birth_death(b, d, kap, p, z0=k)
    Z = sample_population(cfg, [t], n, 5)[:, 0]
    mc = (1 - x) ** Z.astype(float)
    se = math.hypot(vals.std(ddof=1), mc.std(ddof=1)) / math.sqrt(n)
    assert abs(vals.mean() - mc.mean()) < 4 * se


def test_classify_examples():
    # b = d = exp(-s), no disasters: L = 0, I = 1
    s = RateSchedule.exponential_decay(1.0, 1.0, 0.0, 1.0, 1.0)
    out = classify_limit(s, DisasterPath.empty(), 1.0, 1)
    assert out.outcome == "x-dependent" and out.value == pytest.approx(0.5, abs=1e-6)
    assert out.finite_activity

    s = RateSchedule.constant(2.0, 0.0, 1.0, E1)
    path = sample_disaster_path(s, 1000.0, 3)
    out = classify_limit(s, path, 0.7, 1)
    assert out.outcome == "x-independent"
    X_inf = 1.0 / out.I_limit
    assert out.value == pytest.approx(1 - X_inf)

    s = RateSchedule.constant(1.0, 2.0, 0.0, 1.0)
    assert classify_limit(s, DisasterPath.empty(), 0.5, 1).outcome == "extinction-sure"


@settings(max_examples=25)
@given(st.booleans(), st.integers(0, 2 ** 32), st.floats(0.2, 3), st.floats(0, 2),
       st.floats(0.2, 3), st.floats(0.1, 0.9), st.floats(0.3, 2), st.floats(0.05, 1.0))
def test_outcome_iff_finite_activity(finite, seed, b, d, kap, p, rate, x):
    if finite:
        s = RateSchedule.exponential_decay(b, d, kap, p, rate)
    else:
        net = b - d - kap * -math.log(p)
        if abs(net) < 0.5:
            b = b + 1.0 - net if net >= 0 else b
            d = d + 0.5 if net < 0 else d
        s = RateSchedule.constant(b, d, kap, p)
    path = sample_disaster_path(s, 1000.0, seed)
    out = classify_limit(s, path, x, 1)
    assert out.outcome in OUTCOMES
    assert (out.outcome == "x-dependent") == finite
    assert out.finite_activity == finite


def test_survival_mc_examples():
    s = RateSchedule.constant(2.0, 0.0, 1.0, E1)
    est, se = inhom_survival_mc(s, 50.0, 1, 20000, 1)
    assert abs(est - 0.5) < 3 * se
    assert inhom_survival_mc(s, 0.0, 1, 1000, 1) == (1.0, 0.0)
    # p = 1 disasters are null events: critical Kendall survival 1/(1 + b t)
    s = RateSchedule.constant(1.0, 1.0, 2.0, 1.0)
    est, se = inhom_survival_mc(s, 3.0, 1, 2000, 2)
    assert est == pytest.approx(1 / (1 + 3.0), abs=1e-12)


def test_survival_mc_generic_route_matches_constant_route():
    # a zero-amplitude periodic schedule takes the generic thinning route
    s = RateSchedule.periodic(1.5, 0.2, 1.0, 0.5, 0.0, 1.0)
    est, se = inhom_survival_mc(s, 4.0, 1, 4000, 3)
    c = RateSchedule.constant(1.5, 0.2, 1.0, 0.5)
    est2, se2 = inhom_survival_mc(c, 4.0, 1, 20000, 4)
    assert abs(est - est2) < 4 * math.hypot(se, se2)


def test_criterion_examples():
    s = RateSchedule.constant(2.0, 0.0, 1.0, E1)
    assert check_inhom_criterion(s, lambda t: t, 0.5).verdict == "survival-possible"
    s = RateSchedule.constant(0.0, 1.0, 0.0, 1.0)
    assert check_inhom_criterion(s, lambda t: t, 0.5).verdict == "extinction-sure"
    s = RateSchedule.constant(2.0, 0.0, 1.0, math.exp(-3.0))
    v = check_inhom_criterion(s, lambda t: t, 0.5)
    assert v.verdict == "extinction-sure" and v.iota == -1.0


def test_conditional_rates():
    b, d, kap, p = 0.3, 0.2, 1.0, 0.5
    s = RateSchedule.constant(b, d, kap, p)
    path = sample_disaster_path(s, 400.0, 8)
    series = conditional_rate_estimate(s, path, 1, [50.0, 100.0, 200.0, 400.0])
    quenched = kap * math.log(1 / p) - (b - d)
    assert series.rate[-2] == pytest.approx(quenched, rel=0.1)
    assert bd_decay_rate(b, d, kap, p) < quenched

    s = RateSchedule.constant(0.4, 1.0, 0.0, 1.0)
    series = conditional_rate_estimate(s, DisasterPath.empty(), 1, [10.0, 100.0, 1000.0])
    assert series.rate[-1] == pytest.approx(0.6, rel=0.01)
    assert np.all(np.isfinite(series.rate))
    with pytest.raises(ValidationError):
        conditional_rate_estimate(s, DisasterPath.empty(), 1, [0.0, 1.0])
