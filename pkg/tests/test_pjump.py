import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from disasterbp.analytics import pjump_decay_rate
from disasterbp.core import linear_drift, logistic_drift, power_drift
from disasterbp.errors import ValidationError
from disasterbp.pjump import (PJumpConfig, ergodic_average, estimate_decay_rate, estimate_moment,
                              sample_states, simulate_pjump, stationary_moment_check)

E1 = math.exp(-1.0)

# drifts are compiled once per module; hypothesis examples vary p and the seed
LOGISTIC = {(d, t): PJumpConfig.from_alpha(logistic_drift(d, t), 0.5, 0.3, t_end=10.0,
                                           domain_end=math.inf).drift
            for d, t in [(0.5, 1.0), (1.0, 1.0), (1.3, 1.0), (1.5, 1.0), (2.0, 0.7), (2.0, 2.0)]}


def _jump_times(rec):
    return rec.times[np.array([k == "disaster" for k in rec.kinds])]


def test_zero_drift_is_pure_multiplicative():
    cfg = PJumpConfig.from_alpha(linear_drift(0.0), 0.5, 1.0, t_end=5.0)
    rec = simulate_pjump(cfg, 3)
    n = np.arange(len(rec))
    kinds = np.array(rec.kinds)
    jumps = np.cumsum(kinds == "disaster")
    np.testing.assert_array_equal(rec.values, 0.5 ** jumps)
    assert n.size >= 2


def test_logistic_without_jumps_matches_closed_form():
    cfg = PJumpConfig.from_alpha(logistic_drift(1.0, 1.0), 1.0, 0.1, t_end=8.0)
    grid = np.linspace(0.1, 7.9, 40)
    rec = simulate_pjump(cfg, 0, checkpoints=grid)
    expect = oracles.logistic_jump_path(0.1, 1.0, 1.0, 1.0, [], rec.times)
    assert np.max(np.abs(rec.values - expect)) < 1e-8


@given(st.integers(0, 2 ** 32), st.floats(0.1, 0.9), st.sampled_from(sorted(LOGISTIC)))
def test_logistic_matches_explicit_representation(seed, p, key):
    x0 = 0.3
    delta, theta = key
    cfg = PJumpConfig(LOGISTIC[key], p, x0, t_end=10.0)
    rec = simulate_pjump(cfg, seed, checkpoints=np.linspace(0.5, 9.5, 19))
    expect = oracles.logistic_jump_path(x0, delta, theta, p, _jump_times(rec), rec.times)
    assert np.max(np.abs(rec.values - expect)) < 1e-8


@given(st.integers(0, 2 ** 32), st.floats(0.05, 0.95))
def test_jump_exactness_and_confinement(seed, p):
    cfg = PJumpConfig(LOGISTIC[(2.0, 2.0)], p, 0.9, t_end=20.0)
    rec = simulate_pjump(cfg, seed)
    jumps = np.array([k == "disaster" for k in rec.kinds])
    assert np.all(rec.values[jumps] == p * rec.pre_values[jumps])
    assert np.all(rec.values <= max(cfg.x0, cfg.drift.s_alpha) + 1e-7)
    assert np.all(rec.values >= 0)


@given(st.integers(0, 2 ** 32), st.floats(0.05, 0.9), st.floats(0.01, 0.09))
def test_monotone_coupling_in_p(seed, p1, dp):
    grid = np.linspace(0.25, 14.75, 59)
    a = PJumpConfig(LOGISTIC[(1.5, 1.0)], p1, 0.8, t_end=15.0)
    b = a.replace(p=p1 + dp)
    ra, rb = simulate_pjump(a, seed, grid), simulate_pjump(b, seed, grid)
    np.testing.assert_array_equal(_jump_times(ra), _jump_times(rb))
    va = np.array([ra.value_at(t) for t in grid])
    vb = np.array([rb.value_at(t) for t in grid])
    assert np.all(va <= vb + 1e-12)


@given(st.integers(0, 2 ** 32), st.floats(0.1, 0.9))
def test_lower_bound_coupling(seed, p):
    grid = np.linspace(0.2, 9.8, 49)
    cfg = PJumpConfig(LOGISTIC[(1.3, 1.0)], p, 0.5, t_end=10.0)
    rec = simulate_pjump(cfg, seed, grid)
    w = oracles.logistic_jump_path(0.5, 1.0, 1.0, p, _jump_times(rec), rec.times)
    assert np.all(rec.values >= w - 1e-10)


def test_subcritical_paths_vanish():
    cfg = PJumpConfig.from_alpha(logistic_drift(0.5, 1.0), E1, 0.5, t_end=100.0)
    X, _ = sample_states(cfg, [100.0], 5000, 11)
    assert np.mean(X[:, 0] < 1e-6) > 0.99


def test_first_moment_zero_drift():
    cfg = PJumpConfig.from_alpha(linear_drift(0.0), 0.5, 1.0, t_end=3.0)
    ts = [0.0, 1.0, 3.0]
    est = estimate_moment(cfg, 1, ts, 20000, 5)
    assert est[0].value == 1.0
    for e in est[1:]:
        assert abs(e.value - math.exp(-0.5 * e.t)) < 3 * e.std_err


def test_importance_sampling_is_unbiased():
    cfg = PJumpConfig.from_alpha(logistic_drift(0.2, 1.0), E1, 0.5, t_end=6.0)
    plain = estimate_moment(cfg, 1, [6.0], 40000, 1)[0]
    tilted = estimate_moment(cfg, 1, [6.0], 40000, 2, tilt="auto")[0]
    assert abs(plain.value - tilted.value) < 4 * math.hypot(plain.std_err, tilted.std_err)


@pytest.mark.parametrize("a, window, t_end", [(0.2, (20.0, 60.0), 60.0), (0.5, (120.0, 400.0), 400.0)])
def test_decay_rate_concave_drift(a, window, t_end):
    cfg = PJumpConfig.from_alpha(logistic_drift(a, 1.0), E1, 0.5, t_end=t_end)
    est = estimate_decay_rate(cfg, 1, window, 20000, 4)
    target = pjump_decay_rate(a, E1)
    assert abs(est.rate - target) / target < 0.10


def test_decay_rate_p_zero():
    cfg = PJumpConfig.from_alpha(logistic_drift(-0.5, 1.0), 0.0, 0.5, t_end=20.0)
    est = estimate_decay_rate(cfg, 1, (5.0, 20.0), 20000, 4)
    assert est.rate == pytest.approx(1.5, rel=0.05)


def test_ergodic_examples():
    cfg = PJumpConfig.from_alpha(logistic_drift(2.0, 2.0), E1, 0.5)
    assert ergodic_average(cfg, lambda x: 1.0, 100.0, 2000.0, 0) == pytest.approx(1.0, abs=1e-12)
    alpha = cfg.drift.alpha
    r = ergodic_average(cfg, lambda x: alpha(x) / x, 1e3, 3e4, 0)
    assert abs(r - 1.0) < 0.05
    ex = ergodic_average(cfg, lambda x: x, 1e3, 3e4, 0)
    ea = ergodic_average(cfg, alpha, 1e3, 3e4, 0)
    assert abs(ex - ea / (1 - E1)) / ex < 0.05


def test_stationary_check_against_binary_moments():
    from disasterbp.analytics import binary_dual_moments
    from disasterbp.core import OffspringLaw, branching_dual_drift
    lam, law = OffspringLaw.birth_death(2.0, 0.0)
    cfg = PJumpConfig.from_alpha(branching_dual_drift(law, lam), E1, 0.5)
    rep = stationary_moment_check(cfg, 3, 3e4, 0)
    assert max(rep.rel_errors) < 0.05
    assert rep.log_identity_rel_error < 0.05
    exact = binary_dual_moments(2.0, 0.0, 1.0, E1, 3)
    assert np.allclose(rep.lhs, exact, rtol=0.05)


def test_validation():
    with pytest.raises(ValidationError):
        PJumpConfig.from_alpha(logistic_drift(1, 1), 1.5, 0.5)
    with pytest.raises(ValidationError):
        PJumpConfig.from_alpha(logistic_drift(1, 1), 0.5, 2.0)
    with pytest.raises(ValidationError):
        PJumpConfig.from_alpha(linear_drift(1.0), 0.5, 0.5, domain_end=math.inf)
    cfg = PJumpConfig.from_alpha(logistic_drift(1, 1), 0.5, 0.5)
    with pytest.raises(ValidationError):
        estimate_moment(cfg, 0, [1.0], 1000)


def test_reproducible_paths():
    cfg = PJumpConfig.from_alpha(power_drift(1.0, 1.0, 1.5), 0.4, 0.7, t_end=30.0,
                                 domain_end=math.inf)
    assert simulate_pjump(cfg, 99) == simulate_pjump(cfg, 99)
    assert simulate_pjump(cfg, 99) != simulate_pjump(cfg, 100)
