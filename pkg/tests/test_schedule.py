import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from disasterbp.errors import ValidationError
from disasterbp.regvar import cumulative_intensity
from disasterbp.schedule import RateSchedule


def test_cumulative_intensity_examples():
    Lam, inv = cumulative_intensity(RateSchedule.constant(1.0, 0.5, 2.0, 0.5))
    assert Lam(3.0) == 6.0 and inv(6.0) == 3.0 and inv(1.0) == 0.5

    Lam, inv = cumulative_intensity(RateSchedule.power_intensity(1.0, 1.0))
    assert Lam(3.0) == pytest.approx(4.5)
    assert inv(8.0) == pytest.approx(4.0)

    s = RateSchedule.piecewise([{"t_start": 0, "b": 1, "d": 1, "kappa": 0, "p": 1},
                                {"t_start": 1, "b": 1, "d": 1, "kappa": 1, "p": 0.5}])
    Lam, inv = cumulative_intensity(s)
    for u in (0.3, 1.0, 7.5):
        assert inv(u) == pytest.approx(1.0 + u)


def test_generic_callables_fall_back_to_quadrature():
    s = RateSchedule.from_callables(lambda t: 1.0, lambda t: 0.2, lambda t: t, lambda t: 0.5)
    assert s.Lambda(2.0) == pytest.approx(2.0, abs=1e-9)
    assert s.Lambda_inv(2.0) == pytest.approx(2.0, abs=1e-9)
    assert s.v(3.0) == pytest.approx(2.4, abs=1e-9)


@given(st.lists(st.floats(0.0, 3.0), min_size=1, max_size=4),
       st.lists(st.floats(0.001, 40.0), min_size=1, max_size=20))
def test_lambda_inverse_vectorised_matches_scalar(ks, us):
    ks = list(ks) + [max(ks[-1], 0.5)]
    segs = [{"t_start": float(i), "b": 1.0, "d": 0.5, "kappa": k, "p": 0.5} for i, k in enumerate(ks)]
    s = RateSchedule.piecewise(segs)
    many = s.Lambda_inv_many(np.array(us))
    for u, m in zip(us, many):
        one = s.Lambda_inv(u)
        assert one == pytest.approx(m, rel=1e-12, abs=1e-12)
        assert s.Lambda(one) == pytest.approx(u, rel=1e-9)


def test_smooth_integrals_match_scipy():
    s = RateSchedule.periodic(1.5, 0.5, 1.0, 0.6, 0.8, 3.0)
    t = 7.3
    v = integrate.quad(lambda y: s.b(y) - s.d(y), 0, t, limit=200)[0]
    assert s.v(t) == pytest.approx(v, abs=1e-10)
    lw = integrate.quad(lambda y: s.b(y) * math.exp(-(s.v(y) - s.v(1.0))), 1.0, t, limit=200)[0]
    assert s.log_weighted_birth(1.0, t) == pytest.approx(math.log(lw), abs=1e-8)
    e = RateSchedule.exponential_decay(2.0, 1.0, 1.0, 0.5, 0.3)
    assert e.Lambda(5.0) == pytest.approx(integrate.quad(e.kappa, 0, 5.0)[0], abs=1e-12)


def test_piecewise_weighted_birth():
    s = RateSchedule.piecewise([{"t_start": 0, "b": 2, "d": 0, "kappa": 1, "p": 0.5},
                                {"t_start": 2, "b": 0.5, "d": 1.5, "kappa": 1, "p": 0.5}])
    direct = integrate.quad(lambda y: s.b(y) * math.exp(-(s.v(y) - s.v(0.5))), 0.5, 4.0,
                            points=[2.0])[0]
    assert s.log_weighted_birth(0.5, 4.0) == pytest.approx(math.log(direct), abs=1e-10)


def test_json_round_trip_and_validation():
    for spec in ({"kind": "constant", "b": 2, "d": 0, "kappa": 1, "p": 0.3},
                 {"kind": "periodic", "b": 1, "d": 0.5, "kappa": 1, "p": 0.5, "amplitude": 0.5, "period": 2},
                 {"segments": [{"t_start": 0, "b": 1, "d": 0, "kappa": 1, "p": 0.5}]}):
        s = RateSchedule.from_json(spec)
        again = RateSchedule.from_json(s.to_json())
        assert again.v(3.3) == s.v(3.3)
    with pytest.raises(ValidationError):
        RateSchedule.from_json({"kind": "nope"})
    with pytest.raises(ValidationError):
        RateSchedule.piecewise([{"t_start": 1, "b": 1, "d": 0, "kappa": 1, "p": 0.5}])
    with pytest.raises(ValidationError):
        RateSchedule.constant(1, 0, 1, 0.0)
    with pytest.raises(ValidationError):
        RateSchedule.constant(-1, 0, 1, 0.5)


def test_weighted_birth_far_into_a_decayed_schedule():
    # b(t) = 2 e^{-r t} is ~1e-163 here and d = 0, so the weight e^{-(v(s)-v(a))} is 1 to rounding
    r = 1.1015625
    s = RateSchedule.exponential_decay(2.0, 0.0, 1.0, 0.5, r)
    a, c = 340.9285069746811, 352.970730273065
    want = math.log(2.0 / r) - r * a + math.log(-math.expm1(-r * (c - a)))
    assert s.log_weighted_birth(a, c) == pytest.approx(want, rel=1e-9)
