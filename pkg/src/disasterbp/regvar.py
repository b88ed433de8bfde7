"""Regular variation, integrals against Poisson counting processes, and Poisson large deviations."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad

from ._jit import njit
from .core import as_stream
from .errors import DomainError, NumericalError, RegularVariationWarning, ValidationError
from .parallel import fan_out
from .schedule import RateSchedule

__all__ = [
    "RegVarFunction",
    "LdpEstimate",
    "DIntegralReport",
    "ldp_rate",
    "ldp_empirical",
    "cumulative_intensity",
    "d_integral_check",
    "regvar_estimate_beta",
]

EVENTS = ("upper", "lower", "pathwise-lower")
Z95 = 1.959963984540054


def ldp_rate(x: float) -> float:
    """Cramer rate ``1 - x + x log x`` of a unit-rate Poisson process."""
    if not x > 0:
        raise DomainError(f"rate function needs x > 0, got {x}")
    return 1.0 - x + x * math.log(x)


@dataclass(frozen=True)
class LdpEstimate:
    rate: float
    ci: tuple[float, float]
    frequency: float
    hits: int
    n: int
    event: str

    def to_dict(self) -> dict:
        return {"rate": self.rate, "ci": list(self.ci), "frequency": self.frequency,
                "hits": self.hits, "n": self.n, "event": self.event}


@njit(cache=True, nogil=True)
def _pathwise_hits(x, t, n, gen):
    # P_s <= x s for all s <= t iff it holds at every jump time, where
    # the k-th jump must satisfy k <= x T_k
    hits = 0
    for _ in range(n):
        s = 0.0
        k = 0
        ok = True
        while True:
            s += gen.standard_exponential()
            if s > t:
                break
            k += 1
            if k > x * s:
                ok = False
                break
        if ok:
            hits += 1
    return hits


def ldp_empirical(x: float, t: float, n_replicas: int = 1_000_000, event: str = "upper",
                  rng=0, *, workers=None) -> LdpEstimate:
    """``-(1/t) log`` of the Monte Carlo frequency of a Poisson deviation event.

    ``upper``: ``P_t >= x t`` (x > 1); ``lower``: ``P_t <= x t`` (0 < x < 1);
    ``pathwise-lower``: ``P_s <= x s`` for every ``s <= t``. The interval is a
    95% delta-method interval.
    """
    if event not in EVENTS:
        raise ValidationError(f"event must be one of {EVENTS}, got {event!r}")
    if event == "upper" and not x > 1:
        raise ValidationError(f"upper deviations need x > 1, got {x}")
    if event != "upper" and not (0 < x < 1):
        raise ValidationError(f"lower deviations need 0 < x < 1, got {x}")
    if not t > 0:
        raise ValidationError(f"t must be positive, got {t}")
    n = int(n_replicas)

    def task(c, size, gen):
        if event == "pathwise-lower":
            return np.array([_pathwise_hits(x, t, size, gen)])
        counts = gen.poisson(t, size)
        hit = counts >= x * t if event == "upper" else counts <= x * t
        return np.array([int(hit.sum())])

    parts = fan_out(task, n, as_stream(rng), chunk=1 << 16, workers=workers)
    hits = int(sum(int(p[0]) for p in parts))
    if hits == 0:
        raise NumericalError(f"no replica out of {n} realised the {event} event at x={x}, t={t}; "
                             "increase n_replicas or decrease t")
    freq = hits / n
    rate = -math.log(freq) / t
    se = math.sqrt(freq * (1.0 - freq) / n) / (freq * t)
    return LdpEstimate(rate, (rate - Z95 * se, rate + Z95 * se), freq, hits, n, event)


# ---------------------------------------------------------------------------
# regular variation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegVarFunction:
    """A positive function with declared regular-variation exponent.

    ``beta`` refers to ``f`` composed with the inverse cumulative intensity of
    whatever schedule it is integrated against. ``F`` is an optional
    antiderivative used for the compensator when the rate is constant.
    """

    f: Callable
    beta: float
    slowly_varying: str | None = None
    F: Callable | None = None
    name: str = ""

    def __call__(self, t):
        return self.f(t)

    @classmethod
    def power(cls, exponent: float, beta: float | None = None) -> "RegVarFunction":
        e = float(exponent)
        F = (lambda t: t ** (e + 1.0) / (e + 1.0)) if e > -1 else None
        return cls(lambda t: np.asarray(t, dtype=float) ** e, e if beta is None else beta,
                   F=F, name=f"t^{e:g}")


def cumulative_intensity(sched: RateSchedule) -> tuple[Callable, Callable]:
    """Evaluators for ``Lambda(t)`` and its generalised inverse."""
    return sched.Lambda, sched.Lambda_inv


def _compensator(f: RegVarFunction, sched: RateSchedule, t: float) -> float:
    """``int_0^t f kappa ds``."""
    if f.F is not None and sched.is_constant:
        return sched.pieces[0][3] * float(f.F(t))
    edges = [0.0] + [x for x in np.geomspace(1e-6, t, 40) if x < t] + [t]
    total = 0.0
    for a, c in zip(edges[:-1], edges[1:]):
        val, err = quad(lambda s: float(f(s)) * sched.kappa(s), a, c, limit=200)
        if not math.isfinite(val):
            raise NumericalError(f"compensator integral diverged on [{a}, {c}]")
        total += val
    return total


def _sample_partial_sums(f: RegVarFunction, sched: RateSchedule, t_grid: np.ndarray,
                         gen: np.random.Generator) -> np.ndarray:
    """``sum_{tau_k <= t} f(tau_k)`` at each grid time for one disaster path."""
    T = float(t_grid[-1])
    total = sched.Lambda(T)
    m = gen.poisson(total)
    # given the count, the levels Lambda(tau_k) are uniform on [0, Lambda(T)]
    us = np.sort(gen.uniform(0.0, total, m))
    tau = sched.Lambda_inv_many(us)
    vals = np.asarray(f(tau), dtype=float)
    cs = np.concatenate(([0.0], np.cumsum(vals)))
    return cs[np.searchsorted(tau, t_grid, side="right")]


@dataclass(frozen=True)
class DIntegralReport:
    beta: float
    t: float
    ratio_mean: float | None
    ratio_sd: float | None
    verdict: str
    fraction_within_5pct: float | None
    tail_increments: np.ndarray
    fraction_stable: float | None
    t_grid: np.ndarray
    ratio_series: np.ndarray | None
    sums: np.ndarray
    compensator: np.ndarray | None

    def to_dict(self) -> dict:
        return {
            "beta": self.beta, "t": self.t, "ratio_mean": self.ratio_mean,
            "ratio_sd": self.ratio_sd, "verdict": self.verdict,
            "fraction_within_5pct": self.fraction_within_5pct,
            "fraction_stable": self.fraction_stable,
            "tail_increment_max": float(np.max(self.tail_increments)) if len(self.tail_increments) else None,
        }

    def ratio_rows(self):
        if self.ratio_series is None:
            return []
        mean = self.ratio_series.mean(axis=0)
        sd = self.ratio_series.std(axis=0, ddof=1) if self.ratio_series.shape[0] > 1 else np.zeros_like(mean)
        return list(zip(self.t_grid.tolist(), mean.tolist(), sd.tolist()))


def d_integral_check(f: RegVarFunction, sched: RateSchedule, t_grid: Sequence[float],
                     n_replicas: int = 100, rng=0, *, stable_tol: float = 1e-4,
                     bound_alpha: float = 0.5) -> DIntegralReport:
    """Simulate ``int_0^t f dD = sum f(tau_k)`` and compare with its compensator.

    The verdict depends on the declared exponent: for ``beta > -1`` (and
    ``Lambda(inf) = inf``) the ratio at the last grid time should be near 1;
    for ``beta < -1`` the sums should have stopped moving (increment over the
    last grid interval below ``stable_tol``); for ``beta = -1`` the sums are
    checked against ``t^alpha`` and ``t^-alpha`` envelopes only.
    """
    t_grid = np.asarray(sorted(float(x) for x in t_grid))
    if len(t_grid) < 2 or t_grid[0] <= 0:
        raise ValidationError("t_grid needs at least two positive times")
    n = int(n_replicas)
    if n < 2:
        raise ValidationError("need at least two replicas")
    stream = as_stream(rng)

    def task(c, size, gen):
        return np.stack([_sample_partial_sums(f, sched, t_grid, gen) for _ in range(size)])

    sums = np.concatenate(fan_out(task, n, stream, chunk=16, threaded=False))
    incr = sums[:, -1] - sums[:, -2]
    T = float(t_grid[-1])
    finite_total = _finite_total_intensity(sched, T)

    ratio = comp = None
    mean = sd = within = stable = None
    if f.beta < -1 or finite_total:
        stable = float(np.mean(np.abs(incr) < stable_tol))
        verdict = "finite-limit" if stable >= 0.99 else "not-stabilised"
    elif f.beta == -1:
        lo, hi = T ** (-bound_alpha), T ** bound_alpha
        inside = (sums[:, -1] >= lo) & (sums[:, -1] <= hi)
        within = float(np.mean(inside))
        verdict = "polynomially-bounded" if within >= 0.95 else "bounds-violated"
    else:
        comp = np.array([_compensator(f, sched, t) for t in t_grid])
        ratio = sums / comp
        last = ratio[:, -1]
        mean, sd = float(last.mean()), float(last.std(ddof=1))
        within = float(np.mean(np.abs(last - 1.0) <= 0.05))
        verdict = "ratio-converges" if within >= 0.95 else "ratio-not-converged"
    return DIntegralReport(float(f.beta), T, mean, sd, verdict, within, incr, stable,
                           t_grid, ratio, sums, comp)


def _finite_total_intensity(sched: RateSchedule, T: float) -> bool:
    # Lambda stops growing over the last decade
    a, c = sched.Lambda(T / 10.0), sched.Lambda(T)
    return c - a <= 1e-12 * max(1.0, c)


def regvar_estimate_beta(f: Callable, t_grid: Sequence[float], *, decades: float = 2.0,
                         r2_min: float = 0.99) -> float:
    """Least-squares slope of ``log f`` against ``log t`` over the top ``decades`` of the grid.

    Warns with :class:`RegularVariationWarning` and returns ``nan`` when ``f``
    is not positive on that range; warns (but returns the slope) when the fit
    has ``R^2 < r2_min``.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or len(t) < 3 or np.any(t <= 0):
        raise ValidationError("t_grid must be at least three positive times")
    t = np.sort(t)
    span = math.log10(t[-1] / t[0])
    if span < 4.0 - 1e-9:
        warnings.warn(f"grid spans only {span:.2f} decades; slope may be biased",
                      RegularVariationWarning, stacklevel=2)
    top = t[t >= t[-1] / 10.0 ** decades]
    with np.errstate(all="ignore"):
        y = np.array([float(f(s)) for s in top])
    if not np.all(np.isfinite(y)) or np.any(y <= 0):
        warnings.warn("f is not positive and finite on the fitting range (underflow or sign change); "
                      "not regularly varying there", RegularVariationWarning, stacklevel=2)
        return float("nan")
    lx, ly = np.log(top), np.log(y)
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * lx + icpt)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    exact = np.max(np.abs(resid)) <= 1e-9 * max(1.0, float(np.max(np.abs(ly))))
    r2 = 1.0 if exact or ss_tot == 0 else 1.0 - float(np.sum(resid ** 2)) / ss_tot
    if r2 < r2_min:
        warnings.warn(f"poor log-log fit (R^2 = {r2:.4f}); f may not be regularly varying",
                      RegularVariationWarning, stacklevel=2)
    return float(slope)
