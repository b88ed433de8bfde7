"""Inhomogeneous birth-death processes under a given disaster path.

Conditioned on the disaster times ``tau_k`` the pgf of ``Z_t`` is explicit:
with ``L_t = v(t) - sum_{tau_k <= t} log(1/p(tau_k))`` and
``I_t = int_0^t exp(-L_s) b_s ds``,

    E_k[(1-x)^{Z_t} | disasters] = (1 - X_t)^k,  1/X_t = exp(-L_t)/x + I_t.

Everything here works with ``log I_t`` so long horizons neither overflow nor
underflow.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import adaptive_simpson, as_stream
from .errors import DomainError, ValidationError, RegularVariationWarning
from .parallel import fan_out, reduce_batches
from .schedule import RateSchedule, _logsumexp

__all__ = [
    "DisasterPath",
    "DualState",
    "LimitOutcome",
    "CriterionVerdict",
    "kendall_pgf",
    "sample_disaster_path",
    "sample_disaster_path_timechange",
    "dual_state",
    "dual_series",
    "conditioned_pgf",
    "classify_limit",
    "inhom_survival_mc",
    "check_inhom_criterion",
    "conditional_rate_estimate",
]

INF_LEVEL = 50.0
FLAT_TV = 1e-6
DEFAULT_HORIZON = 1e3


@dataclass(frozen=True, eq=False)
class DisasterPath:
    tau: np.ndarray
    p_at_tau: np.ndarray
    t_end: float = math.inf

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        pp = np.asarray(self.p_at_tau, dtype=float)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "p_at_tau", pp)
        if tau.shape != pp.shape:
            raise ValidationError("tau and p_at_tau must have equal length")
        if len(tau) > 1 and not np.all(np.diff(tau) > 0):
            raise ValidationError("disaster times must be strictly increasing")
        if np.any(pp <= 0) or np.any(pp > 1):
            raise ValidationError("disaster survival probabilities must lie in (0, 1]")

    @classmethod
    def empty(cls, t_end: float = math.inf) -> "DisasterPath":
        return cls(np.empty(0), np.empty(0), t_end)

    @classmethod
    def from_times(cls, sched: RateSchedule, tau: Sequence[float], t_end: float = math.inf) -> "DisasterPath":
        tau = np.asarray(tau, dtype=float)
        return cls(tau, np.array([sched.p(t) for t in tau]), t_end)

    def __len__(self) -> int:
        return len(self.tau)


@dataclass(frozen=True)
class DualState:
    t: float
    L: float
    log_I: float
    X: float

    @property
    def I(self) -> float:
        return math.exp(self.log_I) if self.log_I > -math.inf else 0.0


# ---------------------------------------------------------------------------
# disaster paths
# ---------------------------------------------------------------------------

def sample_disaster_path(sched: RateSchedule, t_end: float, rng=0, *,
                         kappa_bound: float | None = None) -> DisasterPath:
    """Inhomogeneous Poisson disaster times on ``[0, t_end]`` by thinning."""
    gen = as_stream(rng).generator()
    return _thin(sched, t_end, gen, kappa_bound)


def _thin(sched: RateSchedule, t_end: float, gen: np.random.Generator, kappa_bound=None) -> DisasterPath:
    K = sched.kappa_max(t_end) if kappa_bound is None else float(kappa_bound)
    if K <= 0:
        return DisasterPath.empty(t_end)
    if sched.is_constant:
        # constant intensity: every candidate is accepted
        n = gen.poisson(K * t_end)
        tau = np.sort(gen.uniform(0.0, t_end, n))
        return DisasterPath(tau, np.full(n, sched.p(0.0)), t_end)
    times = []
    t = 0.0
    while True:
        t += gen.standard_exponential() / K
        if t > t_end:
            break
        k = sched.kappa(t)
        if k > K * (1 + 1e-12):
            raise DomainError(f"kappa({t})={k} exceeds the thinning bound {K}")
        if gen.random() * K < k:
            times.append(t)
    tau = np.array(times)
    return DisasterPath(tau, np.array([sched.p(s) for s in tau]), t_end)


def sample_disaster_path_timechange(sched: RateSchedule, t_end: float, rng=0) -> DisasterPath:
    """Same law as :func:`sample_disaster_path`, via ``tau_k = Lambda^{-1}(E_1 + ... + E_k)``."""
    gen = as_stream(rng).generator()
    total = sched.Lambda(t_end)
    times = []
    u = 0.0
    while True:
        u += gen.standard_exponential()
        if u > total:
            break
        times.append(sched.Lambda_inv(u))
    tau = np.array(times)
    return DisasterPath(tau, np.array([sched.p(s) for s in tau]), t_end)


# ---------------------------------------------------------------------------
# the conditioned dual
# ---------------------------------------------------------------------------

def kendall_pgf(sched: RateSchedule, x: float, t0: float, t: float, k: int) -> float:
    """``E[(1-x)^{Z_t} | Z_{t0} = k]`` without disasters, by direct quadrature."""
    _check_x(x)
    if t < t0:
        raise ValidationError(f"need t >= t0, got t0={t0}, t={t}")
    if sched.Lambda(t) - sched.Lambda(t0) > 0:
        raise ValidationError("kendall_pgf needs kappa = 0 on [t0, t]")
    if x == 0.0:
        return 1.0
    v0 = sched.v(t0)
    integral = sched._integrate(lambda y: sched.b(y) * math.exp(v0 - sched.v(y)), t0, t)
    s_inv = math.exp(v0 - sched.v(t)) / x + integral
    return (1.0 - 1.0 / s_inv) ** k


def _check_x(x):
    if not (0.0 <= x <= 1.0):
        raise DomainError(f"x must lie in [0, 1], got {x}")


def _L_and_logI(sched: RateSchedule, path: DisasterPath, times: np.ndarray):
    """``L_t`` and ``log I_t`` at sorted ``times``."""
    times = np.asarray(times, dtype=float)
    tau = path.tau
    logp = np.log(path.p_at_tau)
    L_out = np.empty(len(times))
    I_out = np.empty(len(times))
    t_prev, L_prev, logI = 0.0, 0.0, -math.inf
    v_prev = 0.0
    j = 0
    for i, t in enumerate(times):
        # walk through disasters up to t
        while j < len(tau) and tau[j] <= t:
            s = tau[j]
            logI = _logsumexp([logI, -L_prev + sched.log_weighted_birth(t_prev, s)])
            v_s = sched.v(s)
            L_prev = L_prev + (v_s - v_prev) + logp[j]
            v_prev, t_prev = v_s, s
            j += 1
        logI_t = _logsumexp([logI, -L_prev + sched.log_weighted_birth(t_prev, t)])
        v_t = sched.v(t)
        L_out[i] = L_prev + (v_t - v_prev)
        I_out[i] = logI_t
        logI, L_prev, v_prev, t_prev = logI_t, L_out[i], v_t, t
    return L_out, I_out


def _log_dual_inverse(x: float, L: np.ndarray, logI: np.ndarray) -> np.ndarray:
    """``log(1/X_t) = log(exp(-L)/x + I)``."""
    return np.logaddexp(-L - math.log(x), logI)


def dual_series(sched: RateSchedule, path: DisasterPath, x: float, times) -> list[DualState]:
    _check_x(x)
    times = np.asarray(times, dtype=float)
    order = np.argsort(times, kind="stable")
    L, logI = _L_and_logI(sched, path, times[order])
    if x == 0.0:
        X = np.zeros(len(times))
    else:
        X = np.exp(-_log_dual_inverse(x, L, logI))
    out = [None] * len(times)
    for j, i in enumerate(order):
        out[i] = DualState(float(times[i]), float(L[j]), float(logI[j]), float(X[j]))
    return out


def dual_state(sched: RateSchedule, path: DisasterPath, x: float, t: float) -> DualState:
    return dual_series(sched, path, x, [t])[0]


def _pgf_from_X(X: float, k: int) -> float:
    if X >= 1.0:
        return 0.0 if k > 0 else 1.0
    return math.exp(k * math.log1p(-X))


def _survival_from_X(X: np.ndarray, k: int) -> np.ndarray:
    """``1 - (1-X)^k`` without cancellation for small ``X``."""
    X = np.asarray(X, dtype=float)
    with np.errstate(divide="ignore"):
        return -np.expm1(k * np.log1p(-np.minimum(X, 1.0)))


def conditioned_pgf(sched: RateSchedule, path: DisasterPath, x: float, t: float, k: int) -> float:
    """``E_k[(1-x)^{Z_t} | disaster path]``."""
    st = dual_state(sched, path, x, t)
    if not (0.0 <= st.X <= 1.0 + 1e-12):
        raise AssertionError(f"dual state X_t={st.X} left [0, 1]")
    return _pgf_from_X(min(st.X, 1.0), k)


# ---------------------------------------------------------------------------
# limits as t -> infinity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LimitOutcome:
    outcome: str
    value: float | None
    L_limit: float | None
    I_limit: float | None
    finite_activity: bool | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {"outcome": self.outcome, "value": self.value, "L_limit": _fin(self.L_limit),
                "I_limit": _fin(self.I_limit), "finite_activity": self.finite_activity,
                "detail": self.detail}


def _fin(v):
    if v is None:
        return None
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def _tail_behaviour(t: np.ndarray, y: np.ndarray, decade_start: float) -> str:
    """'+inf', '-inf', 'finite' or 'unknown' from the last decade of a series."""
    tail = y[t >= decade_start]
    if len(tail) < 2:
        return "unknown"
    d = np.diff(tail)
    # jumps make L_t non-monotone, so only the trend across the decade is checked
    if tail.min() > INF_LEVEL and tail[-1] >= tail[0]:
        return "+inf"
    if tail.max() < -INF_LEVEL and tail[-1] <= tail[0]:
        return "-inf"
    if np.abs(d).sum() < FLAT_TV:
        return "finite"
    return "unknown"


def classify_limit(sched: RateSchedule, path: DisasterPath, x: float, k: int, *,
                   t_max: float | None = None, n_grid: int = 200,
                   L_limit: float | None = None, I_limit: float | None = None) -> LimitOutcome:
    """Which of the three long-run regimes the conditioned pgf falls into.

    Limits of ``L_t`` and ``I_t`` are detected from the last decade of a
    geometric grid up to ``t_max`` (default: the path horizon, or 1000 for an
    unbounded path), unless the caller declares them. The path should cover
    the whole grid, since disasters after its last time are not seen.
    """
    _check_x(x)
    if t_max is not None:
        T = float(t_max)
    else:
        T = path.t_end if math.isfinite(path.t_end) else DEFAULT_HORIZON
    if len(path) and path.tau[-1] > T:
        raise ValidationError(f"disaster path extends past the horizon {T}")
    grid = np.geomspace(min(1.0, T / 1e3), T, n_grid)
    L, logI = _L_and_logI(sched, path, grid)
    start = T / 10.0

    if L_limit is None:
        lb = _tail_behaviour(grid, L, start)
        L_lim = {"+inf": math.inf, "-inf": -math.inf, "finite": float(L[-1])}.get(lb)
    else:
        L_lim = float(L_limit)
    if I_limit is None:
        Ib = "finite" if logI[-1] == -math.inf else _tail_behaviour(grid, logI, start)
        I_lim = None
        if Ib == "+inf":
            I_lim = math.inf
        elif Ib == "finite":
            I_lim = math.exp(logI[-1]) if logI[-1] > -math.inf else 0.0
    else:
        I_lim = float(I_limit)

    act = _tail_behaviour(grid, np.array([sched.activity(t) for t in grid]), start)
    n_tail = np.sum((path.tau >= start) & (path.p_at_tau < 1.0))
    finite_activity = bool(act == "finite" and n_tail == 0)

    if L_lim == -math.inf or I_lim == math.inf:
        return LimitOutcome("extinction-sure", 1.0, L_lim, I_lim, finite_activity)
    if L_lim is None or I_lim is None:
        return LimitOutcome("inconclusive", None, L_lim, I_lim, finite_activity,
                            "L_t or I_t shows no settled tail on the last decade of the grid")
    if L_lim == math.inf:
        if I_lim <= 1.0:
            # 1 - 1/I would be negative; the limit pgf is 0 only if I = 1
            return LimitOutcome("inconclusive", None, L_lim, I_lim, finite_activity,
                                "I limit not above 1")
        return LimitOutcome("x-independent", (1.0 - 1.0 / I_lim) ** k, L_lim, I_lim, finite_activity)
    if x == 0.0:
        return LimitOutcome("x-dependent", 1.0, L_lim, I_lim, finite_activity)
    val = (1.0 - x / (math.exp(-L_lim) + x * I_lim)) ** k
    return LimitOutcome("x-dependent", val, L_lim, I_lim, finite_activity)


# ---------------------------------------------------------------------------
# survival over random disaster paths
# ---------------------------------------------------------------------------

def _constant_survival(sched: RateSchedule, t: float, k: int, n: int, gen) -> np.ndarray:
    """Vectorised ``1 - (1 - X_t)^k`` at ``x = 1`` for constant rates."""
    _, b, d, kappa, p = sched.pieces[0]
    delta = b - d
    lp = math.log(p) if p > 0 else -math.inf
    out = np.empty(n)
    counts = gen.poisson(kappa * t, n)
    for r in range(n):
        m = counts[r]
        tau = np.sort(gen.uniform(0.0, t, m))
        edges = np.concatenate(([0.0], tau, [t]))
        dt = np.diff(edges)
        # L at the start of each inter-disaster segment
        L0 = delta * edges[:-1] + lp * np.arange(m + 1)
        if b > 0:
            if abs(delta) < 1e-300:
                le = np.log(dt)
            elif delta > 0:
                le = np.log(-np.expm1(-delta * dt)) - math.log(delta)
            else:
                le = -delta * dt + np.log(-np.expm1(delta * dt)) - math.log(-delta)
            with np.errstate(divide="ignore"):
                terms = math.log(b) - L0 + le
            finite = terms[np.isfinite(terms)]
            logI = np.logaddexp.reduce(finite) if len(finite) else -math.inf
        else:
            logI = -math.inf
        L_t = delta * t + lp * m
        X = math.exp(-np.logaddexp(-L_t, logI))
        out[r] = -math.expm1(k * math.log1p(-min(X, 1.0))) if X < 1.0 else 1.0
    return out


def inhom_survival_mc(sched: RateSchedule, t: float, k: int = 1, n_paths: int = 10_000,
                      rng=0, *, workers=None) -> tuple[float, float]:
    """``P_k(Z_t > 0)`` averaged over sampled disaster paths, with standard error."""
    if t < 0:
        raise ValidationError(f"t must be non-negative, got {t}")
    if k == 0:
        return 0.0, 0.0
    if t == 0:
        return 1.0, 0.0
    stream = as_stream(rng)

    def task(c, size, gen):
        if sched.is_constant:
            return _constant_survival(sched, t, k, size, gen)
        vals = np.empty(size)
        for r in range(size):
            path = _thin(sched, t, gen)
            st = dual_state(sched, path, 1.0, t)
            vals[r] = _survival_from_X(st.X, k)
        return vals

    parts = fan_out(task, int(n_paths), stream, chunk=2048, threaded=False, workers=workers)
    acc = reduce_batches(parts)
    return float(acc.mean), float(acc.std_err)


# ---------------------------------------------------------------------------
# survival criterion and conditional rates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CriterionVerdict:
    verdict: str
    iota: float | None
    ratio_tail: tuple[float, ...]
    integral: float | None
    integral_tail_fraction: float | None
    rv_beta: float | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "iota": self.iota, "ratio_tail": list(self.ratio_tail),
                "integral": self.integral, "integral_tail_fraction": self.integral_tail_fraction,
                "rv_beta": self.rv_beta, "detail": self.detail}


def _decade_integrals(g: Callable[[float], float], T: float) -> np.ndarray:
    edges = [0.0, 1.0]
    while edges[-1] < T:
        edges.append(min(edges[-1] * 10.0, T))
    parts = [adaptive_simpson(g, a, c, 1e-12) for a, c in zip(edges[:-1], edges[1:])]
    return np.cumsum(parts)


def check_inhom_criterion(sched: RateSchedule, h: Callable[[float], float], eps: float, *,
                          T: float = 1e4, n_grid: int = 60, iota_tol: float = 0.05) -> CriterionVerdict:
    """Survival criterion via ``ell(t)/h(t) -> iota`` and the integrals of ``exp(-(1 -+ eps) h) b``.

    Returns 'survival-possible', 'extinction-sure' or 'inconclusive'.
    """
    if not (0.0 < eps < 1.0):
        raise ValidationError(f"eps must lie in (0, 1), got {eps}")
    grid = np.geomspace(1.0, T, n_grid)
    ratio = np.array([sched.ell(t) / h(t) for t in grid])
    tail = ratio[grid >= T / 10.0]
    rv_beta = _rv_check(sched, T)
    iota = None
    for cand in (1.0, -1.0):
        if np.all(np.abs(tail - cand) <= iota_tol):
            iota = cand
    if iota is None:
        return CriterionVerdict("inconclusive", None, tuple(tail), None, None, rv_beta,
                                "ell(t)/h(t) does not settle at +1 or -1")
    if iota == -1.0:
        return CriterionVerdict("extinction-sure", -1.0, tuple(tail), None, None, rv_beta, "iota = -1")

    def g_minus(s):
        return math.exp(-(1.0 - eps) * h(s)) * sched.b(s)

    cum = _decade_integrals(g_minus, T)
    total = float(cum[-1])
    frac = float((cum[-1] - cum[-2]) / cum[-1]) if len(cum) > 1 and cum[-1] > 0 else 0.0
    if frac < 1e-6:
        return CriterionVerdict("survival-possible", 1.0, tuple(tail), total, frac, rv_beta,
                                "integral with (1 - eps) converges")

    def g_plus(s):
        return math.exp(-(1.0 + eps) * h(s)) * sched.b(s)

    cum_p = _decade_integrals(g_plus, T)
    steps = np.diff(cum_p)
    if len(steps) >= 2 and np.all(steps[-2:] > 0) and steps[-1] >= steps[-2]:
        return CriterionVerdict("extinction-sure", 1.0, tuple(tail), float(cum_p[-1]), None, rv_beta,
                                "integral with (1 + eps) keeps growing")
    return CriterionVerdict("inconclusive", 1.0, tuple(tail), total, frac, rv_beta,
                            "neither integral condition settles before the cutoff")


def _rv_check(sched: RateSchedule, T: float) -> float | None:
    """Exponent of ``-log p(Lambda^{-1}(u))``, reported only."""
    from .regvar import regvar_estimate_beta

    total = sched.Lambda(T)
    if not total > 1.0:
        return None
    us = np.geomspace(max(total / 1e4, 1e-3), total, 50)

    def f(u):
        s = sched.Lambda_inv(u)
        return -math.log(sched.p(s)) if math.isfinite(s) else float("nan")

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RegularVariationWarning)
            return float(regvar_estimate_beta(f, us, decades=min(2.0, math.log10(us[-1] / us[0]))))
    except Exception:
        return None


@dataclass(frozen=True)
class RateSeries:
    t: np.ndarray
    rate: np.ndarray
    proxy: np.ndarray

    def to_rows(self):
        return zip(self.t.tolist(), self.rate.tolist(), self.proxy.tolist())


def conditional_rate_estimate(sched: RateSchedule, path: DisasterPath, k: int, t_grid, *,
                              h: Callable[[float], float] | None = None) -> RateSeries:
    """``-(1/h(t)) log P_k(Z_t > 0 | disasters)`` and its proxy ``max(-L_t, log I_t)/h(t)``.

    ``h`` defaults to ``h(t) = t``; the grid must stay away from ``t = 0``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 1.0):
        raise ValidationError("t_grid must start at t >= 1")
    h = (lambda t: t) if h is None else h
    order = np.argsort(t_grid, kind="stable")
    L, logI = _L_and_logI(sched, path, t_grid[order])
    log_inv_X = _log_dual_inverse(1.0, L, logI)
    X = np.exp(-log_inv_X)
    with np.errstate(divide="ignore"):
        surv = _survival_from_X(X, k)
        log_surv = np.where(X < 1e-8, math.log(k) - log_inv_X, np.log(surv))
    hv = np.array([h(t) for t in t_grid[order]])
    rate = np.empty(len(t_grid))
    proxy = np.empty(len(t_grid))
    rate[order] = -log_surv / hv
    proxy[order] = np.maximum(-L, logI) / hv
    return RateSeries(t_grid, rate, proxy)
