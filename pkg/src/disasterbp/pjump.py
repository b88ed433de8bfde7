"""Simulation of p-jump processes and Monte Carlo functionals of them.

A p-jump process follows ``dx/dt = alpha(x)`` and is multiplied by ``p`` at
the points of a rate-``kappa`` Poisson process. Rates other than 1 are handled
by drawing inter-jump times as ``Exp(1)/kappa``, which is the unit-rate clock
read through the time change ``s = kappa*t``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import analytics
from .core import DriftSpec, PathRecord, as_stream, drift_characteristics
from .errors import RegimeError, ValidationError, NumericWarning
from .ode import KIND_NAMES, g_size, get_kernels, raise_for_status
from .parallel import fan_out, reduce_batches

__all__ = [
    "PJumpConfig",
    "MomentEstimate",
    "DecayRateEstimate",
    "StationaryReport",
    "simulate_pjump",
    "sample_states",
    "estimate_moment",
    "estimate_decay_rate",
    "ergodic_average",
    "ergodic_averages",
    "stationary_moment_check",
    "auto_tilt",
]

UNDERFLOW_LIMIT = 1e-300


@dataclass(frozen=True)
class PJumpConfig:
    drift: DriftSpec
    p: float
    x0: float
    t_end: float = 10.0
    kappa: float = 1.0
    ode_step: float = math.inf

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise ValidationError(f"p must lie in [0, 1], got {self.p}")
        if not self.kappa > 0:
            raise ValidationError(f"kappa must be positive, got {self.kappa}")
        if not (0.0 <= self.x0 <= self.drift.domain_end):
            raise ValidationError(f"x0={self.x0} is outside [0, {self.drift.domain_end}]")
        if not math.isfinite(self.drift.s_alpha):
            raise ValidationError("drift is positive arbitrarily far out (s_alpha = inf); "
                                  "paths would not stay bounded")
        if not self.t_end >= 0:
            raise ValidationError(f"t_end must be non-negative, got {self.t_end}")
        if not self.ode_step > 0:
            raise ValidationError(f"ode_step must be positive, got {self.ode_step}")

    @classmethod
    def from_alpha(cls, alpha, p, x0, *, domain_end=1.0, **kw) -> "PJumpConfig":
        return cls(drift_characteristics(alpha, domain_end), p, x0, **kw)

    @property
    def upper(self) -> float:
        """Paths never exceed ``max(x0, s_alpha)``."""
        return min(self.drift.upper_bound(self.x0), self.drift.domain_end)

    @property
    def regime(self) -> str:
        return analytics.pjump_regime(self.drift, self.p, self.kappa)

    def replace(self, **kw) -> "PJumpConfig":
        d = dict(drift=self.drift, p=self.p, x0=self.x0, t_end=self.t_end,
                 kappa=self.kappa, ode_step=self.ode_step)
        d.update(kw)
        return PJumpConfig(**d)


@dataclass(frozen=True)
class MomentEstimate:
    k: int
    t: float
    value: float
    std_err: float
    n_replicas: int


@dataclass(frozen=True)
class DecayRateEstimate:
    rate: float
    std_err: float
    times: np.ndarray = field(repr=False)
    log_moments: np.ndarray = field(repr=False)
    tilt: float | None = None


@dataclass(frozen=True)
class StationaryReport:
    """Both sides of the stationary identities for k = 1..k_max."""

    log_identity: tuple[float, float]
    lhs: tuple[float, ...]
    rhs: tuple[float, ...]
    t_burnin: float
    t_end: float

    @property
    def log_identity_rel_error(self) -> float:
        est, target = self.log_identity
        return abs(est - target) / abs(target)

    @property
    def rel_errors(self) -> tuple[float, ...]:
        return tuple(abs(a - b) / abs(a) for a, b in zip(self.lhs, self.rhs))

    def to_dict(self) -> dict:
        return {
            "log_identity": {"estimate": self.log_identity[0], "target": self.log_identity[1],
                             "rel_error": self.log_identity_rel_error},
            "moments": [{"k": k + 1, "lhs": a, "rhs": b, "rel_error": e}
                        for k, (a, b, e) in enumerate(zip(self.lhs, self.rhs, self.rel_errors))],
            "t_burnin": self.t_burnin,
            "t_end": self.t_end,
        }


def simulate_pjump(cfg: PJumpConfig, rng=0, checkpoints=None) -> PathRecord:
    """One path, recording every jump and optional ODE checkpoints."""
    stream = as_stream(rng)
    kern = get_kernels(cfg.drift.alpha)
    checks = np.unique(np.asarray([] if checkpoints is None else checkpoints, dtype=float))
    checks = checks[(checks > 0) & (checks < cfg.t_end)]
    ts, vs, pre, kinds, st = kern.sim_path(float(cfg.x0), float(cfg.p), float(cfg.kappa),
                                           float(cfg.t_end), checks, float(cfg.ode_step),
                                           float(cfg.upper), stream.generator())
    raise_for_status(int(st), "simulate_pjump")
    return PathRecord(np.array(ts), np.array(vs), tuple(KIND_NAMES[k] for k in kinds),
                      seed=stream.seed, stream_id=stream.stream_id,
                      pre_values=np.array(pre))


def auto_tilt(cfg: PJumpConfig, k: int = 1) -> float | None:
    """Jump rate for importance sampling of ``E[X_t^k]`` in the decaying regime.

    The dominant paths carry fewer jumps than typical ones; simulating at the
    jump intensity of those paths makes the estimator asymptotically
    efficient (and exact when the drift is linear near zero).
    Returns None when no tilt is known for the configuration.
    """
    d = cfg.drift
    if cfg.p == 0.0:
        return 0.0
    if cfg.p >= 1.0 or not d.concave or not math.isfinite(d.alpha0_slope):
        return None
    L = math.log(1.0 / cfg.p)
    a0 = d.alpha0_slope
    if a0 >= cfg.kappa * L:
        return None
    if a0 <= cfg.kappa * cfg.p ** k * L:
        return cfg.kappa * cfg.p ** k
    return a0 / L


def _resolve_tilt(cfg: PJumpConfig, tilt, k: int) -> float | None:
    if tilt is None:
        return None
    if tilt == "auto":
        return auto_tilt(cfg, k)
    tilt = float(tilt)
    if tilt < 0:
        raise ValidationError(f"tilted jump rate must be non-negative, got {tilt}")
    if tilt == 0.0 and cfg.p > 0.0:
        raise ValidationError("a zero tilted jump rate is only valid when p = 0")
    return tilt


def sample_states(cfg: PJumpConfig, times, n_replicas: int, rng=0, *, tilt=None,
                  x0: float | None = None, workers=None):
    """States ``X`` (replicas x times) and log importance weights.

    With ``tilt=None`` the weights are all zero. Replicas reuse one path across
    all requested times.
    """
    stream = as_stream(rng)
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or np.any(times < 0):
        raise ValidationError("times must be non-negative and sorted")
    kern = get_kernels(cfg.drift.alpha)
    kappa_sim = cfg.kappa if tilt is None else float(tilt)
    start = float(cfg.x0 if x0 is None else x0)
    upper = float(max(cfg.upper, start))

    def task(c, size, gen):
        X, N, st = kern.sample_at_times(start, float(cfg.p), kappa_sim, times,
                                        float(cfg.ode_step), upper, size, gen)
        raise_for_status(int(st), "sample_states")
        return X, N

    parts = fan_out(task, int(n_replicas), stream, threaded=kern.jitted, workers=workers)
    X = np.concatenate([a for a, _ in parts], axis=0)
    N = np.concatenate([b for _, b in parts], axis=0)
    if tilt is None:
        logw = np.zeros_like(X)
    elif kappa_sim == 0.0:
        logw = np.broadcast_to(-cfg.kappa * times, X.shape).copy()
    else:
        logw = N * math.log(cfg.kappa / kappa_sim) - (cfg.kappa - kappa_sim) * times
    return X, logw


def estimate_moment(cfg: PJumpConfig, k: int, times, n_replicas: int = 1000, rng=0, *,
                    tilt=None, workers=None) -> list[MomentEstimate]:
    """Monte Carlo ``E[X_t^k]`` with standard errors at each time in ``times``."""
    if n_replicas < 100:
        raise ValidationError(f"n_replicas must be at least 100, got {n_replicas}")
    if int(k) < 1:
        raise ValidationError(f"moment order must be a positive integer, got {k}")
    times = np.asarray(times, dtype=float)
    order = np.argsort(times, kind="stable")
    rate = _resolve_tilt(cfg, tilt, k)
    X, logw = sample_states(cfg, times[order], n_replicas, rng, tilt=rate, workers=workers)
    vals = X ** k * np.exp(logw)
    acc = reduce_batches([vals], (len(times),))
    out = [None] * len(times)
    for j, i in enumerate(order):
        se = float(acc.std_err[j]) if np.isfinite(acc.std_err[j]) else 0.0
        out[i] = MomentEstimate(int(k), float(times[i]), float(acc.mean[j]), se, int(n_replicas))
    return out


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    xm = x.mean()
    sxx = ((x - xm) ** 2).sum()
    slope = ((x - xm) * (y - y.mean())).sum() / sxx
    resid = y - y.mean() - slope * (x - xm)
    if len(x) > 2:
        se = math.sqrt((resid ** 2).sum() / (len(x) - 2) / sxx)
    else:
        se = 0.0
    return float(slope), float(se)


def estimate_decay_rate(cfg: PJumpConfig, k: int = 1, t_window=None, n_replicas: int = 10000,
                        rng=0, *, tilt="auto", n_times: int = 16, workers=None) -> DecayRateEstimate:
    """Least-squares slope of ``-log E[X_t^k]`` over ``t_window``.

    The window defaults to ``[0.3*t_end, t_end]``. ``tilt='auto'`` enables the
    importance-sampling jump rate from :func:`auto_tilt`.
    """
    regime = cfg.regime
    if regime not in ("subcritical", "p-zero"):
        raise RegimeError(f"decay rates need the decaying regime, configuration is {regime}")
    if t_window is None:
        t_window = (0.3 * cfg.t_end, cfg.t_end)
    lo, hi = map(float, t_window)
    if not hi > lo >= 0:
        raise ValidationError(f"bad time window {t_window}")
    times = np.linspace(lo, hi, n_times)
    rate = _resolve_tilt(cfg, tilt, k)
    est = estimate_moment(cfg, k, times, n_replicas, rng, tilt=rate, workers=workers)
    m = np.array([e.value for e in est])
    if np.any(m < UNDERFLOW_LIMIT):
        warnings.warn("moment estimates underflow below 1e-300; use a shorter horizon",
                      NumericWarning, stacklevel=2)
        keep = m >= UNDERFLOW_LIMIT
        times, m = times[keep], m[keep]
        if len(times) < 2:
            raise RegimeError("all moment estimates underflowed")
    y = -np.log(m)
    slope, se = _ols(times, y)
    return DecayRateEstimate(slope, se, times, -y, rate)


def _check_ergodic(cfg: PJumpConfig, t_burnin: float, t_end: float):
    regime = cfg.regime
    if regime != "supercritical":
        raise RegimeError(f"ergodic averages need the supercritical regime, got {regime}; "
                          "the stationary law is degenerate at 0")
    if t_end < 10 * t_burnin:
        raise ValidationError(f"t_end={t_end} must be at least 10 * t_burnin={t_burnin}")
    if cfg.x0 <= 0:
        raise ValidationError("ergodic averages need x0 > 0")


def ergodic_averages(cfg: PJumpConfig, k_max: int, t_burnin: float, t_end: float, rng=0,
                     f=None) -> dict:
    """Time averages of 1, alpha/x, x^k and x^(k-1) alpha over ``[t_burnin, t_end]``."""
    _check_ergodic(cfg, t_burnin, t_end)
    stream = as_stream(rng)
    kern = get_kernels(cfg.drift.alpha, f)
    ng = g_size(k_max, f is not None)
    acc, _, st = kern.ergodic(float(cfg.x0), float(cfg.p), float(cfg.kappa), float(t_burnin),
                              float(t_end), float(cfg.ode_step), float(cfg.upper), int(k_max),
                              ng, stream.generator())
    raise_for_status(int(st), "ergodic")
    acc = np.asarray(acc)
    out = {
        "alpha_over_x": acc[1] / acc[0],
        "x_pow": [acc[2 + j] / acc[0] for j in range(k_max)],
        "x_pow_alpha": [acc[2 + k_max + j] / acc[0] for j in range(k_max)],
        "duration": acc[0],
    }
    if f is not None:
        out["f"] = acc[-1] / acc[0]
    return out


def ergodic_average(cfg: PJumpConfig, f, t_burnin: float, t_end: float, rng=0) -> float:
    """Long-run time average of ``f(X_s)``, an estimate of ``E[f(X_inf)]``."""
    res = ergodic_averages(cfg, 0, t_burnin, t_end, rng, f=f)
    return float(res["f"])


def stationary_moment_check(cfg: PJumpConfig, k_max: int = 3, t_end: float = 1e5, rng=0,
                            t_burnin: float | None = None) -> StationaryReport:
    """Compare ``E[X^k]`` with ``k E[X^(k-1) alpha(X)] / (kappa (1 - p^k))``."""
    if t_burnin is None:
        t_burnin = min(1e3, t_end / 10)
    res = ergodic_averages(cfg, k_max, t_burnin, t_end, rng)
    lhs, rhs = [], []
    for k in range(1, k_max + 1):
        lhs.append(float(res["x_pow"][k - 1]))
        rhs.append(float(k * res["x_pow_alpha"][k - 1] / (cfg.kappa * (1.0 - cfg.p ** k))))
    target = cfg.kappa * math.log(1.0 / cfg.p)
    return StationaryReport((float(res["alpha_over_x"]), target), tuple(lhs), tuple(rhs),
                            float(t_burnin), float(t_end))
