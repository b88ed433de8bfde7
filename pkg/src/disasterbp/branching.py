"""Branching processes with binomial disasters.

Each of ``z`` individuals branches at rate ``lam`` into ``k ~ q`` offspring;
at rate ``kappa`` a disaster keeps every individual independently with
probability ``p``. Two exact simulators are provided:

* ``gillespie``: event by event, total rate ``lam*z + kappa``;
* ``kendall``: for birth-death laws (support in {0, 1, 2}) the population is
  propagated between disasters with the closed-form linear birth-death
  transition law, so cost is O(number of disasters) whatever the size.

A population reaching ``pop_cap`` is flagged as exploded (stored as -1). It
is treated as surviving, except that a disaster with ``p = 0`` still kills it.
The default cap depends on the method: Kendall steps cost the same at any
size, so their cap sits near the int64 range; Gillespie pays per event.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import OffspringLaw, PathRecord, as_stream, branching_dual_drift, drift_characteristics
from .errors import ValidationError
from .parallel import fan_out, reduce_batches
from .pjump import PJumpConfig, sample_states

__all__ = [
    "BranchingConfig",
    "DualityReport",
    "SurvivalCurve",
    "simulate_branching",
    "sample_population",
    "survival_probability_mc",
    "survival_curve_splitting",
    "duality_check",
    "duality_grid",
    "post_disaster_sizes",
]

EXPLODED = -1
METHODS = ("auto", "gillespie", "kendall")
DEFAULT_CAPS = {"gillespie": 10_000_000, "kendall": 10 ** 15}


@dataclass(frozen=True)
class BranchingConfig:
    lam: float
    law: OffspringLaw
    kappa: float
    p: float
    z0: int = 1
    t_end: float = 10.0
    pop_cap: int | None = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValidationError(f"lambda must be positive, got {self.lam}")
        if not self.kappa > 0:
            raise ValidationError(f"kappa must be positive, got {self.kappa}")
        if not (0.0 <= self.p <= 1.0):
            raise ValidationError(f"p must lie in [0, 1], got {self.p}")
        if int(self.z0) != self.z0 or self.z0 < 0:
            raise ValidationError(f"z0 must be a non-negative integer, got {self.z0}")
        if not self.t_end >= 0:
            raise ValidationError(f"t_end must be non-negative, got {self.t_end}")
        if self.pop_cap is not None and not (2 <= int(self.pop_cap) <= 10 ** 16):
            raise ValidationError(f"pop_cap must lie in [2, 1e16], got {self.pop_cap}")

    @classmethod
    def birth_death(cls, b: float, d: float, kappa: float, p: float, **kw) -> "BranchingConfig":
        lam, law = OffspringLaw.birth_death(b, d)
        return cls(lam, law, kappa, p, **kw)

    @property
    def birth_rate(self) -> float:
        return self.lam * self.law.prob(2)

    @property
    def death_rate(self) -> float:
        return self.lam * self.law.prob(0)

    def resolve_method(self, method: str) -> str:
        if method not in METHODS:
            raise ValidationError(f"unknown method {method!r}; choose from {METHODS}")
        if method == "auto":
            return "kendall" if self.law.is_birth_death else "gillespie"
        if method == "kendall" and not self.law.is_birth_death:
            raise ValidationError("the kendall method needs offspring support within {0, 1, 2}")
        return method

    def cap_for(self, method: str) -> int:
        if self.pop_cap is not None:
            return int(self.pop_cap)
        return DEFAULT_CAPS[self.resolve_method(method)]

    def replace(self, **kw) -> "BranchingConfig":
        d = dict(lam=self.lam, law=self.law, kappa=self.kappa, p=self.p, z0=self.z0,
                 t_end=self.t_end, pop_cap=self.pop_cap)
        d.update(kw)
        return BranchingConfig(**d)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _offspring(ks, cum, rng):
    u = rng.random()
    for i in range(cum.shape[0]):
        if u < cum[i]:
            return ks[i]
    return ks[-1]


@njit(cache=True, nogil=True)
def _exploded_fate(remaining, kappa, p, rng):
    if p == 0.0 and rng.standard_exponential() / kappa < remaining:
        return 0
    return -1


@njit(cache=True, nogil=True)
def _advance_gillespie(z, dur, lam, ks, cum, kappa, p, cap, rng):
    t = 0.0
    while True:
        if z == 0:
            return 0
        if z < 0:
            return _exploded_fate(dur - t, kappa, p, rng)
        R = lam * z + kappa
        t += rng.standard_exponential() / R
        if t > dur:
            return z
        if rng.random() * R < kappa:
            z = rng.binomial(z, p)
        else:
            z += _offspring(ks, cum, rng) - 1
            if z >= cap:
                z = -1


@njit(cache=True, nogil=True)
def _bd_transition(z, s, b, d, cap, rng):
    """Linear birth-death population after time ``s`` without disasters."""
    delta = b - d
    x = delta * s
    r = s if abs(x) < 1e-10 else math.expm1(x) / delta
    den = b * r + 1.0
    a = d * r / den
    K = rng.binomial(z, 1.0 - a)
    if K == 0:
        return 0
    scale = b * r
    if scale <= 0.0:
        return K
    if K * (1.0 + scale) > 100.0 * cap:
        return -1
    z = K + rng.poisson(rng.gamma(K, scale))
    if z >= cap:
        return -1
    return z


@njit(cache=True, nogil=True)
def _advance_kendall(z, dur, b, d, kappa, p, cap, rng):
    t = 0.0
    while True:
        if z == 0:
            return 0
        if z < 0:
            return _exploded_fate(dur - t, kappa, p, rng)
        rem = dur - t
        w = rng.standard_exponential() / kappa
        if w >= rem:
            return _bd_transition(z, rem, b, d, cap, rng)
        z = _bd_transition(z, w, b, d, cap, rng)
        t += w
        if z > 0:
            z = rng.binomial(z, p)
        elif z < 0 and p == 0.0:
            z = 0


@njit(cache=True, nogil=True)
def _advance(z, dur, method, lam, ks, cum, b, d, kappa, p, cap, rng):
    if dur <= 0.0:
        return z
    if method == 1:
        return _advance_kendall(z, dur, b, d, kappa, p, cap, rng)
    return _advance_gillespie(z, dur, lam, ks, cum, kappa, p, cap, rng)


@njit(cache=True, nogil=True)
def _sample_times(z0, times, n, method, lam, ks, cum, b, d, kappa, p, cap, rng):
    m = times.shape[0]
    Z = np.empty((n, m), dtype=np.int64)
    for r in range(n):
        z = z0
        t = 0.0
        for j in range(m):
            z = _advance(z, times[j] - t, method, lam, ks, cum, b, d, kappa, p, cap, rng)
            t = times[j]
            Z[r, j] = z
    return Z


@njit(cache=True, nogil=True)
def _split_group(z0, dt, n_steps, n_part, method, lam, ks, cum, b, d, kappa, p, cap, rng):
    """Fixed-effort splitting: log survival fractions at each checkpoint."""
    pop = np.full(n_part, z0, dtype=np.int64)
    alive = np.empty(n_part, dtype=np.int64)
    logf = np.full(n_steps, -np.inf)
    for j in range(n_steps):
        na = 0
        for i in range(n_part):
            z = _advance(pop[i], dt, method, lam, ks, cum, b, d, kappa, p, cap, rng)
            if z != 0:
                alive[na] = z
                na += 1
        if na == 0:
            return logf
        logf[j] = math.log(na / n_part)
        for i in range(n_part):
            pop[i] = alive[rng.integers(0, na)]
    return logf


@njit(cache=True, nogil=True)
def _path_gillespie(z0, t_end, lam, ks, cum, kappa, p, cap, rng):
    cap_rec = 64
    ts = np.empty(cap_rec)
    vs = np.empty(cap_rec, dtype=np.int64)
    kinds = np.empty(cap_rec, dtype=np.int8)
    ts[0] = 0.0
    vs[0] = z0
    kinds[0] = 0
    n = 1
    z = z0
    t = 0.0
    exploded = False
    while z > 0:
        R = lam * z + kappa
        t += rng.standard_exponential() / R
        if t > t_end:
            break
        if rng.random() * R < kappa:
            z = rng.binomial(z, p)
            kind = 1
        else:
            k = _offspring(ks, cum, rng)
            z += k - 1
            kind = 2 if k == 0 else (3 if k == 1 else 4)
        if n >= ts.shape[0]:
            ts2 = np.empty(2 * n)
            vs2 = np.empty(2 * n, dtype=np.int64)
            kd2 = np.empty(2 * n, dtype=np.int8)
            ts2[:n] = ts[:n]
            vs2[:n] = vs[:n]
            kd2[:n] = kinds[:n]
            ts, vs, kinds = ts2, vs2, kd2
        ts[n] = t
        vs[n] = z
        kinds[n] = kind
        n += 1
        if z >= cap:
            exploded = True
            break
    return ts[:n], vs[:n], kinds[:n], exploded


_KINDS = ("start", "disaster", "death", "branch", "birth", "end")


def _kernel_args(cfg: BranchingConfig, method: str):
    ks, cum = cfg.law.sampling_table()
    return (1 if method == "kendall" else 0, float(cfg.lam), ks, cum,
            float(cfg.birth_rate), float(cfg.death_rate), float(cfg.kappa), float(cfg.p),
            cfg.cap_for(method))


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def simulate_branching(cfg: BranchingConfig, rng=0) -> PathRecord:
    """One event-by-event path up to absorption, ``t_end`` or ``pop_cap``."""
    stream = as_stream(rng)
    ks, cum = cfg.law.sampling_table()
    ts, vs, kinds, exploded = _path_gillespie(int(cfg.z0), float(cfg.t_end), float(cfg.lam), ks, cum,
                                              float(cfg.kappa), float(cfg.p), cfg.cap_for("gillespie"),
                                              stream.generator())
    ts = list(ts)
    vs = list(vs)
    names = [_KINDS[k] for k in kinds]
    if vs[-1] > 0 and not exploded and cfg.t_end > ts[-1]:
        ts.append(float(cfg.t_end))
        vs.append(vs[-1])
        names.append("end")
    pre = [vs[0]] + vs[:-1]
    return PathRecord(np.array(ts), np.array(vs, dtype=float), tuple(names), seed=stream.seed,
                      stream_id=stream.stream_id, flags={"exploded": bool(exploded)},
                      pre_values=np.array(pre, dtype=float))


def sample_population(cfg: BranchingConfig, times, n_replicas: int, rng=0, *,
                      method: str = "auto", workers=None) -> np.ndarray:
    """Population sizes (replicas x times); exploded populations are -1."""
    stream = as_stream(rng)
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or np.any(times < 0):
        raise ValidationError("times must be non-negative and sorted")
    args = _kernel_args(cfg, cfg.resolve_method(method))

    def task(c, size, gen):
        return _sample_times(int(cfg.z0), times, size, *args, gen)

    parts = fan_out(task, int(n_replicas), stream, workers=workers)
    return np.concatenate(parts, axis=0) if parts else np.empty((0, len(times)), dtype=np.int64)


def survival_probability_mc(cfg: BranchingConfig, t: float, n_replicas: int = 1000, rng=0, *,
                            method: str = "auto", workers=None) -> tuple[float, float]:
    """Fraction of replicas alive at ``t`` and its binomial standard error."""
    if n_replicas < 1000:
        raise ValidationError(f"n_replicas must be at least 1000, got {n_replicas}")
    Z = sample_population(cfg, [float(t)], n_replicas, rng, method=method, workers=workers)
    alive = (Z[:, 0] != 0)
    est = float(alive.mean())
    return est, math.sqrt(est * (1.0 - est) / n_replicas)


@dataclass(frozen=True)
class SurvivalCurve:
    times: np.ndarray
    log_prob: np.ndarray
    log_se: np.ndarray
    group_log_prob: np.ndarray
    n_particles: int

    def fit_rate(self, t_window=None) -> tuple[float, float]:
        """OLS slope of ``-log P(Z_t > 0)`` over the window, with a group-jackknife SE."""
        t = self.times
        mask = np.ones_like(t, dtype=bool) if t_window is None else (t >= t_window[0]) & (t <= t_window[1])
        if mask.sum() < 2:
            raise ValidationError(f"fit window {t_window} covers fewer than two curve times")
        slope = _slope(t[mask], -self.log_prob[mask])
        G = self.group_log_prob.shape[0]
        if G < 2:
            return slope, float("nan")
        loo = []
        for g in range(G):
            rest = np.delete(self.group_log_prob, g, axis=0)
            lp = _log_mean_exp(rest)
            loo.append(_slope(t[mask], -lp[mask]))
        loo = np.array(loo)
        se = math.sqrt((G - 1) / G * ((loo - loo.mean()) ** 2).sum())
        return slope, se


def _slope(x, y) -> float:
    xm = x.mean()
    return float(((x - xm) * (y - y.mean())).sum() / ((x - xm) ** 2).sum())


def _log_mean_exp(a: np.ndarray) -> np.ndarray:
    mx = np.max(a, axis=0)
    with np.errstate(invalid="ignore"):
        out = mx + np.log(np.mean(np.exp(a - mx), axis=0))
    return np.where(np.isfinite(mx), out, -np.inf)


def survival_curve_splitting(cfg: BranchingConfig, t_max: float, n_particles: int = 50_000,
                             n_groups: int = 20, rng=0, *, dt: float = 1.0,
                             method: str = "auto", workers=None) -> SurvivalCurve:
    """``log P(Z_t > 0)`` on the grid ``dt, 2dt, ..., t_max`` by fixed-effort splitting.

    Every ``dt`` the surviving particles are resampled back to ``n_particles``;
    the product of survival fractions is an unbiased estimate of the survival
    probability, so tails far below ``1/n_particles`` stay reachable. Groups are
    independent and their spread gives the standard error.
    """
    n_steps = int(round(t_max / dt))
    if n_steps < 1 or abs(n_steps * dt - t_max) > 1e-9 * max(1.0, t_max):
        raise ValidationError(f"t_max={t_max} must be a positive multiple of dt={dt}")
    stream = as_stream(rng)
    args = _kernel_args(cfg, cfg.resolve_method(method))

    def task(g, size, gen):
        lf = _split_group(int(cfg.z0), float(dt), n_steps, int(n_particles), *args, gen)
        return np.cumsum(lf)

    groups = np.array(fan_out(task, int(n_groups), stream, chunk=1, workers=workers))
    logp = _log_mean_exp(groups)
    P = np.exp(groups - logp)  # group estimates relative to the pooled one
    with np.errstate(invalid="ignore", divide="ignore"):
        rel_se = np.std(P, axis=0, ddof=1) / math.sqrt(len(groups)) if len(groups) > 1 else np.full(n_steps, np.nan)
    times = dt * np.arange(1, n_steps + 1)
    return SurvivalCurve(times, logp, rel_se, groups, int(n_particles))


def post_disaster_sizes(z: int, p: float, n: int, rng=0) -> np.ndarray:
    """``n`` draws of the population right after a disaster hits ``z`` individuals."""
    gen = as_stream(rng).generator()
    return _forced_disasters(int(z), float(p), int(n), gen)


@njit(cache=True)
def _forced_disasters(z, p, n, rng):
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = rng.binomial(z, p)
    return out


@dataclass(frozen=True)
class DualityReport:
    x: float
    t: float
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    z_score: float

    def to_dict(self) -> dict:
        return {"x": self.x, "t": self.t, "lhs": self.lhs, "lhs_se": self.lhs_se,
                "rhs": self.rhs, "rhs_se": self.rhs_se, "z_score": self.z_score}


def _z(a, sa, b, sb) -> float:
    s = math.hypot(sa, sb)
    if s == 0.0:
        return 0.0 if a == b else math.copysign(math.inf, a - b)
    return (a - b) / s


def _unit_rate(cfg: BranchingConfig, ts: np.ndarray):
    """Rescale to disaster rate 1: lambda -> lambda/kappa, t -> kappa t."""
    if cfg.kappa == 1.0:
        return cfg, ts
    return cfg.replace(lam=cfg.lam / cfg.kappa, kappa=1.0), ts * cfg.kappa


def duality_grid(cfg: BranchingConfig, xs, ts, n_replicas: int = 100_000, rng=0, *,
                 method: str = "auto", workers=None) -> list[DualityReport]:
    """Both sides of ``E[(1-x)^Z_t] = E[(1-X_t)^z0]`` on an (x, t) grid.

    The branching side reuses one set of paths for all grid cells; the dual
    p-jump side runs from each ``x`` separately. Streams for the two sides are
    disjoint children of ``rng``.
    """
    stream = as_stream(rng)
    xs = [float(x) for x in xs]
    ts_arr = np.asarray(sorted(float(t) for t in ts))
    ucfg, uts = _unit_rate(cfg, ts_arr)
    Z = sample_population(ucfg, uts, n_replicas, stream.child(0), method=method, workers=workers)
    alpha = branching_dual_drift(ucfg.law, ucfg.lam)
    drift = drift_characteristics(alpha, 1.0)
    out = []
    for ix, x in enumerate(xs):
        if not (0.0 <= x <= 1.0):
            raise ValidationError(f"x must lie in [0, 1], got {x}")
        if x == 0.0:
            lhs_vals = np.ones(Z.shape, dtype=float)
        else:
            zz = np.where(Z < 0, np.inf, Z).astype(float)
            lhs_vals = np.power(1.0 - x, zz)
        la = reduce_batches([lhs_vals], (len(uts),))
        pcfg = PJumpConfig(drift, ucfg.p, x, t_end=float(uts[-1]), kappa=1.0)
        X, _ = sample_states(pcfg, uts, n_replicas, stream.child(1).child(ix), workers=workers)
        ra = reduce_batches([np.power(1.0 - X, cfg.z0)], (len(uts),))
        for j, t in enumerate(ts_arr):
            lse = float(np.nan_to_num(la.std_err[j]))
            rse = float(np.nan_to_num(ra.std_err[j]))
            out.append(DualityReport(x, float(t), float(la.mean[j]), lse, float(ra.mean[j]), rse,
                                     _z(float(la.mean[j]), lse, float(ra.mean[j]), rse)))
    return out


def duality_check(cfg: BranchingConfig, x: float, t: float, n_replicas: int = 100_000, rng=0,
                  **kw) -> DualityReport:
    """Monte Carlo check of the pgf duality at a single ``(x, t)``."""
    return duality_grid(cfg, [x], [t], n_replicas, rng, **kw)[0]
