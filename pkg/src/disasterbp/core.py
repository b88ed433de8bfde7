"""Shared domain types and numerical primitives.

Offspring laws with polynomial pgfs, drift characteristics for p-jump
processes, event-path records, seeded RNG streams, and the bracketing /
quadrature routines the rest of the package relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from ._jit import njit
from .errors import DomainError, NumericalError, ValidationError

__all__ = [
    "OffspringLaw",
    "DriftSpec",
    "PathRecord",
    "RngStream",
    "as_stream",
    "pgf_eval",
    "smallest_fixed_point",
    "drift_characteristics",
    "bisect",
    "adaptive_simpson",
    "logistic_drift",
    "linear_drift",
    "power_drift",
    "branching_dual_drift",
]

BISECT_TOL = 1e-12
BISECT_MAXITER = 200
SLOPE_INF_THRESHOLD = 1e8


# ---------------------------------------------------------------------------
# RNG streams
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Children (``child(i)``) extend the spawn key, so fan-out over chunks or
    replicas never reuses a stream.
    """

    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2**64):
            raise ValidationError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if int(self.stream_id) < 0:
            raise ValidationError(f"stream_id must be non-negative, got {self.stream_id}")

    def child(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.path + (int(index),))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id), *self.path))
        return np.random.Generator(np.random.PCG64(ss))


def as_stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if rng is None:
        return RngStream(0)
    return RngStream(int(rng))


# ---------------------------------------------------------------------------
# numerical primitives
# ---------------------------------------------------------------------------

def bisect(f: Callable[[float], float], lo: float, hi: float,
           tol: float = BISECT_TOL, max_iter: int = BISECT_MAXITER) -> float:
    """Root of ``f`` on ``[lo, hi]`` by bisection; requires a sign change."""
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if math.isnan(flo) or math.isnan(fhi) or (flo > 0) == (fhi > 0):
        raise NumericalError(f"no sign change on [{lo}, {hi}] (f={flo}, {fhi})")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi)


def adaptive_simpson(f: Callable[[float], float], a: float, b: float,
                     tol: float = 1e-10, max_depth: int = 60) -> float:
    """Adaptive Simpson quadrature with Richardson correction.

    Iterative (explicit stack) so deep refinement near kinks cannot blow the
    Python recursion limit. Raises :class:`NumericalError` if any panel hits
    ``max_depth`` without meeting its share of ``tol``.
    """
    if a == b:
        return 0.0
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = (b - a) * (fa + 4.0 * fm + fb) / 6.0
    total = 0.0
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    while stack:
        a0, b0, fa0, fm0, fb0, s0, eps, depth = stack.pop()
        m0 = 0.5 * (a0 + b0)
        lm, rm = 0.5 * (a0 + m0), 0.5 * (m0 + b0)
        flm, frm = f(lm), f(rm)
        left = (m0 - a0) * (fa0 + 4.0 * flm + fm0) / 6.0
        right = (b0 - m0) * (fm0 + 4.0 * frm + fb0) / 6.0
        delta = left + right - s0
        if abs(delta) <= 15.0 * eps or (b0 - a0) < 1e-15 * max(1.0, abs(a0)):
            total += left + right + delta / 15.0
        elif depth >= max_depth:
            raise NumericalError(f"adaptive Simpson did not converge on [{a0}, {b0}]")
        else:
            stack.append((m0, b0, fm0, frm, fb0, right, 0.5 * eps, depth + 1))
            stack.append((a0, m0, fa0, flm, fm0, left, 0.5 * eps, depth + 1))
    if math.isnan(total):
        raise NumericalError("quadrature produced NaN")
    return sign * total


# ---------------------------------------------------------------------------
# offspring laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OffspringLaw:
    """Finite-support offspring distribution ``q`` with its pgf ``h``.

    ``probs`` is a tuple of ``(k, q_k)`` pairs; zero entries are kept out.
    """

    probs: tuple[tuple[int, float], ...]

    def __post_init__(self):
        merged: dict[int, float] = {}
        for k, q in self.probs:
            k = int(k)
            q = float(q)
            if k < 0:
                raise ValidationError(f"offspring count must be non-negative, got {k}")
            if not q >= 0.0:
                raise ValidationError(f"probability q_{k}={q} is negative")
            merged[k] = merged.get(k, 0.0) + q
        total = math.fsum(merged.values())
        if abs(total - 1.0) > 1e-12:
            raise ValidationError(f"offspring probabilities sum to {total!r}, not 1")
        canon = tuple(sorted((k, q) for k, q in merged.items() if q > 0.0))
        object.__setattr__(self, "probs", canon)

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, float]) -> "OffspringLaw":
        return cls(tuple((int(k), float(v)) for k, v in mapping.items()))

    @classmethod
    def parse(cls, text: str) -> "OffspringLaw":
        """Parse ``"0:0.5,2:0.5"``."""
        pairs = []
        for item in text.split(","):
            item = item.strip()
            if not item:
                continue
            k, _, q = item.partition(":")
            if not q:
                raise ValidationError(f"malformed offspring entry {item!r}; expected k:q")
            pairs.append((int(k), float(q)))
        return cls(tuple(pairs))

    @classmethod
    def birth_death(cls, b: float, d: float) -> tuple[float, "OffspringLaw"]:
        """Branching rate and law of a linear birth-death process."""
        if b < 0 or d < 0 or b + d <= 0:
            raise ValidationError(f"need b, d >= 0 with b + d > 0, got b={b}, d={d}")
        lam = b + d
        return lam, cls(((0, d / lam), (2, b / lam)))

    @cached_property
    def coeffs(self) -> np.ndarray:
        c = np.zeros(max(k for k, _ in self.probs) + 1)
        for k, q in self.probs:
            c[k] = q
        return c

    @property
    def mean(self) -> float:
        return math.fsum(k * q for k, q in self.probs)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def is_birth_death(self) -> bool:
        return self.degree <= 2

    def prob(self, k: int) -> float:
        c = self.coeffs
        return float(c[k]) if 0 <= k < len(c) else 0.0

    def pgf(self, x: float) -> float:
        return pgf_eval(self, x)

    @cached_property
    def fixed_point(self) -> float:
        return smallest_fixed_point(self)

    @cached_property
    def dual_coeffs(self) -> np.ndarray:
        """Coefficients (ascending powers of x) of ``1 - x - h(1 - x)``.

        Expanding around 0 keeps the dual drift accurate for tiny x, where the
        direct form cancels catastrophically.
        """
        q = self.coeffs
        n = len(q)
        out = np.zeros(max(n, 2))
        for j in range(n):
            s = math.fsum(q[k] * math.comb(k, j) for k in range(j, n))
            out[j] = -((-1) ** j) * s
        out[0] = 0.0
        out[1] = self.mean - 1.0
        return out

    def sampling_table(self) -> tuple[np.ndarray, np.ndarray]:
        ks = np.array([k for k, _ in self.probs], dtype=np.int64)
        cum = np.cumsum([q for _, q in self.probs])
        cum[-1] = 1.0
        return ks, cum

    def to_dict(self) -> dict:
        return {str(k): q for k, q in self.probs}


def pgf_eval(law: OffspringLaw, x: float) -> float:
    """``h(x) = sum_k q_k x^k`` for ``x`` in [0, 1]."""
    x = float(x)
    if not (0.0 <= x <= 1.0):
        raise DomainError(f"pgf argument must lie in [0, 1], got {x}")
    if x == 1.0:
        return 1.0
    acc = 0.0
    for q in law.coeffs[::-1]:
        acc = acc * x + q
    return acc


def smallest_fixed_point(law: OffspringLaw) -> float:
    """Smallest solution of ``h(x) = x`` on [0, 1].

    The degenerate law ``q_1 = 1`` (identity pgf) returns 0 by convention.
    """
    if law.prob(1) == 1.0:
        return 0.0
    if law.mean <= 1.0:
        return 1.0
    q0 = law.prob(0)
    if q0 == 0.0:
        return 0.0

    def g(x):
        return pgf_eval(law, x) - x

    hi = None
    for j in range(1, 60):
        cand = 1.0 - 2.0 ** (-j)
        if g(cand) < 0.0:
            hi = cand
            break
    if hi is None:
        raise NumericalError("could not bracket the fixed point below 1")
    root = bisect(g, 0.0, hi)
    if abs(g(root)) > 1e-10:
        raise NumericalError(f"fixed point check failed: h(x*) - x* = {g(root)}")
    return root


# ---------------------------------------------------------------------------
# drifts
# ---------------------------------------------------------------------------

def logistic_drift(delta: float, theta: float):
    """``x -> delta*x - theta*x**2``."""
    delta, theta = float(delta), float(theta)

    @njit
    def alpha(x):
        return delta * x - theta * x * x

    return alpha


def linear_drift(a: float):
    a = float(a)

    @njit
    def alpha(x):
        return a * x

    return alpha


def power_drift(a: float, c: float, q: float):
    """``x -> a*x - c*x**q``; concave on [0, inf) for ``q > 1``, ``c >= 0``."""
    a, c, q = float(a), float(c), float(q)

    @njit
    def alpha(x):
        return a * x - c * x ** q

    return alpha


def branching_dual_drift(law: OffspringLaw, lam: float):
    """Drift ``x -> lam*(1 - x - h(1 - x))`` of the pgf-dual p-jump process."""
    coeffs = np.ascontiguousarray(law.dual_coeffs[::-1]) * float(lam)

    @njit
    def alpha(x):
        acc = 0.0
        for c in coeffs:
            acc = acc * x + c
        return acc

    return alpha


@dataclass(frozen=True)
class DriftSpec:
    """Drift ``alpha`` on ``[0, domain_end]`` with cached characteristics.

    ``alpha0_slope`` is ``lim alpha(x)/x`` at 0 (``inf`` allowed),
    ``alpha_hat`` the supremum of ``alpha(x)/x``, ``x_alpha`` the smallest
    positive zero (``None`` if there is none) and ``s_alpha`` the supremum of
    the positivity set (0 for an empty set).
    """

    alpha: Callable[[float], float] = field(repr=False, compare=False)
    domain_end: float
    alpha0_slope: float
    alpha_hat: float
    x_alpha: float | None
    s_alpha: float
    concave: bool

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.domain_end)

    def upper_bound(self, x0: float) -> float:
        """Largest value a path from ``x0`` can reach."""
        return max(float(x0), self.s_alpha)


def _safe_eval(alpha, x: float) -> float:
    v = float(alpha(x))
    if math.isnan(v):
        raise NumericalError(f"drift evaluation produced NaN at x={x}")
    return v


def _slope_at_zero(alpha) -> float:
    js = np.arange(10, 41)
    xs = 2.0 ** (-js.astype(float))
    r = np.array([_safe_eval(alpha, x) / x for x in xs])
    if np.any(np.isposinf(r)):
        return math.inf
    d = np.diff(r)
    if r[-1] > SLOPE_INF_THRESHOLD and np.all(d[-5:] > 0):
        return math.inf
    # Power-law or logarithmic blow-up never reaches the threshold by j=40;
    # non-contracting positive increments are the signature of divergence.
    tail = d[10:]
    if np.all(tail > 0):
        ratios = tail[1:] / tail[:-1]
        if np.median(ratios) >= 0.98:
            return math.inf
    # Aitken extrapolation copes with any geometric error rate (x, sqrt(x), ...)
    d0, d1 = d[:-1], d[1:]
    den = d1 - d0
    safe = np.abs(den) > 1e-300
    ait = np.where(safe, r[2:] - d1 * d1 / np.where(safe, den, 1.0), r[2:])
    var = np.abs(np.diff(ait))
    return float(ait[int(np.argmin(var))])


def drift_characteristics(alpha: Callable[[float], float], domain_end: float = 1.0) -> DriftSpec:
    """Numerically characterise a drift on ``[0, domain_end]`` (``inf`` allowed)."""
    domain_end = float(domain_end)
    if not domain_end > 0:
        raise ValidationError(f"domain end must be positive, got {domain_end}")
    a0 = _safe_eval(alpha, 0.0)
    if a0 < 0:
        raise ValidationError(f"drift must satisfy alpha(0) >= 0, got {a0}")
    bounded = math.isfinite(domain_end)
    if bounded:
        aend = _safe_eval(alpha, domain_end)
        if aend > 0:
            raise ValidationError(f"drift must satisfy alpha(domain_end) <= 0, got {aend}")
        grid = np.unique(np.concatenate([
            domain_end * np.geomspace(2.0 ** -40, 1.0, 600),
            np.linspace(0.0, domain_end, 2001)[1:],
        ]))
    else:
        grid = np.geomspace(2.0 ** -40, 1e12, 2400)
    vals = np.array([_safe_eval(alpha, x) for x in grid])

    slope0 = _slope_at_zero(alpha)

    # positivity set and first zero
    pos = vals > 0
    if not pos.any():
        s_alpha = 0.0
    elif pos[-1]:
        s_alpha = domain_end if bounded else math.inf
    else:
        i = int(np.nonzero(pos)[0][-1])
        s_alpha = float(bisect(lambda x: _safe_eval(alpha, x), grid[i], grid[i + 1]))

    x_alpha = None
    if vals[0] != 0.0:
        sgn = np.sign(vals)
        for i in range(1, len(grid)):
            if sgn[i] == 0.0:
                x_alpha = float(grid[i])
                break
            if sgn[i] != sgn[i - 1]:
                x_alpha = float(bisect(lambda x: _safe_eval(alpha, x), grid[i - 1], grid[i]))
                break

    # concavity via second differences on a uniform grid
    span = domain_end if bounded else (2.0 * s_alpha if 0 < s_alpha < math.inf else 1.0)
    ug = np.linspace(0.0, span, 2001)
    uv = np.array([_safe_eval(alpha, x) for x in ug])
    scale = max(1.0, float(np.max(np.abs(uv))))
    concave = bool(np.all(np.diff(uv, 2) <= 1e-9 * scale))

    ratio = vals / grid
    i = int(np.argmax(ratio))
    grid_sup = float(ratio[i])
    if 0 < i < len(grid) - 1:
        res = minimize_scalar(lambda x: -_safe_eval(alpha, x) / x,
                              bounds=(grid[i - 1], grid[i + 1]), method="bounded",
                              options={"xatol": 1e-12})
        grid_sup = max(grid_sup, float(-res.fun))
    if concave and slope0 >= grid_sup - 1e-6 * max(1.0, abs(grid_sup)):
        alpha_hat = slope0
    else:
        alpha_hat = max(grid_sup, slope0)

    return DriftSpec(alpha=alpha, domain_end=domain_end, alpha0_slope=float(slope0),
                     alpha_hat=float(alpha_hat), x_alpha=x_alpha, s_alpha=s_alpha,
                     concave=concave)


# ---------------------------------------------------------------------------
# path records
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PathRecord:
    """Event-time series of one simulated path.

    ``values[i]`` is the state right after event ``i``; ``pre_values[i]`` (when
    recorded) is the state just before it, so jump factors can be audited.
    """

    times: np.ndarray
    values: np.ndarray
    kinds: tuple[str, ...]
    seed: int | None = None
    stream_id: int | None = None
    flags: dict = field(default_factory=dict, compare=False)
    pre_values: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "kinds", tuple(self.kinds))
        if not (len(times) == len(values) == len(self.kinds)):
            raise ValidationError("times, values and kinds must have equal length")
        if len(times) > 1 and not np.all(np.diff(times) > 0):
            raise ValidationError("path times must be strictly increasing")
        if np.any(values < 0):
            raise ValidationError("path values must be non-negative")
        if self.pre_values is not None:
            pre = np.asarray(self.pre_values, dtype=float)
            if pre.shape != values.shape:
                raise ValidationError("pre_values must match values in length")
            object.__setattr__(self, "pre_values", pre)

    def __len__(self) -> int:
        return len(self.times)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PathRecord):
            return NotImplemented
        return (np.array_equal(self.times, other.times)
                and np.array_equal(self.values, other.values)
                and self.kinds == other.kinds
                and self.seed == other.seed and self.stream_id == other.stream_id)

    __hash__ = None

    def value_at(self, t: float) -> float:
        """Right-continuous state at time ``t`` (piecewise-constant lookup)."""
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        if i < 0:
            raise DomainError(f"t={t} precedes the start of the path")
        return float(self.values[i])

    def rows(self) -> Iterable[tuple[float, float, str]]:
        return zip(self.times.tolist(), self.values.tolist(), self.kinds)

    def summary(self) -> dict:
        kinds, counts = np.unique(np.array(self.kinds, dtype=object), return_counts=True)
        return {
            "n_events": len(self),
            "t_final": float(self.times[-1]),
            "value_final": float(self.values[-1]),
            "kind_counts": {str(k): int(c) for k, c in zip(kinds, counts)},
            "seed": self.seed,
            "stream_id": self.stream_id,
            **{k: v for k, v in self.flags.items()},
        }


def _as_float_array(xs: Sequence[float] | float) -> np.ndarray:
    return np.atleast_1d(np.asarray(xs, dtype=float))
