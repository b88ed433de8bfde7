"""Time-dependent birth, death, disaster-rate and disaster-survival schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .core import adaptive_simpson, bisect
from .errors import NumericalError, ValidationError

__all__ = ["RateSchedule"]

QUAD_TOL = 1e-10


def _log_inv_p(p: float) -> float:
    return math.inf if p == 0.0 else -math.log(p)


@dataclass(frozen=True, eq=False)
class RateSchedule:
    """Rates ``b(t), d(t), kappa(t)`` and disaster survival probability ``p(t)``.

    Piecewise-constant schedules (``pieces`` set) get exact integrals. For
    smooth schedules the cumulative integrals use supplied antiderivatives when
    present and adaptive quadrature otherwise.
    """

    b: Callable[[float], float]
    d: Callable[[float], float]
    kappa: Callable[[float], float]
    p: Callable[[float], float]
    pieces: tuple | None = None
    v_fn: Callable[[float], float] | None = None
    Lambda_fn: Callable[[float], float] | None = None
    Lambda_inv_fn: Callable | None = None
    kappa_bound: float | None = None
    breakpoints: tuple[float, ...] = ()
    description: dict = field(default_factory=dict)

    # -- constructors --------------------------------------------------------

    @classmethod
    def piecewise(cls, segments: Sequence[dict]) -> "RateSchedule":
        """Piecewise-constant rates from ``[{t_start, b, d, kappa, p}, ...]``.

        The first segment must start at 0; the last extends to infinity. ``p``
        is taken left-continuous at segment boundaries, the rates right-continuous.
        """
        if not segments:
            raise ValidationError("need at least one segment")
        rows = []
        for i, s in enumerate(segments):
            try:
                row = (float(s["t_start"]), float(s["b"]), float(s["d"]), float(s["kappa"]), float(s["p"]))
            except KeyError as exc:
                raise ValidationError(f"segment {i} lacks field {exc.args[0]!r}") from None
            rows.append(row)
        rows.sort(key=lambda r: r[0])
        if rows[0][0] != 0.0:
            raise ValidationError(f"first segment must start at t=0, got {rows[0][0]}")
        starts = [r[0] for r in rows]
        if len(set(starts)) != len(starts):
            raise ValidationError("segment start times must be distinct")
        for t0, b, d, k, p in rows:
            if b < 0 or d < 0 or k < 0:
                raise ValidationError(f"rates must be non-negative in segment starting at {t0}")
            if not (0.0 <= p <= 1.0):
                raise ValidationError(f"p={p} outside [0, 1] in segment starting at {t0}")
            if p == 0.0 and k > 0.0:
                raise ValidationError(f"p=0 with kappa>0 in segment starting at {t0}: "
                                      "terminal disasters are not allowed")
        pieces = tuple(rows)
        starts_arr = np.array(starts)

        def idx_right(t):
            return max(0, int(np.searchsorted(starts_arr, t, side="right")) - 1)

        def idx_left(t):
            return max(0, int(np.searchsorted(starts_arr, t, side="left")) - 1)

        return cls(
            b=lambda t: pieces[idx_right(t)][1],
            d=lambda t: pieces[idx_right(t)][2],
            kappa=lambda t: pieces[idx_right(t)][3],
            p=lambda t: pieces[idx_left(t)][4] if t > 0 else pieces[0][4],
            pieces=pieces,
            kappa_bound=max(r[3] for r in rows),
            breakpoints=tuple(starts[1:]),
            description={"kind": "piecewise", "segments": [
                {"t_start": r[0], "b": r[1], "d": r[2], "kappa": r[3], "p": r[4]} for r in rows]},
        )

    @classmethod
    def constant(cls, b: float, d: float, kappa: float, p: float) -> "RateSchedule":
        s = cls.piecewise([{"t_start": 0.0, "b": b, "d": d, "kappa": kappa, "p": p}])
        return _with_desc(s, {"kind": "constant", "b": b, "d": d, "kappa": kappa, "p": p})

    @classmethod
    def exponential_decay(cls, b: float, d: float, kappa: float, p: float, rate: float) -> "RateSchedule":
        """``b, d, kappa`` all scaled by ``exp(-rate t)``; ``p`` constant."""
        if rate <= 0:
            raise ValidationError(f"decay rate must be positive, got {rate}")
        _check_const(b, d, kappa, p)

        def F(t):
            return -math.expm1(-rate * t) / rate

        return cls(
            b=lambda t: b * math.exp(-rate * t),
            d=lambda t: d * math.exp(-rate * t),
            kappa=lambda t: kappa * math.exp(-rate * t),
            p=lambda t: p,
            v_fn=lambda t: (b - d) * F(t),
            Lambda_fn=lambda t: kappa * F(t),
            kappa_bound=kappa,
            description={"kind": "exponential-decay", "b": b, "d": d, "kappa": kappa, "p": p, "rate": rate},
        )

    @classmethod
    def periodic(cls, b: float, d: float, kappa: float, p: float, amplitude: float,
                 period: float) -> "RateSchedule":
        """Birth rate ``b (1 + amplitude sin(2 pi t / period))``; the rest constant."""
        if not (0.0 <= amplitude <= 1.0):
            raise ValidationError(f"amplitude must lie in [0, 1], got {amplitude}")
        if period <= 0:
            raise ValidationError(f"period must be positive, got {period}")
        _check_const(b, d, kappa, p)
        w = 2.0 * math.pi / period

        return cls(
            b=lambda t: b * (1.0 + amplitude * math.sin(w * t)),
            d=lambda t: d,
            kappa=lambda t: kappa,
            p=lambda t: p,
            v_fn=lambda t: (b - d) * t + b * amplitude * (1.0 - math.cos(w * t)) / w,
            Lambda_fn=lambda t: kappa * t,
            kappa_bound=kappa,
            description={"kind": "periodic", "b": b, "d": d, "kappa": kappa, "p": p,
                         "amplitude": amplitude, "period": period},
        )

    @classmethod
    def power_intensity(cls, c: float, gamma: float, b: float = 0.0, d: float = 0.0,
                        p: float = 1.0) -> "RateSchedule":
        """Disaster rate ``kappa(s) = c s^gamma`` with constant ``b, d, p``."""
        if c <= 0 or gamma <= -1:
            raise ValidationError(f"need c > 0 and gamma > -1, got c={c}, gamma={gamma}")
        _check_const(b, d, c, p)
        g1 = gamma + 1.0

        return cls(
            b=lambda t: b,
            d=lambda t: d,
            kappa=lambda t: c * t ** gamma,
            p=lambda t: p,
            v_fn=lambda t: (b - d) * t,
            Lambda_fn=lambda t: c * t ** g1 / g1,
            Lambda_inv_fn=lambda u: (np.asarray(u, dtype=float) * g1 / c) ** (1.0 / g1),
            description={"kind": "power-intensity", "c": c, "gamma": gamma, "b": b, "d": d, "p": p},
        )

    @classmethod
    def from_callables(cls, b, d, kappa, p, *, kappa_bound=None, v=None, Lambda=None,
                       Lambda_inv=None, breakpoints=()) -> "RateSchedule":
        return cls(b=b, d=d, kappa=kappa, p=p, v_fn=v, Lambda_fn=Lambda, Lambda_inv_fn=Lambda_inv,
                   kappa_bound=kappa_bound,
                   breakpoints=tuple(sorted(float(x) for x in breakpoints)),
                   description={"kind": "callables"})

    @classmethod
    def from_json(cls, spec: dict) -> "RateSchedule":
        """Build from ``{"segments": [...]}`` or ``{"kind": name, ...params}``."""
        if "segments" in spec:
            return cls.piecewise(spec["segments"])
        kind = spec.get("kind")
        params = {k: v for k, v in spec.items() if k != "kind"}
        builders = {"constant": cls.constant, "exponential-decay": cls.exponential_decay,
                    "periodic": cls.periodic, "power-intensity": cls.power_intensity,
                    "piecewise": lambda **kw: cls.piecewise(kw["segments"])}
        if kind not in builders:
            raise ValidationError(f"unknown schedule kind {kind!r}; expected one of {sorted(builders)} "
                                  "or a 'segments' list")
        try:
            return builders[kind](**params)
        except TypeError as exc:
            raise ValidationError(f"bad parameters for schedule {kind!r}: {exc}") from None

    def to_json(self) -> dict:
        return dict(self.description)

    # -- cumulative integrals -------------------------------------------------

    def _panels(self, a: float, c: float) -> list[tuple[float, float]]:
        cuts = [a] + [x for x in self.breakpoints if a < x < c] + [c]
        return list(zip(cuts[:-1], cuts[1:]))

    def _integrate(self, g, a: float, c: float) -> float:
        if c <= a:
            return 0.0
        return math.fsum(adaptive_simpson(g, lo, hi, QUAD_TOL) for lo, hi in self._panels(a, c))

    def _piece_integral(self, t: float, col) -> float:
        total = []
        pcs = self.pieces
        for i, row in enumerate(pcs):
            lo = row[0]
            if lo >= t:
                break
            hi = pcs[i + 1][0] if i + 1 < len(pcs) else math.inf
            total.append(col(row) * (min(hi, t) - lo))
        return math.fsum(total)

    def v(self, t: float) -> float:
        """``int_0^t (b - d) ds``."""
        if self.pieces is not None:
            return self._piece_integral(t, lambda r: r[1] - r[2])
        if self.v_fn is not None:
            return float(self.v_fn(t))
        return self._integrate(lambda s: self.b(s) - self.d(s), 0.0, t)

    def Lambda(self, t: float) -> float:
        """``int_0^t kappa ds``."""
        if self.pieces is not None:
            return self._piece_integral(t, lambda r: r[3])
        if self.Lambda_fn is not None:
            return float(self.Lambda_fn(t))
        return self._integrate(self.kappa, 0.0, t)

    def Lambda_inv(self, u: float) -> float:
        """Generalised inverse ``inf{t : Lambda(t) >= u}`` (``inf`` if never reached)."""
        if u <= 0.0:
            return 0.0
        if self.Lambda_inv_fn is not None:
            return float(self.Lambda_inv_fn(u))
        if self.pieces is not None:
            acc = 0.0
            pcs = self.pieces
            for i, row in enumerate(pcs):
                hi = pcs[i + 1][0] if i + 1 < len(pcs) else math.inf
                k = row[3]
                span = k * (hi - row[0])
                if k > 0 and acc + span >= u:
                    return row[0] + (u - acc) / k
                acc += span
            return math.inf
        hi = 1.0
        while self.Lambda(hi) < u:
            hi *= 2.0
            if hi > 1e15:
                return math.inf
        return bisect(lambda s: self.Lambda(s) - u, 0.0, hi, tol=1e-12 * max(1.0, hi))

    def Lambda_inv_many(self, us) -> np.ndarray:
        """Vectorised :meth:`Lambda_inv` for an array of levels."""
        us = np.asarray(us, dtype=float)
        if self.Lambda_inv_fn is not None:
            out = np.asarray(self.Lambda_inv_fn(np.maximum(us, 0.0)), dtype=float)
            return np.where(us <= 0.0, 0.0, out)
        if self.pieces is not None:
            starts = np.array([r[0] for r in self.pieces])
            ks = np.array([r[3] for r in self.pieces])
            spans = ks[:-1] * np.diff(starts)
            cum = np.concatenate(([0.0], np.cumsum(spans)))
            # last piece whose cumulative start lies below u and that has positive rate
            idx = np.searchsorted(cum, us, side="left") - 1
            idx = np.clip(idx, 0, len(starts) - 1)
            out = np.full(us.shape, np.inf)
            k = ks[idx]
            ok = k > 0
            out[ok] = starts[idx[ok]] + (us[ok] - cum[idx[ok]]) / k[ok]
            out[us <= 0.0] = 0.0
            return out
        return np.array([self.Lambda_inv(u) for u in us.ravel()]).reshape(us.shape)

    def ell(self, t: float) -> float:
        """``int_0^t (b - d - kappa log(1/p)) ds``; terms with ``kappa = 0`` contribute nothing."""
        if self.pieces is not None:
            return self._piece_integral(t, lambda r: r[1] - r[2] - (r[3] * _log_inv_p(r[4]) if r[3] > 0 else 0.0))

        def g(s):
            k = self.kappa(s)
            return self.b(s) - self.d(s) - (k * _log_inv_p(self.p(s)) if k > 0 else 0.0)
        return self._integrate(g, 0.0, t)

    def activity(self, t: float) -> float:
        """``int_0^t (b + d) ds``."""
        if self.pieces is not None:
            return self._piece_integral(t, lambda r: r[1] + r[2])
        return self._integrate(lambda s: self.b(s) + self.d(s), 0.0, t)

    def log_weighted_birth(self, a: float, c: float) -> float:
        """``log int_a^c b(s) exp(-(v(s) - v(a))) ds`` (``-inf`` for an empty integral)."""
        if c <= a:
            return -math.inf
        if self.pieces is not None:
            return self._log_weighted_pieces(a, c)
        return _log_weighted_smooth(self, a, c)

    def _log_weighted_pieces(self, a: float, c: float) -> float:
        logs = []
        shift = 0.0  # v(lo) - v(a)
        for lo, hi in self._panels(a, c):
            row = self.pieces[max(0, int(np.searchsorted([r[0] for r in self.pieces], lo, side="right")) - 1)]
            b, delta = row[1], row[1] - row[2]
            dt = hi - lo
            if b > 0:
                logs.append(math.log(b) - shift + _log_expint(delta, dt))
            shift += delta * dt
        return _logsumexp(logs)

    # -- checks --------------------------------------------------------------

    def validate_on(self, t_end: float, n: int = 2001) -> None:
        """Grid check of signs and of ``p = 0`` only where ``kappa = 0``."""
        for t in np.linspace(0.0, t_end, n):
            b, d, k, p = self.b(t), self.d(t), self.kappa(t), self.p(t)
            if b < 0 or d < 0 or k < 0:
                raise ValidationError(f"negative rate at t={t}")
            if not (0.0 <= p <= 1.0):
                raise ValidationError(f"p(t)={p} outside [0, 1] at t={t}")
            if p == 0.0 and k > 0.0:
                raise ValidationError(f"p(t)=0 with kappa(t)>0 at t={t}")

    def kappa_max(self, t_end: float, n: int = 4001) -> float:
        if self.kappa_bound is not None:
            return float(self.kappa_bound)
        grid = np.linspace(0.0, t_end, n)
        return 1.05 * max(self.kappa(t) for t in grid)

    @property
    def is_constant(self) -> bool:
        return self.pieces is not None and len(self.pieces) == 1


def _with_desc(s: RateSchedule, desc: dict) -> RateSchedule:
    object.__setattr__(s, "description", desc)
    return s


def _check_const(b, d, kappa, p):
    if b < 0 or d < 0 or kappa < 0:
        raise ValidationError("rates must be non-negative")
    if not (0.0 <= p <= 1.0):
        raise ValidationError(f"p must lie in [0, 1], got {p}")
    if p == 0.0 and kappa > 0:
        raise ValidationError("p=0 with kappa>0: terminal disasters are not allowed")


def _logsumexp(xs) -> float:
    xs = [x for x in xs if x > -math.inf]
    if not xs:
        return -math.inf
    m = max(xs)
    return m + math.log(math.fsum(math.exp(x - m) for x in xs))


def _log_expint(delta: float, dt: float) -> float:
    """``log int_0^dt exp(-delta s) ds``, stable for any sign of ``delta``."""
    x = delta * dt
    if abs(x) < 1e-12:
        return math.log(dt)
    if x > 0:
        return math.log(-math.expm1(-x)) - math.log(delta)
    # negative delta: integral = (exp(|x|) - 1) / |delta|
    return -x + math.log(-math.expm1(x)) - math.log(-delta)


def _log_weighted_smooth(s: RateSchedule, a: float, c: float) -> float:
    """Joint ODE for ``w = v(s) - v(a)`` and ``J = int b e^{-w}`` over [a, c]."""
    # rates that have decayed to ~1e-160 starve the step-size control, so
    # J is integrated in units of a typical birth rate on the interval
    scale = max(abs(s.b(x)) for x in np.linspace(a, c, 9))
    if scale == 0.0:
        return -math.inf

    def rhs(t, y):
        return [s.b(t) - s.d(t), s.b(t) / scale * math.exp(-y[0])]

    y = [0.0, 0.0]
    for lo, hi in s._panels(a, c):
        with np.errstate(invalid="ignore", divide="ignore"):
            sol = solve_ivp(rhs, (lo, hi), y, method="DOP853", rtol=1e-11, atol=1e-14)
        if not sol.success:
            raise NumericalError(f"weighted birth integral failed on [{lo}, {hi}]: {sol.message}")
        y = list(sol.y[:, -1])
    return math.log(y[1]) + math.log(scale) if y[1] > 0 else -math.inf
