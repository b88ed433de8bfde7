"""Continuous-state branching processes with p-disasters, through their dual p-jump process.

The mechanism ``(b, c, N)`` gives the concave drift

    alpha(x) = b x - c x^2 - int (exp(-x y) - 1 + x y) N(dy)

and ``P(Z_t = 0 | Z_0 = z) = E[exp(-z X_t) | X_0 = inf]`` where ``X`` is the
p-jump process with drift ``alpha``. ``X_0 = inf`` is approximated by a large
``x_max`` with a doubling check.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._jit import njit
from .core import DriftSpec, as_stream, bisect, drift_characteristics
from .errors import DomainError, NumericalError, NumericWarning, RegimeError, ValidationError
from .parallel import reduce_batches
from .pjump import DecayRateEstimate, PJumpConfig, _ols, auto_tilt, sample_states

__all__ = [
    "BranchingMechanism",
    "ExtinctionEstimate",
    "mechanism_drift",
    "largest_root",
    "extinction_probability",
    "csbp_survival_curve",
    "csbp_decay_estimate",
    "csbp_decay_rate",
]

SERIES_CUT = 1e-3


@njit(cache=True)
def _phi(u):
    # exp(-u) - 1 + u without cancellation near 0
    if u < SERIES_CUT:
        return u * u * (0.5 - u * (1.0 / 6.0 - u * (1.0 / 24.0 - u / 120.0)))
    return u + math.expm1(-u)


def _phi_np(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    small = u < SERIES_CUT
    out = np.empty_like(u)
    us = u[small]
    out[small] = us * us * (0.5 - us * (1.0 / 6.0 - us * (1.0 / 24.0 - us / 120.0)))
    ul = u[~small]
    out[~small] = ul + np.expm1(-ul)
    return out


@dataclass(frozen=True, eq=False)
class BranchingMechanism:
    """Branching mechanism with disasters.

    ``atoms`` is a list of ``(y, mass)`` pairs. A density can be given on a
    logarithmic grid as ``density_y`` / ``density_values``; it is turned into
    weighted atoms by the trapezoidal rule in ``log y``, so mass beyond the
    grid is ignored. ``tail_exponent`` is recorded for reference only.
    """

    b: float
    c: float = 0.0
    atoms: tuple = ()
    kappa: float = 1.0
    p: float = 0.5
    density_y: tuple = ()
    density_values: tuple = ()
    tail_exponent: float | None = None
    eps: float = 0.5

    def __post_init__(self):
        if self.c < 0:
            raise ValidationError(f"diffusion coefficient c must be non-negative, got {self.c}")
        if not self.kappa > 0:
            raise ValidationError(f"kappa must be positive, got {self.kappa}")
        if not (0.0 < self.p < 1.0):
            raise ValidationError(f"p must lie in (0, 1), got {self.p}")
        if not (0.0 < self.eps < 1.0):
            raise ValidationError(f"eps must lie in (0, 1), got {self.eps}")
        atoms = tuple((float(y), float(m)) for y, m in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        for y, m in atoms:
            if not (y > 0 and m >= 0 and math.isfinite(y) and math.isfinite(m)):
                raise ValidationError(f"atoms need y > 0 and mass >= 0, got ({y}, {m})")
        if len(self.density_y) != len(self.density_values):
            raise ValidationError("density_y and density_values must have equal length")
        if len(self.density_y) == 1:
            raise ValidationError("a density needs at least two grid points")
        if len(self.density_y):
            ys = np.asarray(self.density_y, dtype=float)
            vs = np.asarray(self.density_values, dtype=float)
            if np.any(ys <= 0) or np.any(np.diff(ys) <= 0) or np.any(vs < 0):
                raise ValidationError("density grid must be positive and increasing with non-negative values")
        ys, ms = self.weighted_atoms
        moment = float(np.sum(ms * np.minimum(ys, ys * ys)))
        if not math.isfinite(moment):
            raise ValidationError("int min(y, y^2) N(dy) is not finite")

    # -- representation -------------------------------------------------------

    @cached_property
    def weighted_atoms(self) -> tuple[np.ndarray, np.ndarray]:
        ys = [y for y, _ in self.atoms]
        ms = [m for _, m in self.atoms]
        if len(self.density_y):
            gy = np.asarray(self.density_y, dtype=float)
            gv = np.asarray(self.density_values, dtype=float)
            lg = np.log(gy)
            w = np.zeros(len(gy))
            h = np.diff(lg)
            w[:-1] += 0.5 * h
            w[1:] += 0.5 * h
            ys += gy.tolist()
            ms += (gv * gy * w).tolist()
        return np.array(ys, dtype=float), np.array(ms, dtype=float)

    @property
    def has_jumps(self) -> bool:
        return bool(np.any(self.weighted_atoms[1] > 0))

    @cached_property
    def alpha(self):
        """Compiled drift."""
        ys, ms = self.weighted_atoms
        ys = np.ascontiguousarray(ys)
        ms = np.ascontiguousarray(ms)
        b, c = float(self.b), float(self.c)

        @njit
        def alpha(x):
            acc = b * x - c * x * x
            for i in range(ys.shape[0]):
                acc -= ms[i] * _phi(x * ys[i])
            return acc

        return alpha

    @cached_property
    def drift(self) -> DriftSpec:
        return drift_characteristics(self.alpha, math.inf)

    def comes_down(self, x_lo: float = 1e3, x_hi: float = 1e9) -> bool:
        """``x^-(1+eps) alpha(x)`` negative and nonincreasing on a geometric grid of large x."""
        xs = np.geomspace(x_lo, x_hi, 25)
        vals = np.array([mechanism_drift(self, x) for x in xs]) * xs ** -(1.0 + self.eps)
        return bool(np.all(vals < 0) and np.all(np.diff(vals) <= 1e-12 * np.abs(vals[:-1])))

    @classmethod
    def from_json(cls, spec: dict) -> "BranchingMechanism":
        try:
            dens = spec.get("density") or {}
            return cls(b=float(spec["b"]), c=float(spec.get("c", 0.0)),
                       atoms=tuple(tuple(a) for a in spec.get("atoms", ())),
                       kappa=float(spec.get("kappa", 1.0)), p=float(spec["p"]),
                       density_y=tuple(dens.get("y", ())), density_values=tuple(dens.get("values", ())),
                       tail_exponent=dens.get("tail_exponent"), eps=float(spec.get("eps", 0.5)))
        except KeyError as exc:
            raise ValidationError(f"mechanism lacks field {exc.args[0]!r}") from None

    def to_json(self) -> dict:
        out = {"b": self.b, "c": self.c, "atoms": [list(a) for a in self.atoms],
               "kappa": self.kappa, "p": self.p, "eps": self.eps}
        if len(self.density_y):
            out["density"] = {"y": list(self.density_y), "values": list(self.density_values),
                              "tail_exponent": self.tail_exponent}
        return out


def mechanism_drift(mech: BranchingMechanism, x: float) -> float:
    """``alpha(x)`` evaluated in plain numpy (independent of the compiled drift)."""
    if x < 0:
        raise DomainError(f"x must be non-negative, got {x}")
    ys, ms = mech.weighted_atoms
    jump = math.fsum((ms * _phi_np(x * ys)).tolist()) if len(ys) else 0.0
    return mech.b * x - mech.c * x * x - jump


def largest_root(mech: BranchingMechanism) -> float:
    """Largest zero ``xi`` of ``alpha`` (0 when ``alpha < 0`` on ``(0, inf)``)."""
    if mech.b <= 0:
        return 0.0
    hi = 1.0
    while mechanism_drift(mech, hi) > 0:
        hi *= 2.0
        if hi > 1e15:
            raise NumericalError("alpha stays positive up to 1e15; cannot bracket its largest root")
    lo = hi / 2.0
    while mechanism_drift(mech, lo) <= 0:
        lo /= 2.0
        if lo < 1e-300:
            raise NumericalError("alpha has no positive values although b > 0")
    return float(bisect(lambda x: mechanism_drift(mech, x), lo, hi, tol=1e-12 * hi))


def csbp_decay_rate(mech: BranchingMechanism) -> float:
    """Exponential rate of ``P(Z_t > 0)``; depends on ``b, kappa, p`` only."""
    L = -math.log(mech.p)
    k, b = mech.kappa, mech.b
    if b > k * L:
        raise RegimeError(f"b = {b} exceeds kappa log(1/p) = {k * L}; survival does not decay")
    if b <= k * mech.p * L:
        return (1.0 - mech.p) * k - b
    gamma = k * L / b
    return k - (k / gamma) * (1.0 + math.log(gamma))


# ---------------------------------------------------------------------------
# Monte Carlo through the dual
# ---------------------------------------------------------------------------

def _config(mech: BranchingMechanism, x_max: float, t_end: float) -> PJumpConfig:
    if not mech.comes_down():
        raise ValidationError(f"x^-(1+eps) alpha(x) is not eventually negative for eps={mech.eps}; "
                              "the dual cannot start from infinity")
    return PJumpConfig(mech.drift, mech.p, float(x_max), t_end=float(t_end), kappa=mech.kappa)


def _default_x_max(mech: BranchingMechanism) -> float:
    return max(10.0 * largest_root(mech), 10.0)


@dataclass(frozen=True)
class ExtinctionEstimate:
    value: float
    std_err: float
    sensitivity: float
    value_2x: float
    std_err_2x: float
    x_max: float
    t: float
    z: float

    @property
    def sensitivity_ok(self) -> bool:
        return self.sensitivity <= 3.0 * math.hypot(self.std_err, self.std_err_2x)

    def to_dict(self) -> dict:
        return {"value": self.value, "std_err": self.std_err, "sensitivity": self.sensitivity,
                "value_2x": self.value_2x, "std_err_2x": self.std_err_2x, "x_max": self.x_max,
                "t": self.t, "z": self.z, "sensitivity_ok": self.sensitivity_ok}


def _laplace_mean(mech, z, t, x_max, n, stream):
    cfg = _config(mech, x_max, t)
    X, _ = sample_states(cfg, [t], n, stream)
    acc = reduce_batches([np.exp(-z * X)], (1,))
    return float(acc.mean[0]), float(acc.std_err[0])


def extinction_probability(mech: BranchingMechanism, z: float, t: float, x_max: float | None = None,
                           n_replicas: int = 10_000, rng=0) -> ExtinctionEstimate:
    """``P(Z_t = 0 | Z_0 = z)`` from the dual started at ``x_max`` and at ``2 x_max``.

    Both runs share random numbers, so their difference isolates the
    truncation of the starting point.
    """
    if z < 0:
        raise ValidationError(f"initial mass must be non-negative, got {z}")
    if t < 0:
        raise ValidationError(f"t must be non-negative, got {t}")
    xi = largest_root(mech)
    x_max = _default_x_max(mech) if x_max is None else float(x_max)
    if x_max < 10.0 * xi:
        raise ValidationError(f"x_max={x_max} must be at least 10 xi = {10 * xi}")
    if z == 0:
        return ExtinctionEstimate(1.0, 0.0, 0.0, 1.0, 0.0, x_max, float(t), 0.0)
    stream = as_stream(rng)
    v1, s1 = _laplace_mean(mech, z, t, x_max, n_replicas, stream)
    v2, s2 = _laplace_mean(mech, z, t, 2.0 * x_max, n_replicas, stream)
    est = ExtinctionEstimate(v1, s1, abs(v1 - v2), v2, s2, x_max, float(t), float(z))
    if not est.sensitivity_ok:
        warnings.warn(f"extinction estimate moves by {est.sensitivity:.3g} when x_max doubles "
                      "(more than 3 standard errors); increase x_max", NumericWarning, stacklevel=2)
    return est


def csbp_survival_curve(mech: BranchingMechanism, z: float, times, n_replicas: int = 10_000,
                        rng=0, *, x_max: float | None = None, tilt="auto") -> tuple[np.ndarray, np.ndarray]:
    """``P(Z_t > 0) = E[1 - exp(-z X_t)]`` at sorted ``times`` with standard errors.

    ``tilt='auto'`` simulates jumps at the importance-sampling rate of the
    p-jump module and reweights.
    """
    times = np.asarray(times, dtype=float)
    x_max = _default_x_max(mech) if x_max is None else float(x_max)
    cfg = _config(mech, x_max, float(times[-1]))
    rate = auto_tilt(cfg, 1) if tilt == "auto" else tilt
    X, logw = sample_states(cfg, times, n_replicas, rng, tilt=rate)
    vals = -np.expm1(-z * X) * np.exp(logw)
    acc = reduce_batches([vals], (len(times),))
    return acc.mean.copy(), acc.std_err.copy()


def csbp_decay_estimate(mech: BranchingMechanism, z: float = 1.0, t_window=(20.0, 80.0),
                        n_replicas: int = 10_000, rng=0, *, n_times: int = 16,
                        x_max: float | None = None, tilt="auto") -> DecayRateEstimate:
    """Least-squares slope of ``-log P(Z_t > 0)`` over ``t_window``."""
    lo, hi = map(float, t_window)
    if not hi > lo >= 0:
        raise ValidationError(f"bad time window {t_window}")
    times = np.linspace(lo, hi, n_times)
    m, _ = csbp_survival_curve(mech, z, times, n_replicas, rng, x_max=x_max, tilt=tilt)
    if np.any(m <= 0):
        raise NumericalError("survival estimate hit zero inside the window; shorten it or add replicas")
    y = -np.log(m)
    slope, se = _ols(times, y)
    cfg = _config(mech, _default_x_max(mech) if x_max is None else x_max, hi)
    return DecayRateEstimate(slope, se, times, -y, auto_tilt(cfg, 1) if tilt == "auto" else tilt)
