"""Closed-form phase classification, decay rates and survival probabilities.

Covers homogeneous branching processes with binomial disasters, the
birth-death special case, and p-jump processes with concave drift.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

from .core import DriftSpec, OffspringLaw
from .errors import DomainError, NumericWarning, RegimeError, ValidationError

__all__ = [
    "PhaseReport",
    "MuThresholds",
    "criticality_index",
    "classify_homogeneous",
    "classify_mu_form",
    "homogeneous_decay_rate",
    "bd_survival_probability",
    "bd_decay_rate",
    "binary_dual_moments",
    "survival_from_moments",
    "pjump_regime",
    "pjump_decay_rate",
]

MAX_ALTERNATING_TERMS = 60

SUBCRIT_WEAK = "subcritical-weak"
SUBCRIT_LD = "subcritical-ld"
SUPERCRIT = "supercritical"
P_ZERO = "p-zero"


@dataclass(frozen=True)
class PhaseReport:
    regime: str
    nu: float
    decay_rate: float | None
    survival_prob: float | None
    formula_id: str

    def __post_init__(self):
        decaying = self.regime in (SUBCRIT_WEAK, SUBCRIT_LD, P_ZERO)
        if decaying != (self.decay_rate is not None):
            raise ValueError(f"decay_rate must be set exactly for decaying regimes ({self.regime})")

    def to_dict(self) -> dict:
        return asdict(self)


def _log_inv(p: float) -> float:
    return math.inf if p == 0.0 else -math.log(p)


def _check_common(lam: float, kappa: float, p: float, allow_p_one: bool = False):
    if not lam > 0:
        raise ValidationError(f"lambda must be positive, got {lam}")
    if not kappa > 0:
        raise ValidationError(f"kappa must be positive, got {kappa}")
    hi_ok = p <= 1.0 if allow_p_one else p < 1.0
    if not (p >= 0.0 and hi_ok):
        bound = "[0, 1]" if allow_p_one else "[0, 1)"
        raise ValidationError(f"p must lie in {bound}, got {p}")


def criticality_index(growth: float, kappa: float, p: float) -> float:
    """``nu = growth / (kappa log(1/p))`` with ``growth = lambda (mu - 1)``."""
    if p == 0.0:
        return 0.0
    return growth / (kappa * _log_inv(p))


def _rate_from_growth(growth: float, kappa: float, p: float) -> tuple[str, float | None, str]:
    if p == 0.0:
        return P_ZERO, kappa + max(-growth, 0.0), "p-zero: kappa + max(-growth, 0)"
    nu = criticality_index(growth, kappa, p)
    if nu <= p:
        tag = "linear regime: (1-p) kappa - growth"
        if nu == p:
            tag += " [boundary nu = p]"
        return SUBCRIT_WEAK, (1.0 - p) * kappa - growth, tag
    if nu <= 1.0:
        tag = "large-deviation regime: kappa (1 - nu - nu log(1/nu))"
        if nu == 1.0:
            tag += " [boundary nu = 1]"
        return SUBCRIT_LD, kappa * (1.0 - nu - nu * math.log(1.0 / nu)), tag
    return SUPERCRIT, None, "supercritical: alternating moment series"


def homogeneous_decay_rate(lam: float, mu: float, kappa: float, p: float) -> float:
    """Exponential rate of ``P(Z_t > 0)``; raises :class:`RegimeError` if supercritical."""
    _check_common(lam, kappa, p)
    regime, rate, _ = _rate_from_growth(lam * (mu - 1.0), kappa, p)
    if rate is None:
        raise RegimeError("process is supercritical; survival does not decay")
    return rate


def classify_homogeneous(lam: float, law: OffspringLaw, kappa: float, p: float,
                         z0: int = 1) -> PhaseReport:
    """Regime, criticality index, and rate or survival probability."""
    _check_common(lam, kappa, p)
    growth = lam * (law.mean - 1.0)
    nu = criticality_index(growth, kappa, p)
    regime, rate, tag = _rate_from_growth(growth, kappa, p)
    surv = None
    if regime != SUPERCRIT:
        surv = 0.0
    elif law.is_birth_death and z0 <= MAX_ALTERNATING_TERMS:
        # events with one offspring change nothing, so only q_0 and q_2 matter
        surv = bd_survival_probability(z0, lam * law.prob(2), lam * law.prob(0), kappa, p)
    return PhaseReport(regime, nu, rate, surv, tag)


@dataclass(frozen=True)
class MuThresholds:
    lower: float
    upper: float
    mu: float
    position: str
    regime: str

    def to_dict(self) -> dict:
        return asdict(self)


def classify_mu_form(lam: float, mu: float, kappa: float, p: float) -> MuThresholds:
    """Offspring-mean thresholds ``1 + (kappa p / lambda) log(1/p)`` and ``1 + (kappa / lambda) log(1/p)``.

    ``p = 1`` is accepted as the classical limit where both thresholds equal 1.
    """
    _check_common(lam, kappa, p, allow_p_one=True)
    if p == 0.0:
        lower, upper = 1.0, math.inf
    else:
        L = _log_inv(p)
        lower = 1.0 + kappa * p * L / lam
        upper = 1.0 + kappa * L / lam
    if mu <= lower:
        position = "below-lower"
    elif mu <= upper:
        position = "between"
    else:
        position = "above-upper"
    if p == 0.0:
        regime = P_ZERO
    elif p == 1.0:
        regime = "classical-supercritical" if mu > 1.0 else "classical-subcritical"
    else:
        regime = {"below-lower": SUBCRIT_WEAK, "between": SUBCRIT_LD,
                  "above-upper": SUPERCRIT}[position]
    return MuThresholds(lower, upper, float(mu), position, regime)


def _check_bd(b, d, kappa, p):
    if b < 0 or d < 0:
        raise ValidationError(f"birth and death rates must be non-negative, got b={b}, d={d}")
    if not kappa > 0:
        raise ValidationError(f"kappa must be positive, got {kappa}")
    if not (0.0 <= p <= 1.0):
        raise ValidationError(f"p must lie in [0, 1], got {p}")


def _guard_terms(k: int, force: bool):
    if k > MAX_ALTERNATING_TERMS:
        msg = (f"alternating sum with {k} terms loses all precision to cancellation "
               f"beyond {MAX_ALTERNATING_TERMS} terms")
        if not force:
            raise DomainError(msg + "; pass force=True to compute anyway")
        warnings.warn(msg, NumericWarning, stacklevel=3)


def binary_dual_moments(b: float, d: float, kappa: float, p: float, k_max: int) -> list[float]:
    """Stationary moments ``E[X^k]``, k = 1..k_max, of the birth-death dual.

    The first moment comes from the identity for ``E[alpha(X)/X]``; the rest
    from ``m_{k+1} = m_k (1 - (d k + kappa (1 - p^k)) / (b k))``.
    """
    _check_bd(b, d, kappa, p)
    L = _log_inv(p)
    if not (b > 0 and b - d > kappa * L):
        raise RegimeError(f"need b - d > kappa log(1/p) (supercritical), got b={b}, d={d}, "
                          f"kappa={kappa}, p={p}")
    m = 1.0 - (d + kappa * L) / b
    out = [m]
    for k in range(1, int(k_max)):
        m *= 1.0 - (d * k + kappa * (1.0 - p ** k)) / (b * k)
        out.append(m)
    return out


def survival_from_moments(z0: int, moments: Sequence[float], *, force: bool = False) -> float:
    """``sum_k C(z0, k) (-1)^(k-1) m_k``, the survival probability from ``z0`` individuals."""
    z0 = int(z0)
    if z0 < 0:
        raise ValidationError(f"initial size must be non-negative, got {z0}")
    if len(moments) < z0:
        raise ValidationError(f"need at least {z0} moments, got {len(moments)}")
    _guard_terms(z0, force)
    return math.fsum(math.comb(z0, k) * (-1) ** (k - 1) * moments[k - 1] for k in range(1, z0 + 1))


def bd_survival_probability(k: int, b: float, d: float, kappa: float, p: float, *,
                            force: bool = False) -> float:
    """Probability that a birth-death process with disasters started at ``k`` survives forever.

    Zero unless ``b - d > kappa log(1/p)``.
    """
    _check_bd(b, d, kappa, p)
    k = int(k)
    if k < 0:
        raise ValidationError(f"initial size must be non-negative, got {k}")
    if k == 0 or not (b > 0 and b - d > kappa * _log_inv(p)):
        return 0.0
    _guard_terms(k, force)
    return survival_from_moments(k, binary_dual_moments(b, d, kappa, p, k), force=True)


def bd_decay_rate(b: float, d: float, kappa: float, p: float) -> float:
    """Exponential rate of ``P(Z_t > 0)`` for a birth-death process with disasters."""
    _check_bd(b, d, kappa, p)
    if p == 1.0:
        raise ValidationError("p = 1 means no disasters; use the classical theory")
    if p == 0.0:
        return kappa + max(d - b, 0.0)
    L = _log_inv(p)
    r = b - d
    if r > kappa * L:
        raise RegimeError(f"b - d = {r} exceeds kappa log(1/p) = {kappa * L}; survival is positive")
    if r <= kappa * p * L:
        return (1.0 - p) * kappa - r
    return kappa - (r / L) * (1.0 + math.log(kappa * L / r))


# ---------------------------------------------------------------------------
# p-jump processes with concave drift
# ---------------------------------------------------------------------------

def pjump_regime(drift: DriftSpec, p: float, kappa: float = 1.0) -> str:
    """'p-zero', 'subcritical', 'critical', 'supercritical' or 'inconclusive'.

    'inconclusive' covers ``alpha'_0 < kappa log(1/p) <= alpha_hat`` where
    neither convergence statement applies.
    """
    if p == 0.0:
        return P_ZERO
    L = kappa * _log_inv(p)
    a0, ah = drift.alpha0_slope, drift.alpha_hat
    if ah < L:
        return "subcritical"
    if math.isfinite(a0) and abs(a0 - L) <= 1e-12 * max(1.0, L):
        return "critical"
    if a0 > L:
        return "supercritical"
    return "inconclusive"


def pjump_decay_rate(alpha0_slope: float, p: float, kappa: float = 1.0, k: int = 1) -> float:
    """``lim -(1/t) log E[X_t^k]`` for a concave drift with slope ``alpha0_slope`` at 0."""
    if not kappa > 0:
        raise ValidationError(f"kappa must be positive, got {kappa}")
    if not (0.0 <= p < 1.0):
        raise ValidationError(f"p must lie in [0, 1), got {p}")
    a = alpha0_slope / kappa
    if p == 0.0:
        return kappa * (1.0 + max(0.0, -k * a))
    L = _log_inv(p)
    if a >= L:
        raise RegimeError(f"alpha'_0 / kappa = {a} >= log(1/p) = {L}; moments do not decay")
    if a <= p ** k * L:
        return kappa * (1.0 - p ** k - k * a)
    gamma = L / a
    return kappa * (1.0 - (1.0 + math.log(gamma)) / gamma)
