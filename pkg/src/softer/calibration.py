"""Induced prior moments of the coefficient tensor and hyperparameter calibration.

The prior on every coefficient entry has mean zero, zero covariance across
entries, and a variance that splits into a part coming from the underlying
hard PARAFAC and a part coming from the softening.  :func:`calibrate` picks
the Gamma rates of ``τ_γ`` and ``σ²_k`` so that, for a matrix predictor, the
total variance and the softening share hit user targets.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

from scipy import optimize

__all__ = [
    "MomentError",
    "Hyperparameters",
    "CalibrationTarget",
    "component_factor",
    "expected_w",
    "prior_variance",
    "hard_variance",
    "additional_variance",
    "calibrate",
    "solve_calibration",
    "default_hyperparameters",
]


class MomentError(ValueError):
    """Prior moments are undefined for the requested hyperparameters."""


@dataclass(frozen=True)
class Hyperparameters:
    D: int = 3
    alpha: float = 1.0
    a_lambda: float = 3.0
    b_lambda: float = 3.0 ** 0.25
    a_taugamma: float = 3.0
    b_taugamma: float = 1.0
    a_sigma: float = 0.5
    b_sigma: float = 1.0
    # τ² ~ IG(shape a_tau2, scale b_tau2); kept apart from the τ_γ pair
    a_tau2: float = 2.0
    b_tau2: float = 0.35
    prior_sd_mu_delta: float = 1.0

    def __post_init__(self):
        if int(self.D) != self.D or self.D < 1:
            raise ValueError("D must be a positive integer")
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"hyperparameter {name} must be positive, got {value}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparameters":
        return cls(**d)


@dataclass(frozen=True)
class CalibrationTarget:
    V_star: float = 1.0
    AV_star: float = 0.1

    def __post_init__(self):
        if not self.V_star > 0:
            raise ValueError("V_star must be positive")
        if not 0 <= self.AV_star < 1:
            raise ValueError("AV_star must lie in [0, 1)")


def component_factor(alpha: float, D: int, K: int) -> float:
    """``D * E(ζ^K)`` for ``ζ ~ Dirichlet(α/D, ..., α/D)``."""
    out = float(D)
    for r in range(K):
        out *= (alpha / D + r) / (alpha + r)
    return out


def expected_w(a_lambda: float, b_lambda: float) -> float:
    """Prior mean of ``w`` with ``w | λ ~ Exp(λ²/2)``, ``λ ~ Gamma(a, b)``."""
    if a_lambda <= 2:
        raise MomentError("E(w) requires a_lambda > 2")
    return 2.0 * b_lambda**2 / ((a_lambda - 1.0) * (a_lambda - 2.0))


def _rising(a: float, K: int) -> list[float]:
    rho = [1.0]
    for l in range(1, K + 1):
        rho.append(rho[-1] * (a + l - 1))
    return rho


def _variance_terms(h: Hyperparameters, K: int) -> list[float]:
    """Terms ``l = 0..K`` of the variance sum (power ``l`` of the hard part)."""
    rate = h.a_sigma / h.b_sigma
    ew = expected_w(h.a_lambda, h.b_lambda) / h.b_taugamma
    rho = _rising(h.a_taugamma, K)
    front = component_factor(h.alpha, h.D, K)
    return [front * rho[l] * math.comb(K, l) * ew**l * rate ** (K - l) for l in range(K + 1)]


def prior_variance(h: Hyperparameters, K: int) -> float:
    """Prior variance of a single coefficient entry (mean and covariances are 0)."""
    return math.fsum(_variance_terms(h, K))


def hard_variance(h: Hyperparameters, K: int) -> float:
    """Variance of an entry under the hard PARAFAC (``E(σ²_k) = 0``)."""
    return _variance_terms(h, K)[K]


def additional_variance(h: Hyperparameters, K: int) -> float:
    terms = _variance_terms(h, K)
    total = math.fsum(terms)
    return math.fsum(terms[:K]) / total


def calibrate(
    target: CalibrationTarget,
    *,
    a_taugamma: float = 3.0,
    a_sigma: float = 0.5,
    a_lambda: float = 3.0,
    b_lambda: float | None = None,
    alpha: float = 1.0,
    D: int = 3,
    K: int = 2,
    **rest,
) -> Hyperparameters:
    """Closed-form rates of ``τ_γ`` and ``σ²_k`` for a matrix predictor.

    Extra keyword arguments (``a_tau2``, ``b_tau2``, ``prior_sd_mu_delta``)
    are passed through to the returned :class:`Hyperparameters`.  With
    ``AV_star = 0`` the softening vanishes and ``b_sigma`` is infinite.
    """
    if K != 2:
        raise NotImplementedError("closed-form calibration is available for K = 2 only")
    if b_lambda is None:
        b_lambda = a_lambda ** (1.0 / (2 * K))
    C = (alpha / D + 1.0) / (alpha + 1.0)
    ew = expected_w(a_lambda, b_lambda)
    V, AV, a = target.V_star, target.AV_star, a_taugamma
    s = math.sqrt(V * (1.0 - AV) * a / (C * (a + 1.0)))
    b_taugamma = a * ew / s
    ratio = s * (math.sqrt(1.0 - (a + 1.0) / a * (1.0 - 1.0 / (1.0 - AV))) - 1.0)
    b_sigma = a_sigma / ratio if ratio > 0 else math.inf
    return Hyperparameters(
        D=D, alpha=alpha, a_lambda=a_lambda, b_lambda=b_lambda,
        a_taugamma=a_taugamma, b_taugamma=b_taugamma,
        a_sigma=a_sigma, b_sigma=b_sigma, **rest,
    )


def solve_calibration(target: CalibrationTarget, base: Hyperparameters, K: int) -> Hyperparameters:
    """Numerically match ``(V_star, AV_star)`` for any mode count ``K``.

    The hard part fixes ``b_taugamma`` directly; the softening share is then
    monotone in ``a_sigma / b_sigma`` and is found by root bracketing.
    """
    V, AV = target.V_star, target.AV_star
    ew = expected_w(base.a_lambda, base.b_lambda)
    front = component_factor(base.alpha, base.D, K)
    rho_K = _rising(base.a_taugamma, K)[K]
    b_taugamma = ew * (front * rho_K / (V * (1.0 - AV))) ** (1.0 / K)
    h = replace(base, b_taugamma=b_taugamma, b_sigma=1.0)
    if AV == 0:
        return replace(h, b_sigma=math.inf)

    def excess(log_ratio: float) -> float:
        trial = replace(h, b_sigma=h.a_sigma / math.exp(log_ratio))
        return math.fsum(_variance_terms(trial, K)[:K]) - V * AV

    lo, hi = -60.0, 60.0
    log_ratio = optimize.brentq(excess, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500)
    return replace(h, b_sigma=h.a_sigma / math.exp(log_ratio))


def default_hyperparameters(K: int = 2, D: int = 3) -> Hyperparameters:
    """Default bundle: Var(B_j) = 1, 10% additional variance, τ² ~ IG(2, 0.35)."""
    a_lambda = 3.0
    base = Hyperparameters(
        D=D, alpha=1.0, a_lambda=a_lambda, b_lambda=a_lambda ** (1.0 / (2 * K)),
        a_taugamma=3.0, a_sigma=0.5, a_tau2=2.0, b_tau2=0.35, prior_sd_mu_delta=1.0,
    )
    target = CalibrationTarget(1.0, 0.1)
    if K == 2:
        return calibrate(target, a_taugamma=3.0, a_sigma=0.5, a_lambda=a_lambda,
                         b_lambda=base.b_lambda, alpha=1.0, D=D, K=2,
                         a_tau2=2.0, b_tau2=0.35, prior_sd_mu_delta=1.0)
    return solve_calibration(target, base, K)
