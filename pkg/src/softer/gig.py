"""Generalized inverse Gaussian variates.

``giG(p, a, b)`` has density proportional to ``x^(p-1) exp{-(a x + b / x) / 2}``
on ``x > 0``.  The Gamma (``b = 0``) and inverse-Gamma (``a = 0``) limits and
the ``|p| = 1/2`` inverse-Gaussian cases are drawn directly; everything else
goes through SciPy's ratio-of-uniforms generator for the one-parameter
``geninvgauss`` family, rescaled by ``sqrt(b / a)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

__all__ = ["GigParams", "GigError", "sample_gig", "gig_logpdf"]


class GigError(ValueError):
    """Parameters do not define a proper distribution."""


@dataclass(frozen=True)
class GigParams:
    p: float
    a: float
    b: float

    def __post_init__(self):
        _check(np.asarray(self.p, float), np.asarray(self.a, float), np.asarray(self.b, float))


def _check(p, a, b):
    if np.any(a < 0) or np.any(b < 0):
        raise GigError("giG needs a >= 0 and b >= 0")
    if np.any((a == 0) & (b == 0)):
        raise GigError("giG with a = b = 0 is improper")
    if np.any((a == 0) & (p >= 0)):
        raise GigError("giG with a = 0 needs p < 0")
    if np.any((b == 0) & (p <= 0)):
        raise GigError("giG with b = 0 needs p > 0")


def gig_logpdf(x, p, a, b):
    """Unnormalized log density."""
    x = np.asarray(x, dtype=float)
    return (p - 1.0) * np.log(x) - 0.5 * (a * x + b / x)


def _reciprocal_wald(mean_inv, shape, rng):
    """``1/X`` for ``X`` inverse Gaussian(mean ``1/mean_inv``, shape), stable as mean -> inf.

    Transformation with multiple roots; the smaller root is handled through
    its reciprocal, so ``mean_inv = 0`` gives the ``Gamma(1/2, shape/2)`` limit.
    """
    y = rng.standard_normal(mean_inv.shape) ** 2
    u = rng.random(mean_inv.shape)
    big = mean_inv + y / (2 * shape) + np.sqrt(4 * shape * y * mean_inv + y * y) / (2 * shape)
    small = mean_inv**2 / big
    return np.where(u * (1.0 + mean_inv / big) <= 1.0, big, small)


def sample_gig(p, a, b, rng: np.random.Generator):
    """Draw from ``giG(p, a, b)``; parameters broadcast elementwise."""
    p, a, b = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (p, a, b)))
    _check(p, a, b)
    scalar = p.ndim == 0
    shape = p.shape
    p, a, b = p.ravel(), a.ravel(), b.ravel()
    out = np.empty(p.shape)

    gam = b == 0
    if gam.any():
        out[gam] = rng.gamma(p[gam], 2.0 / a[gam])
    inv = a == 0
    if inv.any():
        out[inv] = 1.0 / rng.gamma(-p[inv], 2.0 / b[inv])
    rest = ~(gam | inv)
    half = rest & (p == 0.5)
    if half.any():
        # 1/x is inverse Gaussian with mean sqrt(a/b) and shape a
        out[half] = _reciprocal_wald(np.sqrt(b[half] / a[half]), a[half], rng)
    neg_half = rest & (p == -0.5)
    if neg_half.any():
        out[neg_half] = 1.0 / _reciprocal_wald(np.sqrt(a[neg_half] / b[neg_half]), b[neg_half], rng)
    general = rest & ~(half | neg_half)
    for i in np.flatnonzero(general):
        omega = np.sqrt(a[i] * b[i])
        out[i] = np.sqrt(b[i] / a[i]) * stats.geninvgauss.rvs(p[i], omega, random_state=rng)
    return float(out[0]) if scalar else out.reshape(shape)
