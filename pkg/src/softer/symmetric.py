"""Symmetric and semi-symmetric variants for network-style predictors.

For an ``R × R`` symmetric predictor the coefficient matrix is
``B = Σ_d ξ_d B_1^(d) ∘ B_2^(d)`` with ``B_2^(d) = (B_1^(d))ᵀ`` and
``ξ_d ∈ {-1, +1}``; entry ``(j1, j2)`` of ``B_1^(d)`` is centred on
``γ^(d)_{j1}``.  The semi-symmetric ``R × R × p`` case adds a third mode
whose entries are shared between ``(j1, j2, ·)`` and ``(j2, j1, ·)`` and
centred on ``ρ^(d)_{j3}``.  Diagonal entries are ignored throughout.

The sampler itself lives in :mod:`softer.sampler`; the :class:`Layout`
there restricts free parameters to the strict lower triangle, and this
module provides the mirroring, the mean structures and the input checks.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .model import ChainSamples, Dataset, SofterConfig
from .tensor import ShapeError

__all__ = [
    "SymmetryError",
    "enforce_symmetry",
    "compose_symmetric_mean",
    "compose_semisymmetric_mean",
    "ingest_symmetric",
    "update_xi",
    "run_chain_symmetric",
]


class SymmetryError(ValueError):
    """A predictor is not symmetric in its first two modes."""


def _swap(a: np.ndarray) -> np.ndarray:
    # (D, R, R, ...) -> transpose of the two network modes
    return np.swapaxes(a, 1, 2)


def enforce_symmetry(beta: np.ndarray, symmetry: str) -> np.ndarray:
    """Rebuild the mirrored entries of ``beta`` (shape ``(D, K, R, R[, p])``) from the lower triangle.

    The strict lower triangles of ``B_1`` and ``B_2`` are the free values;
    afterwards ``B_2 = B_1ᵀ``, ``β_3`` (semi-symmetric) is symmetric in its
    first two modes and every diagonal is zero.  Idempotent.
    """
    if symmetry not in ("symmetric", "semi-symmetric"):
        raise ValueError(f"enforce_symmetry needs a symmetric mode, got {symmetry!r}")
    beta = np.asarray(beta, dtype=float)
    K = beta.shape[1]
    if (symmetry == "symmetric" and K != 2) or (symmetry == "semi-symmetric" and K != 3):
        raise ShapeError(f"{symmetry} mode does not match {K} modes")
    R = beta.shape[2]
    if beta.shape[3] != R:
        raise ShapeError("network modes must be square")
    lower = np.tri(R, R, -1, dtype=bool).reshape((1, R, R) + (1,) * (K - 2))
    out = np.empty_like(beta)
    low1 = np.where(lower, beta[:, 0], 0.0)
    low2 = np.where(lower, beta[:, 1], 0.0)
    out[:, 0] = low1 + _swap(low2)
    out[:, 1] = low2 + _swap(low1)
    for k in range(2, K):
        low = np.where(lower, beta[:, k], 0.0)
        out[:, k] = low + _swap(low)
    return out


def compose_symmetric_mean(gamma, xi) -> np.ndarray:
    """``Σ_d ξ_d γ^(d) ⊗ γ^(d)`` for ``gamma`` of shape ``(D, R)``."""
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    xi = np.asarray(xi, dtype=float).reshape(-1)
    if xi.size != gamma.shape[0]:
        raise ShapeError("one sign per component is required")
    return np.einsum("d,di,dj->ij", xi, gamma, gamma)


def compose_semisymmetric_mean(gamma, rho) -> np.ndarray:
    """``Σ_d γ^(d) ⊗ γ^(d) ⊗ ρ^(d)`` for ``gamma (D, R)`` and ``rho (D, p)``."""
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    rho = np.atleast_2d(np.asarray(rho, dtype=float))
    if gamma.shape[0] != rho.shape[0]:
        raise ShapeError("gamma and rho need the same number of components")
    return np.einsum("di,dj,dk->ijk", gamma, gamma, rho)


def ingest_symmetric(dataset: Dataset, symmetry: str, tol: float = 0.0) -> Dataset:
    """Zero the diagonals and check that each predictor is symmetric in modes 1-2.

    ``tol`` bounds ``max |X - Xᵀ|``; the default requires an exact match.
    """
    X = dataset.predictors
    K = X.ndim - 1
    if (symmetry == "symmetric" and K != 2) or (symmetry == "semi-symmetric" and K != 3):
        raise ShapeError(f"{symmetry} mode does not match a {K}-mode predictor")
    R = X.shape[1]
    if X.shape[2] != R:
        raise ShapeError("network modes must be square")
    off = ~np.eye(R, dtype=bool).reshape((1, R, R) + (1,) * (K - 2))
    Xz = np.where(off, X, 0.0)
    if Xz.size:
        gap = float(np.max(np.abs(Xz - np.swapaxes(Xz, 1, 2))))
        if gap > tol:
            raise SymmetryError(f"predictor asymmetry {gap:.3g} exceeds tolerance {tol:.3g}")
    return Dataset(dataset.y, Xz, dataset.covariates)


def update_xi(sampler) -> None:
    """Draw every sign ``ξ_d`` from its two-point conditional (in place)."""
    if not sampler.layout.symmetric:
        raise ValueError("update_xi needs a symmetric configuration")
    sampler.update_xi()


def run_chain_symmetric(config: SofterConfig, dataset: Dataset, chain: int = 0,
                        **kwargs) -> ChainSamples | None:
    """Run the shared sampler in a symmetric mode; predictors are validated on ingestion."""
    from .sampler import run_chain

    if config.symmetry == "none":
        raise ValueError("run_chain_symmetric needs symmetry 'symmetric' or 'semi-symmetric'")
    return run_chain(config, dataset, chain, **kwargs)


def symmetric_config(config: SofterConfig, symmetry: str = "symmetric") -> SofterConfig:
    return replace(config, symmetry=symmetry)
