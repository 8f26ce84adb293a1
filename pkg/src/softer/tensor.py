"""Dense K-mode tensors and the algebra the regression model is built from.

Tensors are plain ``numpy.ndarray`` objects in C order (last index fastest),
which is also the vectorization order used by the sampler and on disk.
Indices in the public helpers that take a mode or slice number are 1-based.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "as_tensor",
    "outer_product",
    "hadamard",
    "frobenius_inner",
    "mode_slice",
    "get_entry",
    "set_entry",
    "linear_index",
    "multi_index",
    "parafac_compose",
    "soft_compose",
]


class ShapeError(ValueError):
    """Raised when tensor extents are inconsistent."""


def as_tensor(values, dims: Sequence[int] | None = None) -> np.ndarray:
    """Return ``values`` as a float64 tensor, optionally reshaped to ``dims``."""
    arr = np.asarray(values, dtype=np.float64)
    if dims is not None:
        dims = tuple(int(p) for p in dims)
        if not dims or any(p < 1 for p in dims):
            raise ShapeError(f"invalid dims {dims}")
        if arr.size != int(np.prod(dims)):
            raise ShapeError(f"{arr.size} values do not fill dims {dims}")
        arr = arr.reshape(dims)
    if arr.ndim == 0 or 0 in arr.shape:
        raise ShapeError("a tensor needs at least one mode and non-empty extents")
    return arr


def _check_same(A: np.ndarray, B: np.ndarray) -> None:
    if A.shape != B.shape:
        raise ShapeError(f"dims differ: {A.shape} vs {B.shape}")


def outer_product(vectors: Sequence) -> np.ndarray:
    """``a_1 ⊗ a_2 ⊗ ... ⊗ a_K``; entry ``j`` is ``prod_k a_k[j_k]``."""
    if len(vectors) == 0:
        raise ShapeError("outer product of an empty vector list")
    out = np.ones(())
    for v in vectors:
        v = np.asarray(v, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ShapeError("outer product factors must be non-empty vectors")
        out = np.multiply.outer(out, v)
    return out


def hadamard(A, B) -> np.ndarray:
    A, B = as_tensor(A), as_tensor(B)
    _check_same(A, B)
    return A * B


def frobenius_inner(A, B) -> float:
    """Sum of the entries of ``A ∘ B``."""
    A, B = as_tensor(A), as_tensor(B)
    _check_same(A, B)
    return float(np.dot(A.ravel(), B.ravel()))


def mode_slice(A, mode: int, index: int) -> np.ndarray:
    """The ``index``-th slice of ``A`` along ``mode`` (both 1-based).

    For a matrix, the mode-1 slice ``j`` is row ``j`` and the mode-2 slice
    is column ``j``.
    """
    A = as_tensor(A)
    if not 1 <= mode <= A.ndim:
        raise IndexError(f"mode {mode} out of range for a {A.ndim}-mode tensor")
    if not 1 <= index <= A.shape[mode - 1]:
        raise IndexError(f"index {index} out of range along mode {mode}")
    return np.take(A, index - 1, axis=mode - 1)


def linear_index(dims: Sequence[int], index: Sequence[int]) -> int:
    """0-based canonical offset of the 1-based multi-index ``index``."""
    if len(index) != len(dims):
        raise IndexError("multi-index length differs from the mode count")
    if any(not 1 <= j <= p for j, p in zip(index, dims)):
        raise IndexError(f"multi-index {tuple(index)} out of range for {tuple(dims)}")
    return int(np.ravel_multi_index([j - 1 for j in index], tuple(dims)))


def multi_index(dims: Sequence[int], offset: int) -> tuple[int, ...]:
    """Inverse of :func:`linear_index`."""
    return tuple(int(j) + 1 for j in np.unravel_index(offset, tuple(dims)))


def get_entry(A: np.ndarray, index: Sequence[int]) -> float:
    return float(A.ravel()[linear_index(A.shape, index)])


def set_entry(A: np.ndarray, index: Sequence[int], value: float) -> None:
    A.reshape(-1)[linear_index(A.shape, index)] = value


def parafac_compose(factors) -> np.ndarray:
    """Rank-D PARAFAC: ``sum_d β_1^(d) ⊗ ... ⊗ β_K^(d)``.

    ``factors[d][k]`` is the mode-k vector of component ``d``.
    """
    if len(factors) == 0:
        raise ShapeError("no PARAFAC components")
    lengths = [len(v) for v in factors[0]]
    total = None
    for comp in factors:
        if [len(v) for v in comp] != lengths:
            raise ShapeError("inconsistent factor lengths across components")
        term = outer_product(comp)
        total = term if total is None else total + term
    return total


def soft_compose(component_tensors) -> np.ndarray:
    """Soft PARAFAC: ``sum_d B_1^(d) ∘ ... ∘ B_K^(d)``.

    Accepts a nested ``[d][k]`` sequence of equally-shaped tensors or an
    array of shape ``(D, K, *dims)``.
    """
    arr = np.asarray(component_tensors, dtype=np.float64)
    if arr.ndim < 3:
        raise ShapeError("expected shape (D, K, *dims)")
    return np.prod(arr, axis=1).sum(axis=0)
