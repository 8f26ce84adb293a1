"""Posterior summaries, convergence diagnostics, selection and prediction.

Credible intervals are equal-tailed empirical quantiles with linear
interpolation between order statistics (NumPy's default, "type 7").
Summaries pool the retained draws of all chains.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import ChainSamples, Dataset
from .tensor import ShapeError

__all__ = [
    "DiagnosticError",
    "psrf",
    "monitored_entries",
    "monitored_traces",
    "psrf_table",
    "FitSummary",
    "summarize",
    "predict",
]

MIN_DRAWS = 50


class DiagnosticError(ValueError):
    """Not enough chains or draws for the requested diagnostic."""


def psrf(chains: Sequence, split: bool = False) -> float:
    """Potential scale reduction factor of scalar traces.

    ``R̂ = sqrt(((n-1)/n W + B/n) / W)`` with ``W`` the mean within-chain
    variance and ``B / n`` the variance of the chain means.  ``split=True``
    halves every chain first.
    """
    arrs = [np.asarray(c, dtype=float).ravel() for c in chains]
    if any(a.size < 10 for a in arrs):
        raise DiagnosticError("chains are too short for PSRF")
    if split:
        arrs = [half for a in arrs for half in (a[: a.size // 2], a[a.size // 2: 2 * (a.size // 2)])]
    if len(arrs) < 2:
        raise DiagnosticError("PSRF needs at least two chains")
    n = arrs[0].size
    if any(a.size != n for a in arrs):
        raise DiagnosticError("chains must have equal lengths")
    x = np.stack(arrs)
    means = x.mean(axis=1)
    W = float(np.mean(x.var(axis=1, ddof=1)))
    B = n * float(means.var(ddof=1))
    if W == 0.0:
        return 1.0 if B == 0.0 else float("inf")
    return float(np.sqrt(((n - 1) / n * W + B / n) / W))


def monitored_entries(dims: Sequence[int], count: int = 32) -> np.ndarray:
    """Deterministic, evenly spread flat indices of ``B`` entries to monitor."""
    P = int(np.prod(dims))
    return np.unique(np.linspace(0, P - 1, min(count, P)).round().astype(int))


def monitored_traces(chains: Sequence[ChainSamples], count: int = 32) -> dict[str, list[np.ndarray]]:
    """Traces of ``μ``, ``δ``, ``τ²`` and a subsample of ``B`` entries, per chain."""
    dims = chains[0].dims
    out: dict[str, list[np.ndarray]] = {"mu": [c.mu for c in chains], "tau2": [c.tau2 for c in chains]}
    for i in range(chains[0].delta.shape[1]):
        out[f"delta[{i + 1}]"] = [c.delta[:, i] for c in chains]
    for flat in monitored_entries(dims, count):
        idx = ",".join(str(j + 1) for j in np.unravel_index(flat, dims))
        out[f"B[{idx}]"] = [c.B.reshape(c.n_draws, int(np.prod(dims)))[:, flat] for c in chains]
    return out


def psrf_table(chains: Sequence[ChainSamples], split: bool = False, count: int = 32) -> dict[str, float]:
    return {name: psrf(traces, split=split) for name, traces in monitored_traces(chains, count).items()}


@dataclass
class FitSummary:
    posterior_mean_B: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    selected: np.ndarray
    level: float
    mu: tuple[float, float, float]  # mean, lower, upper
    delta: np.ndarray  # (p, 3)
    tau2: tuple[float, float, float]
    n_draws: int
    psrf: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "level": self.level, "n_draws": self.n_draws,
            "dims": list(self.posterior_mean_B.shape),
            "mu": dict(zip(("mean", "lower", "upper"), self.mu)),
            "tau2": dict(zip(("mean", "lower", "upper"), self.tau2)),
            "delta": [dict(zip(("mean", "lower", "upper"), row)) for row in self.delta.tolist()],
            "n_selected": int(self.selected.sum()),
            "selected_entries": [[int(j) + 1 for j in idx] for idx in np.argwhere(self.selected)],
            "psrf": self.psrf,
        }


def _pool(samples) -> list[ChainSamples]:
    chains = [samples] if isinstance(samples, ChainSamples) else list(samples)
    if not chains:
        raise DiagnosticError("no chains given")
    dims = chains[0].dims
    if any(c.dims != dims for c in chains):
        raise ShapeError("chains have differing dims")
    return chains


def _interval(draws: np.ndarray, level: float):
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(draws, [tail, 1.0 - tail], axis=0)
    return draws.mean(axis=0), lo, hi


def summarize(samples, level: float = 0.95, with_psrf: bool = True) -> FitSummary:
    """Pooled posterior means, equal-tailed credible intervals and selection flags.

    An entry is selected when its interval excludes zero.
    """
    if not 0 < level <= 1:
        raise ValueError("level must lie in (0, 1]")
    chains = _pool(samples)
    total = sum(c.n_draws for c in chains)
    if total < MIN_DRAWS:
        raise DiagnosticError(f"{total} draws; at least {MIN_DRAWS} are needed")
    B = np.concatenate([c.B for c in chains])
    mean, lo, hi = _interval(B, level)
    # very skewed draws can put the mean outside an equal-tailed interval
    mean = np.clip(mean, lo, hi)
    mu = _interval(np.concatenate([c.mu for c in chains]), level)
    tau2 = _interval(np.concatenate([c.tau2 for c in chains]), level)
    delta = np.stack(_interval(np.concatenate([c.delta for c in chains]), level), axis=-1)
    table = {}
    if with_psrf and len(chains) >= 2 and chains[0].n_draws >= 10:
        table = psrf_table(chains)
    return FitSummary(
        posterior_mean_B=mean, ci_lower=lo, ci_upper=hi, selected=(lo > 0) | (hi < 0), level=level,
        mu=tuple(float(v) for v in mu), delta=delta.reshape(-1, 3), tau2=tuple(float(v) for v in tau2),
        n_draws=total, psrf=table,
    )


def predict(samples, dataset: Dataset) -> np.ndarray:
    """Posterior predictive mean of each unit's outcome.

    The linear predictor is linear in the draws, so averaging the draws
    first gives the same result as averaging per-draw predictions.
    """
    chains = _pool(samples)
    if dataset.dims != chains[0].dims:
        raise ShapeError(f"predictor dims {dataset.dims} differ from fitted dims {chains[0].dims}")
    mu = np.mean(np.concatenate([c.mu for c in chains]))
    delta = np.concatenate([c.delta for c in chains]).mean(axis=0)
    B = np.concatenate([c.B for c in chains]).mean(axis=0)
    if delta.shape[0] != dataset.p:
        raise ShapeError(f"{dataset.p} covariates given, model has {delta.shape[0]}")
    return mu + dataset.covariates @ delta + dataset.predictors.reshape(dataset.n, B.size) @ B.ravel()
