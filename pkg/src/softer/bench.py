"""Simulation scenarios, scoring and the benchmark driver.

Datasets follow the simulation design used to compare soft and hard
PARAFAC fits: predictor entries i.i.d. ``N(0, 1)``, no scalar covariates,
``y = <X, B⁰> + ε`` with ``ε ~ N(0, τ²)`` and a 1000-unit holdout set from
the same law.

Seeds are derived by splitting: the truth of scenario ``s`` uses
``(master, s)``, its replicate ``r`` data use ``(master, s, r)`` and the fit
of method ``m`` uses a seed drawn from ``(master, s, r, m)``.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .calibration import default_hyperparameters
from .diagnostics import FitSummary, predict, summarize
from .model import Dataset, SamplerSettings, SofterConfig
from .tensor import ShapeError

__all__ = [
    "Scenario",
    "MethodSpec",
    "BenchSpec",
    "SelectionReport",
    "make_truth",
    "gen_dataset",
    "estimation_metrics",
    "selection_metrics",
    "average_fpr",
    "predictive_mse",
    "run_cell",
    "run_benchmark",
    "write_results",
]

log = logging.getLogger(__name__)

TRUTH_KINDS = ("diagonal", "squares", "lowrank", "symmetric", "file")
RESULT_COLUMNS = ("scenario", "method", "D", "replicate", "metric", "value")


@dataclass
class Scenario:
    name: str
    truth: np.ndarray
    n: int
    tau2: float = 0.5
    holdout: int = 1000
    # symmetric predictors with zero diagonals (network-style data)
    symmetric: bool = False

    def __post_init__(self):
        self.truth = np.asarray(self.truth, dtype=float)
        if self.n < 1 or self.tau2 <= 0 or self.holdout < 0:
            raise ValueError("scenario needs n >= 1, tau2 > 0 and holdout >= 0")

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.truth.shape)


@dataclass
class MethodSpec:
    name: str
    D: int = 3
    hard_mode: bool = False
    symmetry: str = "none"


@dataclass
class BenchSpec:
    """Benchmark grid as read from ``bench.json``."""

    scenarios: list[dict]
    methods: list[MethodSpec]
    master_seed: int = 0
    replicates: int = 1
    sampler: SamplerSettings = field(default_factory=lambda: SamplerSettings(iterations=2000, burn_in=1000))
    zero_tol: float = 0.0
    level: float = 0.95

    @classmethod
    def from_dict(cls, d: dict) -> "BenchSpec":
        d = dict(d)
        methods = [MethodSpec(**m) for m in d.pop("methods")]
        sampler = SamplerSettings(**d.pop("sampler", {}))
        return cls(methods=methods, sampler=sampler, **d)

    def to_dict(self) -> dict:
        return asdict(self)


def _square(dims: Sequence[int], kind: str) -> None:
    if len(dims) != 2 or dims[0] != dims[1]:
        raise ShapeError(f"{kind} truth needs square matrix dims, got {tuple(dims)}")


def make_truth(kind: str, dims: Sequence[int], params: dict | None = None,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """Coefficient tensor for a simulation scenario.

    ``diagonal``: identity pattern.  ``squares``: union of constant
    rectangles, each ``[row_from, row_to, col_from, col_to, value]`` with
    1-based inclusive bounds (a default pair of blocks when omitted).
    ``lowrank``: ``Σ_{d≤rank} u_d ⊗ v_d`` with i.i.d. normal factors, scaled
    to ``max |B⁰| = 1``.  ``symmetric``: the same with ``v_d = u_d`` and a
    zero diagonal.  ``file``: tensor or matrix CSV at ``params["path"]``.
    """
    params = params or {}
    dims = tuple(int(p) for p in dims)
    if kind == "diagonal":
        _square(dims, kind)
        return np.eye(dims[0])
    if kind == "squares":
        if len(dims) != 2:
            raise ShapeError("squares truth needs matrix dims")
        rects = params.get("rects")
        if rects is None:
            a, b = dims[0] // 4, dims[1] // 4
            rects = [[a + 1, 2 * a, b + 1, 2 * b, 1.0], [2 * a + 1, 3 * a + 1, 2 * b + 1, 3 * b + 1, 1.0]]
        B = np.zeros(dims)
        for r0, r1, c0, c1, value in rects:
            if not (1 <= r0 <= r1 <= dims[0] and 1 <= c0 <= c1 <= dims[1]):
                raise ShapeError(f"rectangle {[r0, r1, c0, c1]} outside {dims}")
            B[int(r0) - 1:int(r1), int(c0) - 1:int(c1)] = value
        return B
    if kind in ("lowrank", "symmetric"):
        _square(dims, kind)
        rank = int(params.get("rank", 1))
        if not 1 <= rank <= min(dims):
            raise ShapeError(f"rank {rank} outside 1..{min(dims)}")
        rng = rng if rng is not None else np.random.default_rng(0)
        U = rng.standard_normal((dims[0], rank))
        if kind == "symmetric":
            B = U @ U.T
            np.fill_diagonal(B, 0.0)
        else:
            B = U @ rng.standard_normal((dims[1], rank)).T
        return B / np.max(np.abs(B))
    if kind == "file":
        from .fileio import read_tensors

        path = params["path"]
        try:
            B = read_tensors(path)[0]
        except Exception:
            B = np.loadtxt(path, delimiter=",", ndmin=2)
        if B.shape != dims:
            raise ShapeError(f"truth file has dims {B.shape}, expected {dims}")
        return B
    raise ValueError(f"unknown truth kind {kind!r}; choose from {TRUTH_KINDS}")


def gen_dataset(scenario: Scenario, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Training set of ``scenario.n`` units and an independent holdout set."""
    sd = math.sqrt(scenario.tau2)
    beta = scenario.truth.ravel()

    def draw(n: int) -> Dataset:
        X = rng.standard_normal((n, *scenario.dims))
        if scenario.symmetric:
            X = (X + np.swapaxes(X, 1, 2)) / math.sqrt(2.0)
            X[:, np.arange(scenario.dims[0]), np.arange(scenario.dims[0])] = 0.0
        y = X.reshape(n, beta.size) @ beta + sd * rng.standard_normal(n)
        return Dataset(y, X)

    train = draw(scenario.n)
    return train, draw(scenario.holdout)


def estimation_metrics(truth: np.ndarray, summary: FitSummary, zero_tol: float = 0.0) -> dict[str, float]:
    """Mean absolute bias, rMSE and CI coverage for truly-zero and truly-nonzero entries."""
    truth = np.asarray(truth, dtype=float)
    if truth.shape != summary.posterior_mean_B.shape:
        raise ShapeError("truth and summary dims differ")
    err = summary.posterior_mean_B - truth
    covered = (summary.ci_lower <= truth) & (truth <= summary.ci_upper)
    zero = np.abs(truth) <= zero_tol
    out = {}
    for label, group in (("zero", zero), ("nonzero", ~zero)):
        if group.any():
            out[f"bias_{label}"] = float(np.mean(np.abs(err[group])))
            out[f"rmse_{label}"] = float(np.sqrt(np.mean(err[group] ** 2)))
            out[f"coverage_{label}"] = float(np.mean(covered[group]))
        else:
            out[f"bias_{label}"] = out[f"rmse_{label}"] = out[f"coverage_{label}"] = math.nan
    return out


@dataclass(frozen=True)
class SelectionReport:
    """Selection accuracy.  ``fpr`` is the share of selected entries that are
    truly zero and ``fnr`` the share of unselected entries that are truly
    nonzero; either is NaN when its denominator is empty."""

    sensitivity: float
    specificity: float
    fpr: float
    fnr: float
    tp: int
    fp: int
    tn: int
    fn: int


def _ratio(num: int, den: int) -> float:
    return num / den if den else math.nan


def selection_metrics(truth: np.ndarray, selected: np.ndarray, zero_tol: float = 0.0) -> SelectionReport:
    truth = np.asarray(truth, dtype=float)
    selected = np.asarray(selected, dtype=bool)
    if truth.shape != selected.shape:
        raise ShapeError("truth and selection dims differ")
    important = np.abs(truth) > zero_tol
    tp = int(np.sum(selected & important))
    fp = int(np.sum(selected & ~important))
    tn = int(np.sum(~selected & ~important))
    fn = int(np.sum(~selected & important))
    return SelectionReport(_ratio(tp, tp + fn), _ratio(tn, tn + fp), _ratio(fp, fp + tp),
                           _ratio(fn, fn + tn), tp, fp, tn, fn)


def average_fpr(reports: Sequence[SelectionReport]) -> float:
    """Mean FPR over replicates that selected at least one entry."""
    vals = [r.fpr for r in reports if not math.isnan(r.fpr)]
    return float(np.mean(vals)) if vals else math.nan


def predictive_mse(samples, holdout: Dataset) -> float:
    return float(np.mean((holdout.y - predict(samples, holdout)) ** 2))


def _scenario_from_dict(d: dict, master_seed: int, index: int) -> Scenario:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([master_seed, index])))
    dims = tuple(d["dims"])
    truth = make_truth(d["truth"], dims, d.get("params"), rng)
    return Scenario(d["name"], truth, int(d["n"]), float(d.get("tau2", 0.5)), int(d.get("holdout", 1000)),
                    bool(d.get("symmetric", False)))


def method_seed(master_seed: int, s: int, r: int, m: int) -> int:
    return int(np.random.SeedSequence([master_seed, s, r, m]).generate_state(1)[0])


def run_cell(scenario: Scenario, method: MethodSpec, data: tuple[Dataset, Dataset],
             sampler: SamplerSettings, seed: int, zero_tol: float = 0.0, level: float = 0.95,
             workers: int | None = 1) -> tuple[dict[str, float], float]:
    """Fit one method to one replicate; return its metrics and wall-clock seconds."""
    from dataclasses import replace

    from .sampler import fit

    train, holdout = data
    K = len(scenario.dims)
    config = SofterConfig(
        dims=scenario.dims, hyper=default_hyperparameters(K, method.D), symmetry=method.symmetry,
        hard_mode=method.hard_mode, sampler=replace(sampler, seed=seed),
    )
    start = time.perf_counter()
    chains = fit(config, train, workers=workers)
    elapsed = time.perf_counter() - start
    summary = summarize(chains, level=level)
    metrics = estimation_metrics(scenario.truth, summary, zero_tol)
    sel = selection_metrics(scenario.truth, summary.selected, zero_tol)
    metrics.update(sensitivity=sel.sensitivity, specificity=sel.specificity, fpr=sel.fpr, fnr=sel.fnr)
    if holdout.n:
        metrics["pred_mse"] = predictive_mse(chains, holdout)
    if summary.psrf:
        metrics["psrf_max"] = max(summary.psrf.values())
    return metrics, elapsed


def _cell_job(args):
    s, r, m, spec_dict = args
    spec = BenchSpec.from_dict(spec_dict)
    scen = _scenario_from_dict(spec.scenarios[s], spec.master_seed, s)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.master_seed, s, r])))
    data = gen_dataset(scen, rng)
    method = spec.methods[m]
    try:
        metrics, elapsed = run_cell(scen, method, data, spec.sampler,
                                    method_seed(spec.master_seed, s, r, m), spec.zero_tol, spec.level)
    except Exception as exc:  # a failed replicate is recorded, not fatal
        log.warning("scenario %s method %s replicate %d failed: %s", scen.name, method.name, r, exc)
        metrics, elapsed = {"failed": 1.0}, math.nan
    return s, r, m, metrics, elapsed


def run_benchmark(spec: BenchSpec, workers: int | None = None) -> tuple[list[dict], list[dict]]:
    """Run every scenario × method × replicate cell.

    Returns ``(results, timings)``.  ``results`` holds the per-replicate
    metric rows followed by ``replicate = "mean"`` aggregate rows; it is
    fully determined by the spec.  Wall-clock times go to ``timings``.
    """
    from .sampler import pool_width

    spec_dict = spec.to_dict()
    jobs = [(s, r, m, spec_dict) for s in range(len(spec.scenarios))
            for r in range(spec.replicates) for m in range(len(spec.methods))]
    width = min(workers or pool_width(), len(jobs))
    if width <= 1:
        outputs = [_cell_job(j) for j in jobs]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=width) as ex:
            outputs = list(ex.map(_cell_job, jobs))

    rows, timings = [], []
    grouped: dict[tuple[int, int], dict[str, list[float]]] = {}
    for s, r, m, metrics, elapsed in outputs:
        name = spec.scenarios[s]["name"]
        method = spec.methods[m]
        for metric in sorted(metrics):
            rows.append({"scenario": name, "method": method.name, "D": method.D, "replicate": r,
                         "metric": metric, "value": metrics[metric]})
            grouped.setdefault((s, m), {}).setdefault(metric, []).append(metrics[metric])
        timings.append({"scenario": name, "method": method.name, "D": method.D, "replicate": r,
                        "seconds": elapsed})
    for (s, m), table in sorted(grouped.items()):
        method = spec.methods[m]
        for metric in sorted(table):
            vals = np.array(table[metric], dtype=float)
            # FPR averages only over replicates that selected something
            agg = float(np.nanmean(vals)) if np.any(~np.isnan(vals)) else math.nan
            rows.append({"scenario": spec.scenarios[s]["name"], "method": method.name, "D": method.D,
                         "replicate": "mean", "metric": metric, "value": agg})
    return rows, timings


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_results(rows: list[dict], path, columns: Sequence[str] = RESULT_COLUMNS) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])
