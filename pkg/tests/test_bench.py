import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softer.bench import (
    BenchSpec,
    MethodSpec,
    Scenario,
    SelectionReport,
    average_fpr,
    estimation_metrics,
    gen_dataset,
    make_truth,
    method_seed,
    run_benchmark,
    selection_metrics,
    write_results,
)
from softer.diagnostics import FitSummary
from softer.fileio import write_tensor_csv
from softer.tensor import ShapeError


def point_summary(mean, lo=None, hi=None):
    mean = np.asarray(mean, dtype=float)
    lo = mean if lo is None else np.asarray(lo, dtype=float)
    hi = mean if hi is None else np.asarray(hi, dtype=float)
    return FitSummary(mean, lo, hi, (lo > 0) | (hi < 0), 0.95, (0, 0, 0), np.zeros((0, 3)), (1, 1, 1), 100)


class TestTruths:
    def test_diagonal(self):
        np.testing.assert_array_equal(make_truth("diagonal", (4, 4)), np.eye(4))

    def test_lowrank_one(self, rng):
        B = make_truth("lowrank", (8, 8), {"rank": 1}, rng)
        s = np.linalg.svd(B, compute_uv=False)
        assert s[1] < 1e-10
        assert np.max(np.abs(B)) == 1.0

    def test_lowrank_three(self, rng):
        B = make_truth("lowrank", (20, 20), {"rank": 3}, rng)
        s = np.linalg.svd(B, compute_uv=False)
        assert np.sum(s > 1e-10 * s[0]) == 3

    def test_symmetric_truth(self, rng):
        B = make_truth("symmetric", (6, 6), {"rank": 2}, rng)
        np.testing.assert_array_equal(B, B.T)
        np.testing.assert_array_equal(np.diag(B), 0.0)

    def test_squares(self):
        B = make_truth("squares", (6, 5), {"rects": [[1, 2, 2, 3, 1.0], [5, 6, 5, 5, -2.0]]})
        expected = np.zeros((6, 5))
        expected[0:2, 1:3] = 1.0
        expected[4:6, 4] = -2.0
        np.testing.assert_array_equal(B, expected)
        assert make_truth("squares", (16, 16)).sum() > 0

    def test_file(self, tmp_path):
        M = np.arange(6.0).reshape(2, 3)
        np.savetxt(tmp_path / "truth.csv", M, delimiter=",")
        np.testing.assert_array_equal(make_truth("file", (2, 3), {"path": tmp_path / "truth.csv"}), M)
        write_tensor_csv(tmp_path / "t.csv", M[None])
        np.testing.assert_array_equal(make_truth("file", (2, 3), {"path": tmp_path / "t.csv"}), M)

    def test_errors(self):
        with pytest.raises(ValueError):
            make_truth("spiral", (4, 4))
        with pytest.raises(ShapeError):
            make_truth("lowrank", (4, 4), {"rank": 5})
        with pytest.raises(ShapeError):
            make_truth("diagonal", (4, 5))


class TestGenDataset:
    def test_null_variance(self):
        scen = Scenario("null", np.zeros((2, 2)), n=10**4, holdout=0)
        y = gen_dataset(scen, np.random.default_rng(1))[0].y
        # Var of the sample variance of N(0, s²) is 2 s⁴ / (n - 1)
        assert abs(y.var(ddof=1) - 0.5) < 3 * math.sqrt(2 * 0.25 / (10**4 - 1))

    def test_variance_decomposition(self):
        truth = np.array([[1.0, 0.0], [0.5, -0.5]])
        scen = Scenario("v", truth, n=10**5, holdout=0)
        y = gen_dataset(scen, np.random.default_rng(2))[0].y
        target = 0.5 + np.sum(truth**2)
        assert abs(y.var() - target) < 4 * math.sqrt(2 * target**2 / 10**5)

    def test_deterministic(self):
        scen = Scenario("d", np.eye(3), n=50, holdout=20)
        a = gen_dataset(scen, np.random.default_rng(7))
        b = gen_dataset(scen, np.random.default_rng(7))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.y, y.y)
            np.testing.assert_array_equal(x.predictors, y.predictors)
        assert a[1].n == 20 and a[0].p == 0

    def test_holdout_independent(self):
        scen = Scenario("i", np.eye(3), n=3000, holdout=3000)
        train, hold = gen_dataset(scen, np.random.default_rng(3))
        r = np.corrcoef(train.y, hold.y)[0, 1]
        assert abs(r) < 4 / math.sqrt(3000)

    def test_symmetric_predictors(self):
        scen = Scenario("s", make_truth("symmetric", (4, 4), {"rank": 1}), n=10, holdout=0, symmetric=True)
        X = gen_dataset(scen, np.random.default_rng(0))[0].predictors
        np.testing.assert_array_equal(X, np.swapaxes(X, 1, 2))


class TestMetrics:
    def test_perfect_fit(self):
        truth = np.array([[1.0, 0.0], [0.0, 2.0]])
        m = estimation_metrics(truth, point_summary(truth))
        assert m["bias_zero"] == m["rmse_zero"] == m["bias_nonzero"] == m["rmse_nonzero"] == 0.0
        assert m["coverage_zero"] == m["coverage_nonzero"] == 1.0

    def test_hand_instance(self):
        truth = np.array([[1.0, 0.0], [0.0, 2.0]])
        mean = np.array([[0.8, 0.1], [-0.3, 2.5]])
        lo, hi = mean - 0.25, mean + 0.25
        m = estimation_metrics(truth, point_summary(mean, lo, hi))
        assert m["bias_nonzero"] == pytest.approx((0.2 + 0.5) / 2)
        assert m["rmse_nonzero"] == pytest.approx(math.sqrt((0.04 + 0.25) / 2))
        assert m["bias_zero"] == pytest.approx(0.2)
        assert m["rmse_zero"] == pytest.approx(math.sqrt((0.01 + 0.09) / 2))
        assert m["coverage_nonzero"] == 0.5
        assert m["coverage_zero"] == 0.5

    def test_infinite_interval(self, rng):
        truth = rng.standard_normal((3, 3))
        m = estimation_metrics(truth, point_summary(np.zeros((3, 3)), np.full((3, 3), -np.inf), np.full((3, 3), np.inf)))
        assert m["coverage_nonzero"] == 1.0

    def test_zero_tolerance(self):
        truth = np.array([[0.04, 1.0]])
        assert math.isnan(estimation_metrics(truth, point_summary(truth))["bias_zero"])
        assert estimation_metrics(truth, point_summary(truth), zero_tol=0.05)["bias_zero"] == 0.0

    def test_confusion_example(self):
        truth = np.array([1] * 5 + [0] * 11, dtype=float)
        sel = np.array([1, 1, 1, 0, 0] + [1] + [0] * 10, dtype=bool)
        r = selection_metrics(truth, sel)
        assert (r.tp, r.fp, r.tn, r.fn) == (3, 1, 10, 2)
        assert r.sensitivity == pytest.approx(0.6)
        assert r.specificity == pytest.approx(10 / 11)
        assert r.fpr == pytest.approx(0.25)
        assert r.fnr == pytest.approx(2 / 12)

    def test_all_correct_and_none_selected(self):
        truth = np.array([[1.0, 0.0], [0.0, 0.0]])
        r = selection_metrics(truth, truth != 0)
        assert (r.sensitivity, r.specificity, r.fpr, r.fnr) == (1.0, 1.0, 0.0, 0.0)
        r = selection_metrics(truth, np.zeros((2, 2), bool))
        assert math.isnan(r.fpr) and r.fnr == 0.25

    def test_average_fpr_skips_undefined(self):
        reps = [SelectionReport(1, 1, 0.5, 0, 1, 1, 0, 0), SelectionReport(0, 1, math.nan, 1, 0, 0, 1, 1),
                SelectionReport(1, 1, 0.0, 0, 1, 0, 1, 0)]
        assert average_fpr(reps) == 0.25

    @settings(max_examples=20)
    @given(st.integers(0, 2**31))
    def test_brute_force_oracle(self, seed):
        r = np.random.default_rng(seed)
        truth = r.standard_normal((5, 5)) * (r.random((5, 5)) < 0.4)
        mean = truth + 0.3 * r.standard_normal((5, 5))
        lo, hi = mean - r.exponential(size=(5, 5)), mean + r.exponential(size=(5, 5))
        summary = point_summary(mean, lo, hi)
        m = estimation_metrics(truth, summary)
        rep = selection_metrics(truth, summary.selected)
        tp = fp = tn = fn = 0
        errs = {True: [], False: []}
        cover = {True: [], False: []}
        for i in range(5):
            for j in range(5):
                nz = truth[i, j] != 0
                errs[nz].append(mean[i, j] - truth[i, j])
                cover[nz].append(lo[i, j] <= truth[i, j] <= hi[i, j])
                s = lo[i, j] > 0 or hi[i, j] < 0
                tp += s and nz
                fp += s and not nz
                tn += (not s) and not nz
                fn += (not s) and nz
        assert (rep.tp, rep.fp, rep.tn, rep.fn) == (tp, fp, tn, fn)
        for nz, label in ((True, "nonzero"), (False, "zero")):
            if errs[nz]:
                e = np.array(errs[nz])
                assert m[f"bias_{label}"] == pytest.approx(np.mean(np.abs(e)))
                assert m[f"rmse_{label}"] == pytest.approx(math.sqrt(np.mean(e**2)))
                assert m[f"coverage_{label}"] == pytest.approx(np.mean(cover[nz]))


SMALL_SPEC = {
    "scenarios": [{"name": "diag4", "truth": "diagonal", "dims": [4, 4], "n": 200, "holdout": 100}],
    "methods": [{"name": "softer", "D": 2}, {"name": "hard", "D": 2, "hard_mode": True}],
    "master_seed": 11,
    "replicates": 1,
    "sampler": {"iterations": 120, "burn_in": 60, "chains": 2},
}


class TestBenchmark:
    def test_method_seeds_distinct(self):
        seeds = {method_seed(0, s, r, m) for s in range(3) for r in range(3) for m in range(3)}
        assert len(seeds) == 27

    def test_smoke_and_determinism(self, tmp_path):
        spec = BenchSpec.from_dict(SMALL_SPEC)
        rows, timings = run_benchmark(spec, workers=1)
        assert len(timings) == 2 and all(t["seconds"] > 0 for t in timings)
        cells = {(r["method"], r["replicate"]) for r in rows}
        assert cells == {("softer", 0), ("hard", 0), ("softer", "mean"), ("hard", "mean")}
        metrics = {r["metric"] for r in rows}
        assert {"rmse_nonzero", "coverage_zero", "pred_mse", "fpr", "psrf_max"} <= metrics
        write_results(rows, tmp_path / "a.csv")
        rows2, _ = run_benchmark(BenchSpec.from_dict(SMALL_SPEC), workers=2)
        write_results(rows2, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        with open(tmp_path / "a.csv") as fh:
            header = next(csv.reader(fh))
        assert header == ["scenario", "method", "D", "replicate", "metric", "value"]

    def test_failed_cell_is_recorded(self):
        spec = dict(SMALL_SPEC, methods=[{"name": "bad", "D": 2, "symmetry": "symmetric"}],
                    scenarios=[{"name": "rect", "truth": "squares", "dims": [4, 6], "n": 20, "holdout": 0}])
        rows, timings = run_benchmark(BenchSpec.from_dict(spec), workers=1)
        assert [r["metric"] for r in rows if r["replicate"] == 0] == ["failed"]
        assert math.isnan(timings[0]["seconds"])
