import numpy as np
import pytest

from diffimpute.evaluation import (avg_err, cat_err, downstream_eval,
                                   evaluate_imputation, f1_macro, mean_mode_baseline,
                                   ord_err, rmse_err, timing_bench)
from diffimpute.tabular import (CATEGORICAL, CONTINUOUS, ORDINAL, ColumnSpec,
                                FeatureSchema, MaskedTable)


class TestColumnErrors:
    def test_rmse_identical_is_zero(self):
        m = np.array([True, True])
        assert rmse_err(np.array([1.0, 2.0]), np.array([1.0, 2.0]), m) == 0.0

    def test_rmse_direct_value(self):
        m = np.array([True, True])
        got = rmse_err(np.array([1.0, 2.0]), np.array([1.0, 4.0]), m)
        assert got == pytest.approx(np.sqrt(2.0), abs=1e-12)

    def test_rmse_constant_offset(self):
        rng = np.random.default_rng(0)
        truth = rng.normal(size=20)
        m = np.ones(20, dtype=bool)
        assert rmse_err(truth, truth + 0.7, m) == pytest.approx(0.7, abs=1e-12)

    def test_cat_err_values(self):
        m = np.ones(4, dtype=bool)
        truth = np.array([1, 2, 3, 1], dtype=float)
        assert cat_err(truth, truth, m) == 0.0
        assert cat_err(truth, np.array([1.0, 2.0, 1.0, 2.0]), m) == 0.5
        assert cat_err(truth, truth + 1, m) == 1.0

    def test_ord_err_values(self):
        m = np.ones(1, dtype=bool)
        assert ord_err(np.array([3.0]), np.array([4.0]), m, 5) == pytest.approx(0.2)
        assert ord_err(np.array([3.0]), np.array([3.0]), m, 5) == 0.0
        assert ord_err(np.array([5.0]), np.array([0.0]), m, 5) == pytest.approx(1.0)

    def test_no_masked_cells_raises(self):
        with pytest.raises(ValueError):
            rmse_err(np.array([1.0]), np.array([1.0]), np.array([False]))

    def test_avg_err(self):
        assert avg_err({"a": 0.4}) == 0.4
        assert avg_err({"a": 0.2, "b": 0.4}) == pytest.approx(0.3)
        with pytest.raises(ValueError):
            avg_err({})


@pytest.fixture
def mixed_truth():
    rng = np.random.default_rng(1)
    schema = FeatureSchema((
        ColumnSpec("x", CONTINUOUS),
        ColumnSpec("c", CATEGORICAL, 3),
        ColumnSpec("o", ORDINAL, 4),
    ))
    vals = np.column_stack([
        rng.normal(size=40) * 2 + 1,
        rng.integers(1, 4, size=40).astype(float),
        rng.integers(1, 5, size=40).astype(float),
    ])
    return MaskedTable(vals, np.zeros_like(vals, dtype=bool), schema)


class TestEvaluateImputation:
    def test_truth_vs_truth_is_zero(self, mixed_truth):
        rng = np.random.default_rng(2)
        mask = rng.random(mixed_truth.values.shape) < 0.3
        report = evaluate_imputation(mixed_truth, mixed_truth, mask)
        assert report.avg_err == 0.0

    def test_column_without_masked_cells_excluded(self, mixed_truth):
        mask = np.zeros_like(mixed_truth.mask)
        mask[:5, 0] = True  # only the continuous column is evaluated
        report = evaluate_imputation(mixed_truth, mixed_truth, mask)
        assert list(report.per_column) == ["x"]
        assert report.cat_err_mean is None

    def test_kind_aggregates(self, mixed_truth):
        rng = np.random.default_rng(3)
        mask = np.ones_like(mixed_truth.mask)
        imputed = mixed_truth.copy()
        imputed.values[:, 0] += rng.normal(size=40) * 0.1
        report = evaluate_imputation(mixed_truth, imputed, mask)
        assert report.rmse_mean is not None and report.rmse_mean > 0
        assert report.cat_err_mean == 0.0
        assert report.ord_err_mean == 0.0
        assert 0.0 <= report.avg_err

    def test_json_and_csv_shapes(self, mixed_truth):
        mask = np.ones_like(mixed_truth.mask)
        report = evaluate_imputation(mixed_truth, mixed_truth, mask)
        payload = report.to_json()
        assert '"avg_err"' in payload
        row = report.csv_row()
        assert row["avg_err"] == 0.0


class TestMeanModeBaseline:
    def test_mean_fill(self):
        schema = FeatureSchema((ColumnSpec("x", CONTINUOUS),))
        vals = np.array([[1.0], [2.0], [3.0], [np.nan]])
        table = MaskedTable(vals, np.isnan(vals), schema)
        out = mean_mode_baseline(table)
        assert out.values[3, 0] == pytest.approx(2.0)
        assert not out.mask.any()

    def test_mode_fill_tie_breaks_low(self):
        schema = FeatureSchema((ColumnSpec("c", CATEGORICAL, 3),))
        vals = np.array([[1.0], [1.0], [2.0], [np.nan]])
        table = MaskedTable(vals, np.isnan(vals), schema)
        assert mean_mode_baseline(table).values[3, 0] == 1.0
        vals2 = np.array([[3.0], [2.0], [2.0], [3.0], [np.nan]])
        table2 = MaskedTable(vals2, np.isnan(vals2), schema)
        assert mean_mode_baseline(table2).values[4, 0] == 2.0

    def test_fully_observed_unchanged(self, mixed_truth):
        out = mean_mode_baseline(mixed_truth)
        assert np.array_equal(out.values, mixed_truth.values)

    def test_mean_minimizes_squared_error_among_constants(self):
        # the fill constant minimizes squared error over the cells a constant
        # imputer can see (brute-force over a grid of alternatives)
        rng = np.random.default_rng(4)
        schema = FeatureSchema((ColumnSpec("x", CONTINUOUS),))
        vals = rng.normal(size=(30, 1)) * 3
        mask = rng.random((30, 1)) < 0.4
        mask[0] = False
        masked_vals = vals.copy()
        masked_vals[mask] = np.nan
        table = MaskedTable(masked_vals, mask, schema)
        fill = mean_mode_baseline(table).values[mask[:, 0], 0][0]
        observed = vals[~mask[:, 0], 0]
        base_err = np.mean((observed - fill) ** 2)
        for const in np.linspace(vals.min(), vals.max(), 101):
            assert base_err <= np.mean((observed - const) ** 2) + 1e-12


class TestDownstream:
    def test_separable_classification(self):
        rng = np.random.default_rng(0)
        n = 300
        x = rng.normal(size=(n, 2))
        y = (x[:, 0] + x[:, 1] > 0).astype(float)
        x[:, 0] += 4 * (2 * y - 1)  # widen the margin
        score = downstream_eval(x, y, "classify", seed=0)
        assert score > 0.99

    def test_uninformative_features_near_majority(self):
        rng = np.random.default_rng(1)
        n = 400
        x = rng.normal(size=(n, 3))
        y = (rng.random(n) < 0.7).astype(float)
        score = downstream_eval(x, y, "classify", seed=1)
        # majority-class macro F1 with ~70/30 split
        majority = f1_macro(y[: n // 5], np.ones(n // 5))
        assert abs(score - majority) < 0.25

    def test_exact_linear_regression(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(200, 1))
        y = x[:, 0].copy()
        mae = downstream_eval(x, y, "regress", seed=2, weight_decay=0.0)
        assert mae < 1e-6

    def test_single_class_label_errors(self):
        x = np.zeros((10, 2))
        with pytest.raises(ValueError, match="single class"):
            downstream_eval(x, np.ones(10), "classify")

    def test_bad_task(self):
        with pytest.raises(ValueError):
            downstream_eval(np.zeros((5, 1)), np.zeros(5), "rank")


class TestTiming:
    def test_single_repetition(self):
        calls = []
        secs = timing_bench(lambda: calls.append(1), repetitions=1)
        assert secs >= 0.0 and len(calls) == 1

    def test_median_of_reps(self):
        secs = timing_bench(lambda: None, repetitions=5)
        assert secs >= 0.0

    def test_workload_scales(self):
        import time

        def slow():
            time.sleep(0.02)

        def fast():
            time.sleep(0.002)

        assert timing_bench(slow, 3) > timing_bench(fast, 3)
