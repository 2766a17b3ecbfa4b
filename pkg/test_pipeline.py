#!/usr/bin/env python3
"""Scaling, tie jitter, simulation scenarios, CSV tables and evaluation."""
import math

import numpy as np
import pytest

from boosting.logic import Ensemble, FitConfig, fit
from pipeline.csv_io import iter_table, read_table, write_table
from pipeline.evaluation import (
    RunningScore, cross_validate, estimate_kl, kl_trajectory, make_folds, predictive_score,
)
from pipeline.preprocess import TINY, PreprocessRecord, jitter_table, jitter_ties, minmax_scale
from pipeline.scenarios import BETA_WEIGHTS, BOXES, BOX_WEIGHTS, get_scenario, scenario, scenario_names
from utils.errors import ConfigError, DataError


def tiny_config(**overrides):
    settings = dict(c0=0.5, gamma=0.1, trees_per_margin=3, trees_copula=6, seed=2)
    settings.update(overrides)
    return FitConfig(**settings)


class TestScaling:
    def test_unit_range_without_margin_is_identity(self):
        data = np.array([[0.0, 1.0], [1.0, 0.0], [0.3, 0.7]])
        scaled, record = minmax_scale(data, margin=0.0)
        np.testing.assert_allclose(scaled, [[TINY, 1.0], [1.0, TINY], [0.3, 0.7]], atol=1e-15)
        assert record.log_jacobian == 0.0

    def test_symmetric_range(self):
        scaled, _ = minmax_scale(np.array([[-1.0], [1.0], [0.0]]), margin=0.0)
        np.testing.assert_allclose(scaled[:, 0], [TINY, 1.0, 0.5])

    def test_margin_widens_box(self):
        scaled, record = minmax_scale(np.array([[0.0], [10.0]]), margin=0.1)
        np.testing.assert_allclose(scaled[:, 0], [0.1 / 1.2, 1.1 / 1.2])
        assert record.log_jacobian == pytest.approx(-math.log(12.0))

    def test_round_trip(self, rng):
        data = rng.normal(size=(200, 3)) * [1.0, 10.0, 0.01]
        scaled, record = minmax_scale(data)
        np.testing.assert_allclose(record.inverse_transform(scaled), data, atol=1e-10)

    def test_new_rows_outside_the_box(self):
        _, record = minmax_scale(np.array([[0.0], [1.0]]), margin=0.0)
        _, inside = record.transform(np.array([[0.5], [1.5], [-0.5]]))
        np.testing.assert_array_equal(inside, [True, False, False])

    def test_constant_column_names_it(self):
        with pytest.raises(DataError, match="height"):
            minmax_scale(np.array([[1.0, 2.0], [3.0, 2.0]]), names=["width", "height"])

    def test_non_finite_rejected(self):
        with pytest.raises(DataError, match="column 2"):
            minmax_scale(np.array([[1.0, np.inf], [2.0, 3.0]]))

    def test_record_round_trip(self):
        record = PreprocessRecord([0.0, -1.0], [2.0, 3.0], 0.05, [True, False])
        assert PreprocessRecord.from_dict(record.to_dict()).to_dict() == record.to_dict()


class TestJitter:
    def test_untied_column_unchanged(self, rng):
        column = np.array([3.0, 1.0, 2.0])
        np.testing.assert_array_equal(jitter_ties(column, rng), column)

    def test_ties_spread_over_half_gaps(self):
        column = np.array([1.0, 2.0, 2.0, 3.0])
        for seed in range(1000):
            out = jitter_ties(column, np.random.default_rng(seed))
            assert out[0] == 1.0 and out[3] == 3.0
            assert np.all((out[1:3] > 1.5) & (out[1:3] < 2.5))
            assert out[1] != out[2]

    def test_edge_ties_stay_inside_the_range(self):
        for seed in range(200):
            low = jitter_ties(np.array([1.0, 1.0, 2.0]), np.random.default_rng(seed))
            assert np.all((low[:2] >= 1.0) & (low[:2] < 1.5))
            assert low[2] == 2.0
            high = jitter_ties(np.array([1.0, 2.0, 2.0]), np.random.default_rng(seed))
            assert np.all((high[1:] >= 1.5) & (high[1:] < 2.0))
            assert high[0] == 1.0

    def test_all_identical_rejected(self, rng):
        with pytest.raises(DataError):
            jitter_ties(np.array([4.0, 4.0, 4.0]), rng)

    def test_table_flags(self, rng):
        data = np.array([[1.0, 0.1], [1.0, 0.2], [2.0, 0.3]])
        out, flags = jitter_table(data, rng, names=["a", "b"])
        assert flags == [True, False]
        assert np.unique(out[:, 0]).size == 3
        np.testing.assert_array_equal(out[:, 1], data[:, 1])

    def test_table_names_constant_column(self, rng):
        with pytest.raises(DataError, match="b"):
            jitter_table(np.array([[1.0, 5.0], [2.0, 5.0]]), rng, names=["a", "b"])


class TestScenarios:
    def test_names(self):
        assert scenario_names() == ["A", "B", "C"]
        assert get_scenario("b").name == "B"
        with pytest.raises(ConfigError):
            get_scenario("D")

    def test_default_sizes(self, rng):
        for name, n in [("A", 1000), ("B", 5000), ("C", 2000)]:
            samples, _ = scenario(name, rng)
            assert samples.shape == (n, 2)
            assert samples.min() > 0.0 and samples.max() <= 1.0

    def test_normal_mean(self, rng):
        samples, _ = scenario("A", rng, 1000)
        tolerance = 4 * 0.125 / math.sqrt(1000)
        np.testing.assert_allclose(samples.mean(axis=0), [0.5, 0.5], atol=tolerance)

    def test_normal_correlation(self, rng):
        samples, _ = scenario("A", rng, 5000)
        assert np.corrcoef(samples.T)[0, 1] == pytest.approx(0.95, abs=0.02)

    def test_box_density(self):
        log_pdf = get_scenario("C").log_density
        assert math.exp(log_pdf([0.3, 0.5])[0]) == pytest.approx((1.0 / 3.0) / (0.35 * 0.55))
        assert np.isneginf(log_pdf([0.95, 0.95])[0])

    def test_overlapping_boxes_add(self):
        # (0.3, 0.47) lies in the first two boxes
        value = math.exp(get_scenario("C").log_density([0.3, 0.47])[0])
        assert value == pytest.approx((1 / 3) / (0.35 * 0.55) + (1 / 3) / (0.6 * 0.05))

    def test_weights(self):
        assert BETA_WEIGHTS.sum() == pytest.approx(1.0)
        assert BOX_WEIGHTS.sum() == pytest.approx(1.0)
        assert len(BOXES) == 3

    @pytest.mark.parametrize("n", [0, -5])
    def test_sample_size_must_be_positive(self, rng, n):
        with pytest.raises(ConfigError):
            scenario("A", rng, n)

    @pytest.mark.parametrize("name", ["B", "C"])
    def test_densities_integrate_to_one(self, name):
        grid = (np.arange(1000) + 0.5) / 1000
        xx, yy = np.meshgrid(grid, grid)
        values = np.exp(get_scenario(name).log_density(np.column_stack([xx.ravel(), yy.ravel()])))
        assert values.mean() == pytest.approx(1.0, abs=5e-3)


def _box_entropy_term():
    """Exact E_C[log p_C], integrating the piecewise-constant density over the cells cut out by the boxes."""
    xs = sorted({0.0, 1.0} | {edge for box in BOXES for edge in box[0]})
    ys = sorted({0.0, 1.0} | {edge for box in BOXES for edge in box[1]})
    log_pdf = get_scenario("C").log_density
    total = 0.0
    for x0, x1 in zip(xs, xs[1:]):
        for y0, y1 in zip(ys, ys[1:]):
            value = log_pdf([(x0 + x1) / 2, (y0 + y1) / 2])[0]
            if np.isfinite(value):
                total += (x1 - x0) * (y1 - y0) * math.exp(value) * value
    return total


class TestEvaluation:
    def test_uniform_model_kl_matches_exact(self):
        estimate = estimate_kl(get_scenario("C"), Ensemble(2), 20000, np.random.default_rng(4))
        exact = _box_entropy_term()
        assert estimate.excluded == 0
        assert abs(estimate.value - exact) < 3 * estimate.standard_error

    def test_mc_count_minimum(self):
        with pytest.raises(ConfigError):
            estimate_kl(get_scenario("A"), Ensemble(2), 999)

    def test_kl_trajectory_end_matches_estimate(self):
        data = get_scenario("C").sample(np.random.default_rng(1), 1000)
        ensemble = fit(data, tiny_config())
        trajectory = kl_trajectory(get_scenario("C"), ensemble, [0, len(ensemble)], 2000, np.random.default_rng(3))
        direct = estimate_kl(get_scenario("C"), ensemble, 2000, np.random.default_rng(3))
        assert trajectory[-1].value == pytest.approx(direct.value)
        assert trajectory[-1].value < trajectory[0].value

    def test_predictive_score_uniform(self, rng):
        score = predictive_score(Ensemble(2), 1.0 - rng.random((100, 2)))
        assert score.mean == 0.0 and score.count == 100 and score.outside == 0

    def test_predictive_score_counts_outside(self):
        score = predictive_score(Ensemble(1), np.array([[0.5], [2.0]]))
        assert score.count == 1 and score.outside == 1

    def test_predictive_score_empty(self):
        with pytest.raises(DataError):
            predictive_score(Ensemble(1), np.empty((0, 1)))

    def test_running_score_matches_batch_moments(self, rng):
        values = 1e9 + 1e-3 * rng.standard_normal(10000)
        running = RunningScore()
        for chunk in np.array_split(values, 7):
            running.update(chunk)
        score = running.score()
        assert score.count == 10000 and score.outside == 0
        assert score.mean == pytest.approx(float(np.mean(values)), rel=1e-12)
        assert score.std == pytest.approx(float(np.std(values, ddof=1)), rel=1e-6)

    def test_running_score_skips_minus_infinity(self):
        running = RunningScore()
        running.update([0.5, -np.inf])
        running.update([-np.inf])
        running.update([1.5])
        score = running.score()
        assert (score.count, score.outside) == (2, 2)
        assert score.mean == pytest.approx(1.0)
        assert score.std == pytest.approx(math.sqrt(0.5))

    def test_running_score_without_rows(self):
        running = RunningScore()
        running.update([-np.inf])
        assert running.score().count == 0

    def test_matched_test_set_scores_higher(self):
        train = get_scenario("A").sample(np.random.default_rng(1), 1000)
        ensemble = fit(train, tiny_config(trees_copula=30))
        same = predictive_score(ensemble, get_scenario("A").sample(np.random.default_rng(2), 1000))
        other = predictive_score(ensemble, get_scenario("C").sample(np.random.default_rng(2), 1000))
        assert same.mean > other.mean


class TestCrossValidation:
    def test_folds_partition_rows(self, rng):
        folds = make_folds(23, 5, rng)
        assert sorted(np.concatenate(folds).tolist()) == list(range(23))
        assert all(len(f) > 0 for f in folds)

    @pytest.mark.parametrize("n,folds,error", [(10, 1, ConfigError), (3, 5, DataError)])
    def test_fold_errors(self, rng, n, folds, error):
        with pytest.raises(error):
            make_folds(n, folds, rng)

    def test_single_grid_point(self):
        data = get_scenario("C").sample(np.random.default_rng(0), 300)
        result = cross_validate(data, [0.2], [0.3], 3, tiny_config())
        assert (result.c0, result.gamma) == (0.2, 0.3)
        assert len(result.best().fold_scores) == 3

    def test_reproducible_across_workers(self):
        data = get_scenario("C").sample(np.random.default_rng(0), 300)
        first = cross_validate(data, [0.1, 0.5], [0.0, 0.5], 3, tiny_config(), workers=1)
        second = cross_validate(data, [0.1, 0.5], [0.0, 0.5], 3, tiny_config(), workers=4)
        assert [row.fold_scores for row in first.table] == [row.fold_scores for row in second.table]
        assert (first.c0, first.gamma) == (second.c0, second.gamma)

    def test_ties_prefer_smaller_values(self):
        # with no trees every pair scores 0
        data = get_scenario("C").sample(np.random.default_rng(0), 100)
        config = tiny_config(trees_per_margin=0, trees_copula=0)
        result = cross_validate(data, [0.9, 0.3], [0.5, 0.2], 2, config)
        assert (result.c0, result.gamma) == (0.3, 0.2)

    def test_empty_grid(self):
        with pytest.raises(ConfigError):
            cross_validate(np.full((10, 1), 0.5), [], [0.1], 2, tiny_config())


class TestCsv:
    def test_header_detected(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("a,b\n1,2\n3.5,-4e-1\n")
        data, names = read_table(path)
        assert names == ["a", "b"]
        np.testing.assert_array_equal(data, [[1.0, 2.0], [3.5, -0.4]])

    def test_no_header(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("1,2\n3,4\n")
        data, names = read_table(path)
        assert names is None and data.shape == (2, 2)

    def test_non_numeric_cell_names_column(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("a,b\n1,2\n3,x\n")
        with pytest.raises(DataError, match="b has a non-numeric cell 'x' at row 3"):
            read_table(path)

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("1,2\n3\n")
        with pytest.raises(DataError):
            read_table(path)

    def test_nan_rejected(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("a\n1\nnan\n")
        with pytest.raises(DataError, match="non-finite"):
            read_table(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_table(tmp_path / "missing.csv")

    def test_header_only(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("a,b\n")
        with pytest.raises(DataError):
            read_table(path)

    def test_chunks(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("x\n" + "".join(f"{i}\n" for i in range(25)))
        sizes = [chunk.shape[0] for _, chunk in iter_table(path, chunk_rows=10)]
        assert sizes == [10, 10, 5]

    def test_floats_round_trip(self, tmp_path):
        path = tmp_path / "out.csv"
        values = np.array([[0.1, 1.0 / 3.0], [TINY, 1e300]])
        write_table(path, ["x1", "x2"], values)
        data, names = read_table(path)
        assert names == ["x1", "x2"]
        np.testing.assert_array_equal(data, values)

    def test_long_row_rejected(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("1,2\n3,4,5\n")
        with pytest.raises(DataError):
            read_table(path)

    def test_empty_cell_is_non_numeric(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("a,b\n1,2\n,4\n")
        with pytest.raises(DataError, match="a has a non-numeric cell '' at row 3"):
            read_table(path)

    def test_spaces_around_cells(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("a, b\n1, 2 \n 3,4\n")
        data, names = read_table(path)
        assert names == ["a", "b"]
        np.testing.assert_array_equal(data, [[1.0, 2.0], [3.0, 4.0]])

    def test_invalid_utf8_names_line(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_bytes(b"x1,x2\n0.1,0.2\n\xff\xfe,0.3\n")
        with pytest.raises(DataError, match="line 3"):
            read_table(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("")
        with pytest.raises(DataError):
            read_table(path)
