# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.


"""Pooling operator unit tests."""

import logging
from unittest import TestCase

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from unit.helpers import (
    HISTOGRAM_BINS,
    HISTOGRAM_COLUMN,
    HISTOGRAM_RANGE,
    RANSAC_COLUMN,
    RANSAC_EPSILON,
    finite_difference,
    histogram_oracle,
    ransac_oracle,
)

from errors import ConfigError, NonFiniteInputError, ShapeMismatchError
from literals import POOL_OPERATORS
from pooling import (
    PoolConfig,
    create_pooling,
    histogram_counts,
    histogram_pool_1d,
    hypothesis_rows,
    pool_backward,
    pool_batch,
    pool_forward,
    pool_timing_bench,
    ransac_pool_1d,
)

logger = logging.getLogger(__name__)


def _loss(config, upstream):
    """Scalar upstream . pooled output as a function of the feature map."""

    def value(x):
        return float(np.dot(upstream, pool_forward(x, config).output))

    return value


def _check_gradient(test, x, config, upstream):
    """Compare the backward pass with central differences."""
    result = pool_forward(x, config)
    grad = pool_backward(x, config, result.selection, upstream)
    numeric = finite_difference(_loss(config, upstream), x)
    test.assertEqual(grad.shape, x.shape)
    assert_allclose(grad, numeric, atol=1e-6)


def _binned_map(rng):
    """12 x 3 map whose columns hold 5, 4 and 3 points in three bins of
    ten over [0, 1], every point 0.03 or more from a bin edge."""
    columns = []
    for _ in range(3):
        bins = np.array([2] * 5 + [5] * 4 + [8] * 3)
        values = (bins + 0.5) * 0.1 + rng.uniform(-0.02, 0.02, len(bins))
        columns.append(rng.permutation(values))
    return np.column_stack(columns)


def _clustered_map(shifts):
    """Columns with a tight cluster of three and three far points."""
    base = np.array([5.0, 0.03, 7.0, 0.0, 9.0, 0.06])
    return np.column_stack([base + s for s in shifts])


class TestPoolConfig(TestCase):
    """Validation and serialization of PoolConfig."""

    def test_defaults(self):
        """Defaults match the documented configuration."""
        config = PoolConfig()
        self.assertEqual(config.operator, "histogram")
        self.assertEqual(config.bins, 70)
        self.assertEqual(config.value_range, (-10.0, 10.0))
        self.assertAlmostEqual(config.half_width, 20 / 140)
        self.assertEqual(config.grad_mode, "inlier_mean")

    def test_invalid_fields(self):
        """Every invariant violation names its field."""
        cases = {
            "operator": {"operator": "sum"},
            "bins": {"bins": 1},
            "range": {"value_range": (1.0, 1.0)},
            "epsilon": {"epsilon": 0.0},
            "hypothesis_fraction": {"hypothesis_fraction": 0.0},
            "tau": {"tau": -1.0},
            "max_iters": {"max_iters": 0},
            "grad_mode": {"grad_mode": "all"},
        }
        for field, kwargs in cases.items():
            with self.assertRaises(ConfigError) as ctx:
                PoolConfig(**kwargs)
            self.assertEqual(ctx.exception.field, field)

    def test_from_dict(self):
        """Config-file keys are hyphenated and unknown keys are rejected."""
        config = PoolConfig.from_dict(
            {"operator": "ransac", "range": [-1, 1], "hypothesis-fraction": 1}
        )
        self.assertEqual(config.value_range, (-1.0, 1.0))
        self.assertEqual(config.hypothesis_fraction, 1)
        self.assertEqual(PoolConfig.from_dict(config.to_dict()), config)
        with self.assertRaises(ConfigError):
            PoolConfig.from_dict({"window": 3})

    def test_create_pooling(self):
        """Every operator name maps to a pooling instance."""
        for operator in POOL_OPERATORS:
            pooling = create_pooling(PoolConfig(operator=operator))
            self.assertEqual(pooling.config.operator, operator)


class TestHistogramPooling(TestCase):
    """Histogram-mode pooling."""

    def test_mode_bin_example(self):
        """Three of five points share the mode bin."""
        value, rows = histogram_pool_1d(
            HISTOGRAM_COLUMN, HISTOGRAM_BINS, HISTOGRAM_RANGE
        )
        self.assertAlmostEqual(value, 0.11, places=12)
        assert_array_equal(rows, [0, 1, 2])

    def test_counts(self):
        """Out-of-range values clamp into the edge bins."""
        counts = histogram_counts(
            HISTOGRAM_COLUMN, HISTOGRAM_BINS, HISTOGRAM_RANGE
        )
        self.assertEqual(counts.sum(), len(HISTOGRAM_COLUMN))
        self.assertEqual(counts[0], 1)
        self.assertEqual(counts[1], 3)
        self.assertEqual(counts[9], 1)

    def test_bin_center_and_winner(self):
        """bin_center returns the mode-bin center; the winner is nearest."""
        config = PoolConfig(
            operator="histogram",
            bins=HISTOGRAM_BINS,
            value_range=HISTOGRAM_RANGE,
            histogram_value="bin_center",
        )
        result = pool_forward(np.reshape(HISTOGRAM_COLUMN, (-1, 1)), config)
        self.assertAlmostEqual(result.output[0], 0.15, places=12)
        self.assertEqual(result.selection.winner[0], 1)

    def test_matches_oracle(self):
        """Mode bin, members and value agree with a bincount reference."""
        rng = np.random.default_rng(7)
        x = rng.normal(0.0, 4.0, size=(64, 1000))
        x[rng.random(x.shape) < 0.05] *= 10
        config = PoolConfig(operator="histogram")
        result = pool_forward(x, config)
        for d in range(x.shape[1]):
            _, rows, mean = histogram_oracle(x[:, d], 70, (-10.0, 10.0))
            assert_array_equal(
                np.flatnonzero(result.selection.inliers[:, d]), rows
            )
            assert_allclose(result.output[d], mean, rtol=1e-12)

    def test_clamping_is_total(self):
        """Values far outside the range still pool to a member value."""
        column = np.array([[-1e6], [-1e6], [-1e6], [5.0], [5.0]])
        result = pool_forward(column, PoolConfig(operator="histogram"))
        self.assertEqual(result.output[0], -1e6)
        far = pool_forward(np.full((4, 2), 1e9), PoolConfig())
        assert_array_equal(far.output, [1e9, 1e9])

    def test_gradient(self):
        """Member-mean value pairs with inlier-mean routing."""
        x = _binned_map(np.random.default_rng(3))
        config = PoolConfig(
            operator="histogram", bins=10, value_range=(0.0, 1.0)
        )
        _check_gradient(self, x, config, np.array([1.0, -2.0, 0.5]))


class TestRansacPooling(TestCase):
    """RANSAC pooling."""

    def test_example(self):
        """Tied hypotheses resolve to the smallest value."""
        value, rows = ransac_pool_1d(
            RANSAC_COLUMN, RANSAC_EPSILON, hypothesis_fraction=1.0
        )
        self.assertEqual(value, 0.0)
        assert_array_equal(rows, [0, 1, 2])

    def test_tie_goes_to_smallest_value(self):
        """Equal counts pick the smallest hypothesis whatever the order."""
        value, rows = ransac_pool_1d(
            [1.0, 0.1, 0.05, 0.0], 0.1, hypothesis_fraction=1.0
        )
        self.assertEqual(value, 0.0)
        assert_array_equal(rows, [1, 2, 3])

    def test_hypothesis_rows(self):
        """A fraction of one uses every row; others draw sorted subsets."""
        assert_array_equal(hypothesis_rows(6, 1.0, 0), np.arange(6))
        rows = hypothesis_rows(10, 0.5, 4)
        self.assertEqual(len(rows), 5)
        self.assertEqual(len(set(rows)), 5)
        assert_array_equal(rows, np.sort(rows))
        assert_array_equal(rows, hypothesis_rows(10, 0.5, 4))
        self.assertEqual(len(hypothesis_rows(3, 0.01, 0)), 1)

    def test_matches_oracle(self):
        """Winners agree with an exhaustive count over the hypotheses."""
        rng = np.random.default_rng(11)
        x = np.round(rng.normal(0.0, 0.5, size=(40, 1000)), 2)
        config = PoolConfig(
            operator="ransac", epsilon=0.143, hypothesis_fraction=0.5, seed=3
        )
        result = pool_forward(x, config)
        hypotheses = hypothesis_rows(40, 0.5, 3)
        for d in range(x.shape[1]):
            winner, count = ransac_oracle(x[:, d], 0.143, hypotheses)
            self.assertEqual(result.selection.winner[d], winner)
            self.assertEqual(result.selection.inliers[:, d].sum(), count)
            self.assertEqual(result.output[d], x[winner, d])

    def test_hypothesis_gradient(self):
        """The winning hypothesis pairs with winner-only routing."""
        x = _clustered_map([0.0, 1.0, -2.5])
        config = PoolConfig(
            operator="ransac",
            epsilon=0.1,
            hypothesis_fraction=1.0,
            grad_mode="winner_only",
        )
        result = pool_forward(x, config)
        assert_array_equal(result.selection.winner, [3, 3, 3])
        _check_gradient(self, x, config, np.array([1.0, 2.0, -1.0]))

    def test_inlier_mean_gradient(self):
        """The inlier mean pairs with inlier-mean routing."""
        x = _clustered_map([0.0, 1.0, -2.5])
        config = PoolConfig(
            operator="ransac",
            epsilon=0.1,
            hypothesis_fraction=1.0,
            ransac_value="inlier_mean",
        )
        result = pool_forward(x, config)
        assert_allclose(result.output, [0.03, 1.03, -2.47])
        _check_gradient(self, x, config, np.array([1.0, 2.0, -1.0]))


class TestClassicPooling(TestCase):
    """Max, mean and median pooling."""

    def setUp(self):
        """Draw a feature map with distinct values."""
        self.x = np.random.default_rng(5).normal(size=(7, 4))
        self.upstream = np.array([1.0, -1.0, 0.5, 2.0])

    def test_values(self):
        """Outputs match the NumPy reductions."""
        for operator, reduce in (
            ("max", np.max),
            ("mean", np.mean),
            ("median", np.median),
        ):
            output = pool_forward(self.x, PoolConfig(operator=operator)).output
            assert_allclose(output, reduce(self.x, axis=0), rtol=1e-12)

    def test_gradients(self):
        """Backward passes match central differences."""
        for operator in ("max", "mean", "median"):
            for grad_mode in ("winner_only", "inlier_mean"):
                config = PoolConfig(operator=operator, grad_mode=grad_mode)
                _check_gradient(self, self.x, config, self.upstream)

    def test_even_median_splits(self):
        """An even count splits the gradient over the two middle rows."""
        x = np.array([[4.0], [1.0], [3.0], [2.0]])
        config = PoolConfig(operator="median")
        result = pool_forward(x, config)
        self.assertEqual(result.output[0], 2.5)
        grad = pool_backward(x, config, result.selection, [1.0])
        assert_array_equal(grad[:, 0], [0.0, 0.0, 0.5, 0.5])


class TestMEstimatorPooling(TestCase):
    """M-estimator pooling."""

    def test_truncated_quadratic_gradient(self):
        """The estimate is the mean of the points within tau."""
        rng = np.random.default_rng(2)
        cluster = rng.uniform(-0.04, 0.04, size=(6, 2))
        x = np.vstack([cluster, [[3.0, 3.0], [-4.0, -4.0], [6.0, 6.0]]])
        config = PoolConfig(operator="m_estimator", tol=1e-12, max_iters=100)
        result = pool_forward(x, config)
        assert_allclose(result.output, cluster.mean(axis=0), atol=1e-12)
        self.assertTrue(result.selection.converged.all())
        _check_gradient(self, x, config, np.array([1.0, -3.0]))

    def test_unconverged_columns_warn(self):
        """Backward through unconverged IRLS columns logs a warning."""
        x = np.array([[0.0, 0.0], [0.1, 0.0], [0.9, 0.0], [1.6, 0.0]])
        config = PoolConfig(
            operator="m_estimator", rho="welsch", tau=1.0, max_iters=1
        )
        result = pool_forward(x, config)
        assert_array_equal(result.selection.converged, [False, True])
        with self.assertLogs("pooling", level="WARNING") as logs:
            grad = pool_backward(x, config, result.selection, [1.0, 1.0])
        self.assertIn("1 unconverged", "".join(logs.output))
        self.assertEqual(grad.shape, x.shape)


class TestPoolingProperties(TestCase):
    """Properties shared by every operator."""

    def test_backward_mass(self):
        """Every gradient column sums to its upstream value."""
        x = np.random.default_rng(9).normal(size=(30, 6))
        upstream = np.arange(1.0, 7.0)
        for operator in POOL_OPERATORS:
            for grad_mode in ("winner_only", "inlier_mean"):
                config = PoolConfig(
                    operator=operator, grad_mode=grad_mode, tau=0.5
                )
                result = pool_forward(x, config)
                grad = pool_backward(x, config, result.selection, upstream)
                assert_allclose(grad.sum(axis=0), upstream, rtol=1e-12)

    def test_permutation_invariance(self):
        """Row order does not change the pooled feature."""
        rng = np.random.default_rng(4)
        x = rng.normal(size=(50, 20))
        perm = rng.permutation(50)
        for operator in POOL_OPERATORS:
            config = PoolConfig(operator=operator, hypothesis_fraction=1.0)
            a = pool_forward(x, config).output
            b = pool_forward(x[perm], config).output
            if operator in ("max", "median", "ransac"):
                assert_array_equal(a, b)
            else:
                assert_allclose(a, b, rtol=1e-9, atol=1e-12)

    def test_constant_columns(self):
        """A constant column pools to its value exactly."""
        x = np.full((9, 3), 0.3)
        for operator in POOL_OPERATORS:
            output = pool_forward(x, PoolConfig(operator=operator)).output
            assert_array_equal(output, [0.3, 0.3, 0.3])

    def test_outlier_injection(self):
        """Robust operators stay on the cluster when outliers are added."""
        rng = np.random.default_rng(6)
        cluster = rng.normal(1.0, 0.03, size=(100, 1))
        outliers = rng.uniform(-10.0, 10.0, size=(50, 1))
        x = np.vstack([cluster, outliers])
        for operator in ("histogram", "ransac", "m_estimator"):
            output = pool_forward(x, PoolConfig(operator=operator)).output
            self.assertLess(abs(output[0] - 1.0), 0.1, operator)

    def test_marginality(self):
        """Changing one column changes only that output entry."""
        rng = np.random.default_rng(12)
        x = rng.uniform(-3.0, 3.0, size=(40, 6))
        moved = x.copy()
        moved[:, 2] = rng.uniform(-3.0, 3.0, size=40)
        others = [0, 1, 3, 4, 5]
        for operator in POOL_OPERATORS:
            config = PoolConfig(operator=operator, tau=0.5)
            a = pool_forward(x, config).output
            b = pool_forward(moved, config).output
            if operator == "m_estimator":
                assert_allclose(a[others], b[others], rtol=0, atol=1e-12)
            else:
                assert_array_equal(a[others], b[others])
            self.assertNotEqual(a[2], b[2], operator)

    def test_outlier_stability_by_count(self):
        """Uniform outliers up to N never move the histogram mode bin."""
        rng = np.random.default_rng(13)
        n = 100
        for _ in range(20):
            column = np.concatenate(
                [
                    rng.uniform(0.9, 1.1, size=60),
                    rng.uniform(-10.0, 10.0, size=n - 60),
                ]
            )
            mode = int(np.argmax(histogram_counts(column)))
            self.assertEqual(mode, 38)
            for count in range(0, n + 1, 10):
                noisy = np.concatenate(
                    [column, rng.uniform(-10.0, 10.0, size=count)]
                )
                counts = histogram_counts(noisy)
                self.assertGreater(counts[mode], np.delete(counts, mode).max())
                _, rows = histogram_pool_1d(noisy)
                self.assertEqual(len(rows), counts[mode])

    def test_winner_only_support(self):
        """Winner-only routing touches exactly the winner of each column."""
        rng = np.random.default_rng(14)
        x = rng.uniform(-10.0, 10.0, size=(30, 5))
        x[:12] = rng.normal(1.0, 0.05, size=(12, 5))
        upstream = np.arange(1.0, 6.0)
        cols = np.arange(5)
        for operator in ("max", "histogram", "ransac"):
            config = PoolConfig(operator=operator, grad_mode="winner_only")
            selection = pool_forward(x, config).selection
            grad = pool_backward(x, config, selection, upstream)
            assert_array_equal(np.count_nonzero(grad, axis=0), np.ones(5))
            assert_array_equal(grad[selection.winner, cols], upstream)

    def test_inlier_mean_support(self):
        """Inlier-mean routing touches exactly the recorded inliers."""
        rng = np.random.default_rng(15)
        x = rng.uniform(-10.0, 10.0, size=(30, 5))
        x[:12] = rng.normal(1.0, 0.05, size=(12, 5))
        upstream = np.arange(1.0, 6.0)
        for operator in ("histogram", "ransac"):
            config = PoolConfig(operator=operator, grad_mode="inlier_mean")
            selection = pool_forward(x, config).selection
            grad = pool_backward(x, config, selection, upstream)
            assert_array_equal(grad != 0, selection.inliers)

    def test_invalid_input(self):
        """Bad feature maps raise structured errors."""
        config = PoolConfig(operator="max")
        with self.assertRaises(ShapeMismatchError):
            pool_forward(np.zeros((0, 3)), config)
        with self.assertRaises(ShapeMismatchError):
            pool_forward(np.zeros(3), config)
        with self.assertRaises(NonFiniteInputError):
            pool_forward(np.array([[np.nan, 1.0]]), config)

    def test_backward_checks(self):
        """Mismatched selections and upstream lengths are rejected."""
        x = np.random.default_rng(1).normal(size=(5, 3))
        config = PoolConfig(operator="max")
        selection = pool_forward(x, config).selection
        with self.assertRaises(ShapeMismatchError):
            pool_backward(x, config, selection, [1.0, 2.0])
        with self.assertRaises(ShapeMismatchError):
            pool_backward(x[:4], config, selection, [1.0, 2.0, 3.0])
        with self.assertRaises(ShapeMismatchError):
            pool_backward(
                x, PoolConfig(operator="mean"), selection, [1.0, 2.0, 3.0]
            )

    def test_pool_batch(self):
        """Every map of a batch is pooled."""
        maps = np.random.default_rng(8).normal(size=(3, 10, 4))
        results = pool_batch(maps, PoolConfig(operator="median"))
        self.assertEqual(len(results), 3)
        for features, result in zip(maps, results):
            assert_array_equal(result.output, np.median(features, axis=0))


class TestTimingBench(TestCase):
    """Timing harness."""

    def test_statistics(self):
        """At least twenty calls are timed."""
        stats = pool_timing_bench(8, 4, 2, PoolConfig(operator="max"), 5)
        self.assertEqual(stats.repeats, 20)
        self.assertEqual(len(stats.times), 20)
        self.assertGreater(stats.mean, 0.0)
        self.assertLessEqual(min(stats.times), stats.median)

    def test_invalid_sizes(self):
        """Empty shapes are rejected."""
        with self.assertRaises(ValueError):
            pool_timing_bench(0, 4, 1, PoolConfig())
