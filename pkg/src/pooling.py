# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Robust pooling operators.

Every operator reduces an N x D feature map to a length-D global feature,
column by column. Besides the value, the forward pass records which rows
were selected (the winner row and the inlier set of every column); the
backward pass routes the upstream gradient through that selection.
"""

import dataclasses
import logging
import math
import os
import statistics
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Tuple

import numba
import numpy as np

from errors import ConfigError, NonFiniteInputError, ShapeMismatchError
from estimators import RhoFunction, location_jacobian, m_estimate
from literals import (
    BENCH_MIN_REPEATS,
    DEFAULT_BINS,
    DEFAULT_EPSILON,
    DEFAULT_HYPOTHESIS_FRACTION,
    DEFAULT_MAX_ITERS,
    DEFAULT_RANGE,
    DEFAULT_TAU,
    DEFAULT_TOL,
    GRAD_MODES,
    HISTOGRAM_VALUES,
    KERNEL_COLUMN_BLOCK,
    M_GRADS,
    NUMBA_PARALLEL_ENV,
    POOL_OPERATORS,
    RANSAC_VALUES,
    RHO_KINDS,
)

logger = logging.getLogger(__name__)

use_parallel = os.environ.get(NUMBA_PARALLEL_ENV, "1").lower() not in (
    "0",
    "false",
    "no",
)


@dataclass(frozen=True)
class PoolConfig:
    """Operator selection and its tuning parameters.

    Attrs:
        operator: one of max, mean, median, histogram, ransac, m_estimator.
        bins: histogram bin count.
        value_range: histogram interval (lo, hi) split into the bins.
        epsilon: RANSAC inlier threshold.
        hypothesis_fraction: share of rows used as RANSAC hypotheses.
        rho: M-estimator loss kind.
        tau: M-estimator scale.
        max_iters: IRLS iteration cap.
        tol: IRLS convergence tolerance.
        grad_mode: winner_only or inlier_mean gradient routing.
        histogram_value: member_mean or bin_center.
        ransac_value: hypothesis or inlier_mean.
        m_grad: fixed_weight or exact M-estimator gradient.
        seed: hypothesis subsampling seed.
    """

    operator: str = "histogram"
    bins: int = DEFAULT_BINS
    value_range: Tuple[float, float] = DEFAULT_RANGE
    epsilon: float = DEFAULT_EPSILON
    hypothesis_fraction: float = DEFAULT_HYPOTHESIS_FRACTION
    rho: str = "truncated_quadratic"
    tau: float = DEFAULT_TAU
    max_iters: int = DEFAULT_MAX_ITERS
    tol: float = DEFAULT_TOL
    grad_mode: str = "inlier_mean"
    histogram_value: str = "member_mean"
    ransac_value: str = "hypothesis"
    m_grad: str = "fixed_weight"
    seed: int = 0

    def __post_init__(self):
        """Normalize the range and validate."""
        lo, hi = self.value_range
        object.__setattr__(self, "value_range", (float(lo), float(hi)))
        self.validate()

    def validate(self):
        """Check every field invariant.

        Raises:
            ConfigError: naming the first violated field.
        """
        choices = {
            "operator": (self.operator, POOL_OPERATORS),
            "rho": (self.rho, RHO_KINDS),
            "grad_mode": (self.grad_mode, GRAD_MODES),
            "histogram_value": (self.histogram_value, HISTOGRAM_VALUES),
            "ransac_value": (self.ransac_value, RANSAC_VALUES),
            "m_grad": (self.m_grad, M_GRADS),
        }
        for name, (value, allowed) in choices.items():
            if value not in allowed:
                raise ConfigError(name, f"{value!r} not in {allowed}")

        lo, hi = self.value_range
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ConfigError("range", f"need lo < hi, got [{lo}, {hi}]")
        if int(self.bins) != self.bins or self.bins < 2:
            raise ConfigError("bins", f"must be an integer >= 2: {self.bins}")
        if not self.half_width > 0:
            raise ConfigError("bins", "bin half-width underflows to zero")
        if not self.epsilon > 0:
            raise ConfigError("epsilon", f"must be positive: {self.epsilon}")
        if not 0 < self.hypothesis_fraction <= 1:
            raise ConfigError(
                "hypothesis_fraction",
                f"must be in (0, 1]: {self.hypothesis_fraction}",
            )
        if not self.tau > 0:
            raise ConfigError("tau", f"must be positive: {self.tau}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ConfigError("max_iters", f"must be >= 1: {self.max_iters}")
        if not self.tol > 0:
            raise ConfigError("tol", f"must be positive: {self.tol}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError("seed", f"must be unsigned: {self.seed}")

    @property
    def half_width(self):
        """Half of one histogram bin width."""
        lo, hi = self.value_range
        return (hi - lo) / (2 * self.bins)

    @property
    def rho_function(self):
        """RhoFunction described by this config."""
        return RhoFunction(self.rho, self.tau)

    def replace(self, **changes):
        """Return a copy with some fields changed.

        Args:
            changes: field values to override.

        Returns:
            a validated PoolConfig.
        """
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        """Serialize with the hyphenated keys of the config file.

        Returns:
            dictionary of config values.
        """
        data = {}
        for item in dataclasses.fields(self):
            value = getattr(self, item.name)
            key = "range" if item.name == "value_range" else item.name
            data[key.replace("_", "-")] = (
                list(value) if isinstance(value, tuple) else value
            )
        # Operator names keep their underscore.
        data["operator"] = self.operator
        data["rho"] = self.rho
        return data

    @classmethod
    def from_dict(cls, data):
        """Build a config from config-file keys.

        Args:
            data: mapping with hyphenated (or underscored) keys.

        Returns:
            a validated PoolConfig.

        Raises:
            ConfigError: in case of unknown keys or invalid values.
        """
        names = {item.name for item in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in data.items():
            name = key.replace("-", "_")
            if name == "range":
                name = "value_range"
                value = tuple(value)
            if name not in names:
                raise ConfigError(key, "unknown pooling option")
            kwargs[name] = value
        return cls(**kwargs)


@dataclass
class Selection:
    """Per-dimension record of the rows a forward pass selected.

    Attrs:
        operator: operator that produced the selection.
        winner: length-D winner row of every column.
        inliers: N x D mask of inlier rows.
        converged: length-D IRLS convergence flags (m_estimator only).
        estimate: length-D IRLS estimates (m_estimator only).
    """

    operator: str
    winner: np.ndarray
    inliers: np.ndarray
    converged: Optional[np.ndarray] = None
    estimate: Optional[np.ndarray] = None

    @property
    def shape(self):
        """Shape (N, D) of the feature map the selection belongs to."""
        return self.inliers.shape


@dataclass
class PoolResult:
    """Global feature and the selection needed by the backward pass.

    Attrs:
        output: length-D pooled feature.
        selection: Selection made on the way.
    """

    output: np.ndarray
    selection: Selection


@dataclass
class TimingStats:
    """Wall time of repeated pooling calls.

    Attrs:
        repeats: number of timed calls.
        mean: mean seconds per call.
        median: median seconds per call.
        times: seconds of every call.
    """

    repeats: int
    mean: float
    median: float
    times: list


def _histogram_impl(x, lo, scale, width, bins, block):
    """Mode-bin search over every column of x.

    Returns:
        counts, mode bin, member sum, member count, member min, member max,
        winner row and inlier mask, one entry per column.
    """
    n, n_cols = x.shape
    counts = np.zeros((n_cols, bins), dtype=np.int64)
    mode = np.zeros(n_cols, dtype=np.int64)
    sums = np.zeros(n_cols)
    members = np.zeros(n_cols, dtype=np.int64)
    low = np.zeros(n_cols)
    high = np.zeros(n_cols)
    winner = np.zeros(n_cols, dtype=np.int64)
    inliers = np.zeros((n, n_cols), dtype=np.bool_)
    n_blocks = (n_cols + block - 1) // block
    for b in numba.prange(n_blocks):
        d0 = b * block
        d1 = min(n_cols, d0 + block)
        for i in range(n):
            for d in range(d0, d1):
                f = (x[i, d] - lo) * scale
                if f < 0.0:
                    k = 0
                elif f >= bins:
                    k = bins - 1
                else:
                    k = int(f)
                counts[d, k] += 1
        for d in range(d0, d1):
            best = 0
            for k in range(1, bins):
                if counts[d, k] > counts[d, best]:
                    best = k
            mode[d] = best
        nearest = np.full(d1 - d0, np.inf)
        for i in range(n):
            for d in range(d0, d1):
                f = (x[i, d] - lo) * scale
                if f < 0.0:
                    k = 0
                elif f >= bins:
                    k = bins - 1
                else:
                    k = int(f)
                if k != mode[d]:
                    continue
                v = x[i, d]
                inliers[i, d] = True
                if members[d] == 0:
                    low[d] = v
                    high[d] = v
                else:
                    low[d] = min(low[d], v)
                    high[d] = max(high[d], v)
                sums[d] += v
                members[d] += 1
                dist = abs(v - (lo + (mode[d] + 0.5) * width))
                near = nearest[d - d0]
                if dist < near or (dist == near and v < x[winner[d], d]):
                    nearest[d - d0] = dist
                    winner[d] = i
    return counts, mode, sums, members, low, high, winner, inliers


def _ransac_impl(xt, hypotheses, eps):
    """Best hypothesis row and its inlier count for every row of xt.

    xt holds one feature column per row; hypotheses are sorted row indices
    into the original feature map. Equal counts go to the smaller value,
    then to the lower row.
    """
    n_cols, n = xt.shape
    winner = np.zeros(n_cols, dtype=np.int64)
    best_count = np.zeros(n_cols, dtype=np.int64)
    for d in numba.prange(n_cols):
        best = -1
        arg = 0
        for j in range(hypotheses.shape[0]):
            h = xt[d, hypotheses[j]]
            c = 0
            for i in range(n):
                if abs(xt[d, i] - h) <= eps:
                    c += 1
            if c > best or (c == best and h < xt[d, arg]):
                best = c
                arg = hypotheses[j]
        winner[d] = arg
        best_count[d] = best
    return winner, best_count


_KERNELS = {
    False: {
        "histogram": numba.njit(nogil=True)(_histogram_impl),
        "ransac": numba.njit(nogil=True)(_ransac_impl),
    },
    True: {
        "histogram": numba.njit(nogil=True, parallel=True)(_histogram_impl),
        "ransac": numba.njit(nogil=True, parallel=True)(_ransac_impl),
    },
}


def _kernel(name):
    """Pick the compiled kernel for the calling thread.

    Parallel kernels are only launched from the main thread; worker threads
    of the harness pools use the serial build.

    Args:
        name: kernel name.

    Returns:
        compiled kernel.
    """
    parallel = (
        use_parallel and threading.current_thread() is threading.main_thread()
    )
    return _KERNELS[parallel][name]


def _hull_clip(mean, low, high):
    """Keep a mean inside the hull of the values it averages.

    Constant inputs return their value exactly instead of a rounded sum.

    Args:
        mean: computed means.
        low: minimum of the averaged values.
        high: maximum of the averaged values.

    Returns:
        clipped means.
    """
    return np.where(low == high, low, np.clip(mean, low, high))


def check_features(features):
    """Validate and convert a feature map.

    Args:
        features: N x D array-like.

    Returns:
        C-contiguous float64 array.

    Raises:
        ShapeMismatchError: in case the input is not a non-empty matrix.
        NonFiniteInputError: in case of NaN or Inf entries.
    """
    x = np.ascontiguousarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ShapeMismatchError(
            f"feature map must be N x D with N, D >= 1, got {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise NonFiniteInputError("feature map contains NaN or Inf values")
    return x


def hypothesis_rows(n, fraction, seed):
    """Rows used as RANSAC hypotheses.

    Args:
        n: number of rows.
        fraction: share of rows to draw.
        seed: generator seed.

    Returns:
        sorted row indices, all rows when fraction is 1.
    """
    m = min(n, max(1, math.ceil(round(fraction * n, 9))))
    if m == n:
        return np.arange(n, dtype=np.int64)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=m, replace=False)).astype(np.int64)


class PoolingBase(ABC):
    """The base class for all pooling operators."""

    def __init__(self, config):
        """Construct.

        Args:
            config: the PoolConfig of this operator.
        """
        self.config = config

    @abstractmethod
    def _select(self, x):
        """Handle operator-specific reduction.

        Args:
            x: validated N x D feature map.

        Returns:
            (output, Selection) pair.
        """

    def forward(self, features):
        """Pool a feature map.

        Args:
            features: N x D feature map.

        Returns:
            PoolResult.
        """
        x = check_features(features)
        output, selection = self._select(x)
        return PoolResult(output=output, selection=selection)

    def _routing(self, x, selection):
        """Share of the upstream gradient received by every entry.

        Args:
            x: validated N x D feature map.
            selection: Selection from the forward pass.

        Returns:
            N x D routing matrix whose columns sum to one.
        """
        n, n_cols = x.shape
        route = np.zeros((n, n_cols))
        if self.config.grad_mode == "winner_only":
            route[selection.winner, np.arange(n_cols)] = 1.0
            return route
        mask = selection.inliers
        route[mask] = 1.0
        return route / mask.sum(axis=0)

    def backward(self, features, selection, upstream_grad):
        """Route an upstream gradient back to the feature map.

        Args:
            features: the N x D feature map given to forward.
            selection: Selection returned by forward.
            upstream_grad: length-D gradient w.r.t. the pooled feature.

        Returns:
            N x D gradient matrix.

        Raises:
            ShapeMismatchError: in case shapes do not line up.
        """
        x = check_features(features)
        upstream = np.asarray(upstream_grad, dtype=np.float64).reshape(-1)
        if selection.shape != x.shape:
            raise ShapeMismatchError(
                f"selection shape {selection.shape} does not match "
                f"features shape {x.shape}"
            )
        if selection.operator != self.config.operator:
            raise ShapeMismatchError(
                f"selection made by {selection.operator!r}, "
                f"not {self.config.operator!r}"
            )
        if upstream.shape[0] != x.shape[1]:
            raise ShapeMismatchError(
                f"upstream gradient has {upstream.shape[0]} entries, "
                f"expected {x.shape[1]}"
            )
        return self._routing(x, selection) * upstream


class MaxPooling(PoolingBase):
    """Column maximum; the inlier set is the argmax row."""

    def _select(self, x):
        """Handle max reduction.

        Args:
            x: validated N x D feature map.

        Returns:
            (output, Selection) pair.
        """
        cols = np.arange(x.shape[1])
        winner = np.argmax(x, axis=0)
        inliers = np.zeros(x.shape, dtype=bool)
        inliers[winner, cols] = True
        return x[winner, cols], Selection("max", winner, inliers)


class MeanPooling(PoolingBase):
    """Column mean; every row is an inlier."""

    def _select(self, x):
        """Handle mean reduction.

        Args:
            x: validated N x D feature map.

        Returns:
            (output, Selection) pair.
        """
        output = _hull_clip(x.mean(axis=0), x.min(axis=0), x.max(axis=0))
        winner = np.zeros(x.shape[1], dtype=np.int64)
        inliers = np.ones(x.shape, dtype=bool)
        return output, Selection("mean", winner, inliers)

    def _routing(self, x, selection):
        """Spread the gradient evenly whatever the grad mode.

        Args:
            x: validated N x D feature map.
            selection: Selection from the forward pass.

        Returns:
            N x D routing matrix.
        """
        return np.full(x.shape, 1.0 / x.shape[0])


class MedianPooling(PoolingBase):
    """Column median; the inliers are the middle row(s)."""

    def _select(self, x):
        """Handle median reduction.

        Args:
            x: validated N x D feature map.

        Returns:
            (output, Selection) pair.
        """
        n, n_cols = x.shape
        cols = np.arange(n_cols)
        order = np.argsort(x, axis=0, kind="stable")
        upper = order[n // 2]
        lower = order[(n - 1) // 2]
        inliers = np.zeros(x.shape, dtype=bool)
        inliers[upper, cols] = True
        inliers[lower, cols] = True
        a, b = x[lower, cols], x[upper, cols]
        output = np.where(lower == upper, a, 0.5 * (a + b))
        return output, Selection("median", lower, inliers)

    def _routing(self, x, selection):
        """Split the gradient across the middle row(s).

        Args:
            x: validated N x D feature map.
            selection: Selection from the forward pass.

        Returns:
            N x D routing matrix.
        """
        mask = selection.inliers
        return mask / mask.sum(axis=0)


class HistogramPooling(PoolingBase):
    """Mode bin of a uniform histogram over the configured range."""

    def scan(self, x):
        """Run the mode-bin kernel.

        Args:
            x: validated N x D feature map.

        Returns:
            tuple of kernel outputs.
        """
        lo, hi = self.config.value_range
        bins = int(self.config.bins)
        return _kernel("histogram")(
            x, lo, bins / (hi - lo), (hi - lo) / bins, bins,
            KERNEL_COLUMN_BLOCK,
        )

    def _select(self, x):
        """Handle histogram-mode reduction.

        Args:
            x: validated N x D feature map.

        Returns:
            (output, Selection) pair.
        """
        _, mode, sums, members, low, high, winner, inliers = self.scan(x)
        if self.config.histogram_value == "bin_center":
            lo, hi = self.config.value_range
            output = lo + (mode + 0.5) * ((hi - lo) / self.config.bins)
        else:
            output = _hull_clip(sums / members, low, high)
        return output, Selection("histogram", winner, inliers)


class RansacPooling(PoolingBase):
    """Hypothesis with the most points within epsilon."""

    def _select(self, x):
        """Handle RANSAC reduction.

        Args:
            x: validated N x D feature map.

        Returns:
            (output, Selection) pair.
        """
        n, n_cols = x.shape
        cols = np.arange(n_cols)
        hypotheses = hypothesis_rows(
            n, self.config.hypothesis_fraction, self.config.seed
        )
        winner, _ = _kernel("ransac")(
            np.ascontiguousarray(x.T), hypotheses, float(self.config.epsilon)
        )
        centers = x[winner, cols]
        inliers = np.abs(x - centers) <= self.config.epsilon
        if self.config.ransac_value == "inlier_mean":
            members = np.where(inliers, x, np.nan)
            output = _hull_clip(
                np.nanmean(members, axis=0),
                np.nanmin(members, axis=0),
                np.nanmax(members, axis=0),
            )
        else:
            output = centers.copy()
        return output, Selection("ransac", winner, inliers)


class MEstimatorPooling(PoolingBase):
    """IRLS location estimate with a robust loss."""

    def _select(self, x):
        """Handle M-estimator reduction.

        Args:
            x: validated N x D feature map.

        Returns:
            (output, Selection) pair.
        """
        trace = m_estimate(
            x,
            self.config.rho_function,
            max_iters=int(self.config.max_iters),
            tol=self.config.tol,
        )
        y = trace.estimate
        winner = np.argmin(np.abs(x - y), axis=0)
        inliers = np.abs(x - y) <= self.config.tau
        selection = Selection(
            "m_estimator", winner, inliers, trace.converged, y.copy()
        )
        return y, selection

    def _routing(self, x, selection):
        """Implicit gradient of the estimate, see the estimators module.

        Columns whose weights all vanished fell back to the median and
        route to the row nearest the estimate.

        Args:
            x: validated N x D feature map.
            selection: Selection from the forward pass.

        Returns:
            N x D routing matrix.
        """
        cols = np.arange(x.shape[1])
        route = location_jacobian(
            x, self.config.rho_function, selection.estimate, self.config.m_grad
        )
        empty = route.sum(axis=0) == 0
        if np.any(empty):
            route[selection.winner[empty], cols[empty]] = 1.0
        if not selection.converged.all():
            logger.warning(
                f"routing through {int((~selection.converged).sum())} "
                "unconverged IRLS column(s)"
            )
        return route


_POOLING_MAP = {
    "max": MaxPooling,
    "mean": MeanPooling,
    "median": MedianPooling,
    "histogram": HistogramPooling,
    "ransac": RansacPooling,
    "m_estimator": MEstimatorPooling,
}


def create_pooling(config):
    """Create the pooling instance for a config.

    Args:
        config: PoolConfig.

    Returns:
        the appropriate pooling class instance.

    Raises:
        ConfigError: in case the operator is not supported.
    """
    config.validate()
    pooling_cls = _POOLING_MAP.get(config.operator, None)

    if pooling_cls is not None:
        return pooling_cls(config)

    raise ConfigError("operator", f"unsupported operator {config.operator!r}")


def pool_forward(features, config):
    """Pool an N x D feature map into a length-D global feature.

    Args:
        features: N x D feature map.
        config: PoolConfig.

    Returns:
        PoolResult.
    """
    return create_pooling(config).forward(features)


def pool_backward(features, config, selection, upstream_grad):
    """Gradient of the pooled feature w.r.t. the feature map.

    Args:
        features: the N x D feature map given to pool_forward.
        config: the PoolConfig given to pool_forward.
        selection: Selection from pool_forward.
        upstream_grad: length-D gradient w.r.t. the pooled feature.

    Returns:
        N x D gradient matrix.
    """
    return create_pooling(config).backward(
        features, selection, upstream_grad
    )


def histogram_pool_1d(column, bins=DEFAULT_BINS, value_range=DEFAULT_RANGE):
    """Histogram-mode pooling of one column.

    Args:
        column: length-N vector.
        bins: number of uniform bins over value_range.
        value_range: (lo, hi); values outside clamp to the edge bins.

    Returns:
        (value, inlier rows) where value is the mean of the mode-bin
        members.
    """
    config = PoolConfig(
        operator="histogram", bins=bins, value_range=tuple(value_range)
    )
    result = pool_forward(np.reshape(column, (-1, 1)), config)
    rows = np.flatnonzero(result.selection.inliers[:, 0])
    return float(result.output[0]), rows


def histogram_counts(column, bins=DEFAULT_BINS, value_range=DEFAULT_RANGE):
    """Per-bin counts used by the mode search.

    Args:
        column: length-N vector.
        bins: number of uniform bins over value_range.
        value_range: (lo, hi); values outside clamp to the edge bins.

    Returns:
        length-bins integer counts summing to N.
    """
    config = PoolConfig(
        operator="histogram", bins=bins, value_range=tuple(value_range)
    )
    x = check_features(np.reshape(column, (-1, 1)))
    counts = HistogramPooling(config).scan(x)[0]
    return counts[0]


def ransac_pool_1d(
    column,
    epsilon=DEFAULT_EPSILON,
    hypothesis_fraction=DEFAULT_HYPOTHESIS_FRACTION,
    seed=0,
):
    """RANSAC pooling of one column.

    Args:
        column: length-N vector.
        epsilon: inlier threshold.
        hypothesis_fraction: share of rows tried as hypotheses.
        seed: hypothesis sampling seed.

    Returns:
        (value, inlier rows) where value is the winning hypothesis.
    """
    config = PoolConfig(
        operator="ransac",
        epsilon=epsilon,
        hypothesis_fraction=hypothesis_fraction,
        seed=seed,
    )
    result = pool_forward(np.reshape(column, (-1, 1)), config)
    rows = np.flatnonzero(result.selection.inliers[:, 0])
    return float(result.output[0]), rows


def pool_batch(feature_maps, config):
    """Pool every feature map of a batch.

    Args:
        feature_maps: B x N x D array or sequence of N x D maps.
        config: PoolConfig.

    Returns:
        list of PoolResult.
    """
    pooling = create_pooling(config)
    return [pooling.forward(features) for features in feature_maps]


def pool_timing_bench(
    n, d, batch, config, repeats=BENCH_MIN_REPEATS, seed=0
):
    """Time pooling of a synthetic Gaussian batch.

    One untimed call warms up compiled kernels first.

    Args:
        n: points per feature map.
        d: feature dimensions.
        batch: feature maps per call.
        config: PoolConfig.
        repeats: timed calls, at least 20.
        seed: data seed.

    Returns:
        TimingStats.

    Raises:
        ValueError: in case a size is below one.
    """
    if min(n, d, batch) < 1:
        raise ValueError(f"sizes must be >= 1, got {(n, d, batch)}")
    repeats = max(int(repeats), BENCH_MIN_REPEATS)
    data = np.random.default_rng(seed).standard_normal((batch, n, d))
    pool_batch(data, config)

    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        pool_batch(data, config)
        times.append(time.perf_counter() - start)
    median = statistics.median(times)
    logger.debug(f"{config.operator} {batch}x{n}x{d}: median {median}s")
    return TimingStats(
        repeats=repeats,
        mean=statistics.fmean(times),
        median=median,
        times=times,
    )
