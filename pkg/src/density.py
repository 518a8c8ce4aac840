# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Two-dimensional mixture densities, their MAP and marginal MAP peaks.

These tools illustrate why pooling seeks the per-dimension density peak:
the marginal peaks of a contaminated density stay close to its joint peak,
and the histogram mode of samples recovers them.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import optimize, stats

from errors import ConfigError
from literals import (
    DEFAULT_GRID_RESOLUTION,
    MIXTURE_ALIASES,
    MIXTURE_PRESETS,
    MIXTURE_SCHEMA,
)
from pooling import histogram_pool_1d
from utils import validate_keys

logger = logging.getLogger(__name__)

# Coarse step of the 2D grid preceding the joint-peak refinement.
JOINT_GRID_STEP = 0.05
# Gaussian components are considered within this many standard deviations.
SUPPORT_SIGMAS = 6.0


@dataclass(frozen=True)
class Component:
    """Weighted bivariate Gaussian."""

    weight: float
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class UniformComponent:
    """Weighted uniform density on an axis-aligned box."""

    weight: float
    low: np.ndarray
    high: np.ndarray

    @property
    def area(self):
        """Area of the support box."""
        return float(np.prod(self.high - self.low))


@dataclass(frozen=True)
class Mixture2D:
    """Gaussian mixture with an optional uniform background.

    Attrs:
        components: Gaussian components.
        uniform: optional uniform component.
    """

    components: List[Component] = field(default_factory=list)
    uniform: Optional[UniformComponent] = None

    def __post_init__(self):
        """Validate weights, covariances and the support box.

        Raises:
            ConfigError: naming the first invalid field.
        """
        weights = [c.weight for c in self.components]
        if self.uniform is not None:
            weights.append(self.uniform.weight)
        if not weights:
            raise ConfigError("components", "mixture has no component")
        if min(weights) < 0:
            raise ConfigError("weight", "weights must be >= 0")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ConfigError("weight", f"weights sum to {sum(weights)}")
        for index, comp in enumerate(self.components):
            if comp.mean.shape != (2,) or comp.cov.shape != (2, 2):
                raise ConfigError(
                    f"components[{index}]", "expected a 2D mean and 2x2 cov"
                )
            if not np.allclose(comp.cov, comp.cov.T):
                raise ConfigError(f"components[{index}].cov", "not symmetric")
            try:
                np.linalg.cholesky(comp.cov)
            except np.linalg.LinAlgError:
                raise ConfigError(
                    f"components[{index}].cov", "not positive definite"
                ) from None
        if self.uniform is not None and not np.all(
            self.uniform.high > self.uniform.low
        ):
            raise ConfigError("uniform", "support box is degenerate")

    @classmethod
    def from_dict(cls, data):
        """Build a mixture from a config mapping.

        Args:
            data: mapping with components and an optional uniform entry.

        Returns:
            Mixture2D.

        Raises:
            ConfigError: in case the mapping is invalid.
        """
        validate_keys(data, MIXTURE_SCHEMA, section="mixture")
        components = [
            Component(
                float(c["weight"]),
                np.asarray(c["mean"], dtype=np.float64),
                np.asarray(c["cov"], dtype=np.float64),
            )
            for c in data.get("components") or []
        ]
        uniform = None
        if data.get("uniform"):
            u = data["uniform"]
            uniform = UniformComponent(
                float(u["weight"]),
                np.asarray(u.get("low", [-5.0, -5.0]), dtype=np.float64),
                np.asarray(u.get("high", [5.0, 5.0]), dtype=np.float64),
            )
        return cls(components, uniform)

    @classmethod
    def preset(cls, name):
        """Build a named mixture.

        Args:
            name: clutter (one Gaussian in uniform clutter) or four-peaks
                (four Gaussians), or one of their aliases.

        Returns:
            Mixture2D.

        Raises:
            ConfigError: in case the name is unknown.
        """
        key = MIXTURE_ALIASES.get(name, name)
        if key not in MIXTURE_PRESETS:
            raise ConfigError("mixture", f"unknown preset {name!r}")
        return cls.from_dict(MIXTURE_PRESETS[key])

    def bounds(self):
        """Box holding the mass of every component.

        Returns:
            (low, high) 2-vectors.
        """
        lows, highs = [], []
        for comp in self.components:
            spread = SUPPORT_SIGMAS * np.sqrt(np.diag(comp.cov))
            lows.append(comp.mean - spread)
            highs.append(comp.mean + spread)
        if self.uniform is not None:
            lows.append(self.uniform.low)
            highs.append(self.uniform.high)
        return np.min(lows, axis=0), np.max(highs, axis=0)


@dataclass
class JointPeak:
    """Location of the joint density maximum.

    Attrs:
        location: the MAP point.
        value: density at the MAP point.
        unique: False when the grid maximum is attained more than once.
    """

    location: np.ndarray
    value: float
    unique: bool


def density_at(mixture, points):
    """Evaluate the mixture pdf.

    Args:
        mixture: Mixture2D.
        points: a 2-vector or an M x 2 array.

    Returns:
        float for one point, length-M array otherwise.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 2)
    total = np.zeros(len(pts))
    for comp in mixture.components:
        total += comp.weight * stats.multivariate_normal.pdf(
            pts, mean=comp.mean, cov=comp.cov
        ).reshape(-1)
    if mixture.uniform is not None:
        u = mixture.uniform
        inside = np.all((pts >= u.low) & (pts <= u.high), axis=1)
        total += np.where(inside, u.weight / u.area, 0.0)
    return float(total[0]) if single else total


def marginal_density(mixture, axis, x):
    """Evaluate the analytic marginal pdf along one axis.

    Args:
        mixture: Mixture2D.
        axis: 0 or 1.
        x: scalar or array of positions.

    Returns:
        marginal density values shaped like x.
    """
    x = np.asarray(x, dtype=np.float64)
    total = np.zeros_like(x)
    for comp in mixture.components:
        total += comp.weight * stats.norm.pdf(
            x, loc=comp.mean[axis], scale=np.sqrt(comp.cov[axis, axis])
        )
    if mixture.uniform is not None:
        u = mixture.uniform
        width = u.high[axis] - u.low[axis]
        inside = (x >= u.low[axis]) & (x <= u.high[axis])
        total += np.where(inside, u.weight / width, 0.0)
    return total


def _grid(low, high, step):
    """Grid from low to high inclusive with the given step."""
    count = int(np.floor((high - low) / step + 1e-9)) + 1
    return low + step * np.arange(count)


def marginal_peak(mixture, axis, resolution=DEFAULT_GRID_RESOLUTION):
    """Locate the peak of a marginal density.

    A grid search at the given resolution is refined by golden-section
    search; when the neighbors do not bracket a maximum the grid value is
    kept.

    Args:
        mixture: Mixture2D.
        axis: 0 or 1.
        resolution: grid step.

    Returns:
        peak location.
    """
    low, high = mixture.bounds()
    xs = _grid(low[axis], high[axis], resolution)
    values = marginal_density(mixture, axis, xs)
    best = int(np.argmax(values))
    if best == 0 or best == len(xs) - 1:
        return float(xs[best])

    def negative(x):
        return -float(marginal_density(mixture, axis, x))

    bracket = (xs[best - 1], xs[best], xs[best + 1])
    try:
        result = optimize.minimize_scalar(
            negative,
            bracket=bracket,
            method="golden",
            options={"xtol": 1e-10},
        )
    except ValueError:
        logger.debug(f"no bracket around {xs[best]}; keeping grid peak")
        return float(xs[best])
    if bracket[0] <= result.x <= bracket[2] and -result.fun >= values[best]:
        return float(result.x)
    return float(xs[best])


def joint_peak(mixture, resolution=DEFAULT_GRID_RESOLUTION):
    """Locate the joint density maximum (the MAP point).

    A coarse 2D grid search is refined by Nelder-Mead down to the given
    resolution. Plateaus (several exact grid maxima) are reported as
    non-unique and not refined.

    Args:
        mixture: Mixture2D.
        resolution: target location accuracy.

    Returns:
        JointPeak.
    """
    low, high = mixture.bounds()
    step = max(resolution, JOINT_GRID_STEP)
    gx = _grid(low[0], high[0], step)
    gy = _grid(low[1], high[1], step)
    xx, yy = np.meshgrid(gx, gy, indexing="ij")
    grid = np.column_stack([xx.ravel(), yy.ravel()])
    values = density_at(mixture, grid)
    best = int(np.argmax(values))
    unique = int(np.count_nonzero(values == values[best])) == 1
    if not unique:
        logger.debug("joint density maximum is not unique")
        return JointPeak(grid[best].copy(), float(values[best]), False)

    result = optimize.minimize(
        lambda p: -density_at(mixture, p),
        grid[best],
        method="Nelder-Mead",
        options={"xatol": resolution / 10, "fatol": 1e-14},
    )
    location = result.x if -result.fun >= values[best] else grid[best]
    return JointPeak(
        np.asarray(location, dtype=np.float64),
        density_at(mixture, location),
        True,
    )


def sample_mixture(mixture, n, seed):
    """Draw samples from the mixture.

    Args:
        mixture: Mixture2D.
        n: sample count.
        seed: generator seed.

    Returns:
        n x 2 array.
    """
    rng = np.random.default_rng(seed)
    weights = [c.weight for c in mixture.components]
    if mixture.uniform is not None:
        weights.append(mixture.uniform.weight)
    which = rng.choice(len(weights), size=n, p=np.asarray(weights))
    samples = np.empty((n, 2))
    for index, comp in enumerate(mixture.components):
        rows = which == index
        samples[rows] = rng.multivariate_normal(
            comp.mean, comp.cov, size=int(rows.sum())
        )
    if mixture.uniform is not None:
        rows = which == len(mixture.components)
        u = mixture.uniform
        samples[rows] = rng.uniform(u.low, u.high, size=(int(rows.sum()), 2))
    return samples


def mmap_estimate(samples, bins=70, value_range=(-5.0, 5.0)):
    """Marginal MAP estimate from samples.

    Each axis is reduced by histogram-mode pooling, the same operator the
    classifier uses per feature dimension.

    Args:
        samples: N x 2 array.
        bins: bins per axis.
        value_range: histogram interval shared by both axes.

    Returns:
        2-vector.
    """
    samples = np.asarray(samples, dtype=np.float64)
    return np.array(
        [
            histogram_pool_1d(samples[:, axis], bins, value_range)[0]
            for axis in range(samples.shape[1])
        ]
    )


def entropy_terms(samples, mixture=None, bandwidth=None):
    """Per-sample terms -p(x_i) log p(x_i) of the entropy approximation.

    Args:
        samples: N x 2 array.
        mixture: Mixture2D giving the exact pdf; when None a Gaussian KDE
            of the samples is used.
        bandwidth: KDE bandwidth rule or factor, see scipy gaussian_kde.

    Returns:
        length-N array; samples of zero density contribute zero.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if mixture is not None:
        p = density_at(mixture, samples)
    else:
        p = stats.gaussian_kde(samples.T, bw_method=bandwidth)(samples.T)
    p = np.atleast_1d(p)
    logp = np.log(p, out=np.zeros_like(p), where=p > 0)
    return -p * logp


def sample_entropy(samples, mixture=None, bandwidth=None):
    """Entropy approximation -sum p(x_i) log p(x_i) over the samples.

    Args:
        samples: N x 2 array.
        mixture: Mixture2D giving the exact pdf; when None a Gaussian KDE
            of the samples is used.
        bandwidth: KDE bandwidth rule or factor.

    Returns:
        the entropy approximation.
    """
    return float(np.sum(entropy_terms(samples, mixture, bandwidth)))


def density_grid(mixture, step, bounds=None):
    """Evaluate the pdf at cell midpoints of a regular grid.

    Args:
        mixture: Mixture2D.
        step: cell size.
        bounds: optional (low, high) 2-vectors; defaults to the mixture
            bounds.

    Returns:
        (x centers, y centers, density matrix indexed [x, y]).
    """
    low, high = mixture.bounds() if bounds is None else bounds
    low, high = np.asarray(low, float), np.asarray(high, float)
    xs = _grid(low[0], high[0], step)[:-1] + step / 2
    ys = _grid(low[1], high[1], step)[:-1] + step / 2
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    values = density_at(mixture, np.column_stack([xx.ravel(), yy.ravel()]))
    return xs, ys, values.reshape(len(xs), len(ys))


def grid_mass(mixture, step=0.01, bounds=None):
    """Integrate the pdf with the midpoint rule.

    Args:
        mixture: Mixture2D.
        step: cell size.
        bounds: optional (low, high) 2-vectors.

    Returns:
        total mass on the grid.
    """
    _, _, values = density_grid(mixture, step, bounds)
    return float(values.sum() * step * step)
