# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""M-estimator location pooling solved by IRLS.

Each feature column is reduced to the location ``y`` minimizing
``sum(rho(x_i - y))`` for a robust loss ``rho``. The solver is iteratively
reweighted least squares started from the column median; every step is the
weighted mean under the weights of the previous iterate, which never
increases the objective. The backward pass differentiates the converged
fixed point.
"""

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from errors import ConfigError, NonFiniteInputError, NotConvergedError
from literals import (
    DEFAULT_MAX_ITERS,
    DEFAULT_TAU,
    DEFAULT_TOL,
    M_GRADS,
    RHO_KINDS,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RhoFunction:
    """Robust loss with its IRLS weight function.

    Attrs:
        kind: ``truncated_quadratic`` or ``welsch``.
        tau: positive scale parameter.
    """

    kind: str = "truncated_quadratic"
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        """Validate the loss parameters.

        Raises:
            ConfigError: in case of an unknown kind or a non-positive scale.
        """
        if self.kind not in RHO_KINDS:
            raise ConfigError("rho", f"unknown loss {self.kind!r}")
        if not np.isfinite(self.tau) or self.tau <= 0:
            raise ConfigError("tau", f"must be positive, got {self.tau!r}")

    def loss(self, r):
        """Evaluate rho elementwise.

        Args:
            r: residuals.

        Returns:
            loss values with the shape of r.
        """
        r2 = np.square(r)
        t2 = self.tau * self.tau
        if self.kind == "truncated_quadratic":
            return np.minimum(r2, t2)
        return t2 * (1.0 - np.exp(-r2 / t2))

    def weight(self, r):
        """Evaluate the IRLS weight elementwise.

        Args:
            r: residuals.

        Returns:
            weights in [0, 1] with the shape of r.
        """
        if self.kind == "truncated_quadratic":
            return (np.abs(r) <= self.tau).astype(np.float64)
        return np.exp(-np.square(r) / (self.tau * self.tau))

    def psi_prime(self, r):
        """Evaluate the derivative of the influence function r * w(r).

        Args:
            r: residuals.

        Returns:
            derivative values with the shape of r.
        """
        w = self.weight(r)
        if self.kind == "truncated_quadratic":
            return w
        return w * (1.0 - 2.0 * np.square(r) / (self.tau * self.tau))


@dataclass
class IrlsTrace:
    """Outcome of an IRLS solve.

    For a single column the fields are scalars and a weight vector; for a
    feature map they hold one entry per column.

    Attrs:
        estimate: final location estimate y.
        weights: residual weights of every point at the final estimate.
        iterations: iterations used.
        converged: whether the step fell below the tolerance.
        objective: sum of rho after initialization and after every
            iteration.
    """

    estimate: np.ndarray
    weights: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    objective: List[np.ndarray] = field(default_factory=list)

    def column(self, d):
        """Extract the trace of one column.

        Args:
            d: column index.

        Returns:
            IrlsTrace with scalar fields for column d.
        """
        return IrlsTrace(
            estimate=float(self.estimate[d]),
            weights=self.weights[:, d].copy(),
            iterations=int(self.iterations[d]),
            converged=bool(self.converged[d]),
            objective=[float(obj[d]) for obj in self.objective],
        )


def _check_finite(values):
    """Reject NaN or Inf input.

    Args:
        values: array to check.

    Raises:
        NonFiniteInputError: in case any entry is not finite.
    """
    if not np.all(np.isfinite(values)):
        raise NonFiniteInputError("input contains NaN or Inf values")


def m_estimate(
    features,
    rho,
    init=None,
    max_iters=DEFAULT_MAX_ITERS,
    tol=DEFAULT_TOL,
):
    """Run IRLS independently on every column of a feature map.

    Args:
        features: N x D array.
        rho: RhoFunction.
        init: optional length-D start; defaults to the column medians.
        max_iters: iteration cap.
        tol: convergence threshold on the absolute step.

    Returns:
        IrlsTrace with one entry per column.

    Raises:
        ConfigError: in case the iteration settings are invalid.
        ValueError: in case the feature map is empty.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError(f"expected a non-empty N x D array, got {x.shape}")
    if max_iters < 1:
        raise ConfigError("max_iters", f"must be >= 1, got {max_iters!r}")
    if not tol > 0:
        raise ConfigError("tol", f"must be positive, got {tol!r}")
    _check_finite(x)

    n_cols = x.shape[1]
    median = np.median(x, axis=0)
    y = median.copy() if init is None else np.array(init, dtype=np.float64)
    y = np.broadcast_to(y, (n_cols,)).copy()

    iterations = np.zeros(n_cols, dtype=np.int64)
    converged = np.zeros(n_cols, dtype=bool)
    active = np.ones(n_cols, dtype=bool)
    objective = [rho.loss(x - y).sum(axis=0)]

    for _ in range(max_iters):
        cols = np.flatnonzero(active)
        if cols.size == 0:
            break
        xa = x[:, cols]
        w = rho.weight(xa - y[cols])
        total = w.sum(axis=0)
        dead = total <= 0.0
        safe = np.where(dead, 1.0, total)
        # The weighted mean stays within the weighted points.
        lo = np.where(w > 0, xa, np.inf).min(axis=0)
        hi = np.where(w > 0, xa, -np.inf).max(axis=0)
        mean = np.clip((w * xa).sum(axis=0) / safe, lo, hi)
        y_new = np.where(dead, y[cols], np.where(lo == hi, lo, mean))
        step = np.abs(y_new - y[cols])
        iterations[cols] += 1
        y[cols] = y_new

        if np.any(dead):
            # No inliers left: fall back to the median, flagged unconverged.
            lost = cols[dead]
            logger.debug(f"IRLS lost all inliers in {lost.size} column(s)")
            y[lost] = median[lost]
            active[lost] = False

        done = cols[(step < tol) & ~dead]
        converged[done] = True
        active[done] = False
        objective.append(rho.loss(x - y).sum(axis=0))

    if np.any(active):
        logger.debug(
            f"IRLS hit max_iters={max_iters} in "
            f"{int(active.sum())} column(s)"
        )

    return IrlsTrace(
        estimate=y,
        weights=rho.weight(x - y),
        iterations=iterations,
        converged=converged,
        objective=objective,
    )


def m_estimate_1d(
    column,
    rho,
    init=None,
    max_iters=DEFAULT_MAX_ITERS,
    tol=DEFAULT_TOL,
):
    """Estimate the robust location of one column.

    Args:
        column: length-N vector.
        rho: RhoFunction.
        init: optional starting point; defaults to the median.
        max_iters: iteration cap.
        tol: convergence threshold on the absolute step.

    Returns:
        IrlsTrace with scalar fields.
    """
    column = np.asarray(column, dtype=np.float64).reshape(-1, 1)
    start = None if init is None else [float(init)]
    trace = m_estimate(column, rho, start, max_iters, tol)
    return trace.column(0)


def location_jacobian(features, rho, estimate, mode="fixed_weight"):
    """Derivative of each column's estimate with respect to its points.

    ``fixed_weight`` treats the converged weights as constants, giving
    w_i / sum(w). ``exact`` applies the implicit function theorem to
    sum(psi(x_i - y)) = 0 and uses psi'(r_i) / sum(psi'), falling back to
    fixed weights where that denominator is not positive.

    Args:
        features: N x D array.
        rho: RhoFunction.
        estimate: length-D converged estimates.
        mode: ``fixed_weight`` or ``exact``.

    Returns:
        N x D array of partial derivatives; columns whose weights all vanish
        are zero.

    Raises:
        ConfigError: in case of an unknown mode.
    """
    if mode not in M_GRADS:
        raise ConfigError("m_grad", f"unknown gradient mode {mode!r}")

    r = np.asarray(features, dtype=np.float64) - np.asarray(estimate)
    w = rho.weight(r)
    total = w.sum(axis=0)
    jac = np.divide(w, total, out=np.zeros_like(w), where=total > 0)
    if mode == "exact":
        p = rho.psi_prime(r)
        p_total = p.sum(axis=0)
        usable = p_total > 0
        exact = np.divide(p, p_total, out=np.zeros_like(p), where=usable)
        jac = np.where(usable, exact, jac)
    return jac


def m_pool_backward(column, rho, trace, upstream_grad, mode="fixed_weight"):
    """Route an upstream gradient through a converged 1D estimate.

    Args:
        column: length-N vector the trace was computed on.
        rho: RhoFunction used for the solve.
        trace: IrlsTrace from m_estimate_1d.
        upstream_grad: scalar gradient of the loss w.r.t. the estimate.
        mode: ``fixed_weight`` (default) or ``exact``.

    Returns:
        length-N gradient vector.

    Raises:
        NotConvergedError: in case the trace did not converge.
    """
    if not trace.converged:
        raise NotConvergedError(
            f"IRLS stopped after {trace.iterations} iteration(s) without "
            "converging; the implicit gradient is undefined"
        )
    column = np.asarray(column, dtype=np.float64).reshape(-1, 1)
    jac = location_jacobian(column, rho, [trace.estimate], mode)
    return jac[:, 0] * float(upstream_grad)
