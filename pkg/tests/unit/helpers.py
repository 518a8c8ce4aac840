#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Reference implementations and literals used by the unit tests."""

import numpy as np

# Histogram example: three points share bin 1 of ten bins over [0, 1].
HISTOGRAM_COLUMN = [0.1, 0.12, 0.11, 0.9, -0.8]
HISTOGRAM_RANGE = (0.0, 1.0)
HISTOGRAM_BINS = 10

# RANSAC example: a cluster of three next to a pair.
RANSAC_COLUMN = [0.0, 0.05, 0.1, 3.0, 3.05]
RANSAC_EPSILON = 0.1

EXPERIMENT_CONFIG = """\
dataset:
  classes: [sphere, box]
  points: 64
  train-per-class: 4
  test-per-class: 2
model:
  mlp-widths: [8]
  feature-dim: 8
  fc-widths: [8]
operators: [max, histogram]
train:
  epochs: 2
  batch-size: 4
  log-every: 1
sweeps:
  outliers: [0.0, 0.5]
  noise: [0.0, 0.05]
  dropout: [0.0, 0.5]
  clustered: [0, 20]
threshold-sweep:
  thresholds: [0.1, 1.0]
bench:
  presets: [1x1]
  repeats: 20
  operators: [max, histogram]
diag:
  model: max
  dimensions: 4
  bins: 10
demo:
  samples: 2000
  grid-step: 0.5
"""


def histogram_oracle(column, bins, value_range):
    """Mode bin, member rows and member mean of one column.

    Args:
        column: length-N values.
        bins: bin count.
        value_range: (lo, hi).

    Returns:
        (mode bin, member rows, member mean).
    """
    x = np.asarray(column, dtype=np.float64)
    lo, hi = value_range
    index = np.floor((x - lo) * (bins / (hi - lo)))
    index = np.clip(index, 0, bins - 1).astype(int)
    counts = np.bincount(index, minlength=bins)
    mode = int(np.argmax(counts))
    rows = np.flatnonzero(index == mode)
    return mode, rows, float(np.mean(x[rows]))


def ransac_oracle(column, epsilon, hypotheses):
    """Winning hypothesis row of one column.

    Equal counts go to the smaller value, then to the lower row.

    Args:
        column: length-N values.
        epsilon: inlier threshold.
        hypotheses: sorted candidate rows.

    Returns:
        (winner row, inlier count).
    """
    x = np.asarray(column, dtype=np.float64)
    best, winner = -1, 0
    for row in hypotheses:
        count = int(np.sum(np.abs(x - x[row]) <= epsilon))
        if count > best or (count == best and x[row] < x[winner]):
            best, winner = count, int(row)
    return winner, best


def finite_difference(func, x, step=1e-6):
    """Central finite-difference gradient of a scalar function.

    Args:
        func: callable mapping an array like x to a float.
        x: evaluation point.
        step: perturbation size.

    Returns:
        array of partial derivatives shaped like x.
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        plus, minus = x.copy(), x.copy()
        plus[index] += step
        minus[index] -= step
        grad[index] = (func(plus) - func(minus)) / (2 * step)
    return grad
