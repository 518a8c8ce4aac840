#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Acceptance test helpers."""

import logging
import os
from pathlib import Path

import yaml

from harness import load_config
from utils import read_csv

logger = logging.getLogger(__name__)

BASE_DIR = Path(__file__).resolve().parents[2]

# Operators compared by the robustness runs.
OPERATORS = ["max", "histogram", "ransac", "m_estimator"]

# The 5-class synthetic suite at full size.
ACCEPTANCE_CONFIG = {
    "dataset": {
        "classes": ["sphere", "box", "cylinder", "cone", "torus"],
        "points": 512,
        "train-per-class": 100,
        "test-per-class": 20,
        "seed": 0,
    },
    "operators": OPERATORS,
    "train": {"epochs": 30, "learning-rate": 0.001, "log-every": 5},
    "sweeps": {
        "outliers": [0.0, 0.5],
        "noise": [0.0, 0.1],
        "dropout": [0.0, 0.5],
        "clustered": [0, 200],
    },
    "threshold-sweep": {"thresholds": [0.01, 0.143, 5.0]},
    "bench": {
        "presets": ["1024x2048"],
        "batch": 10,
        "repeats": 20,
        "operators": ["max", "histogram", "ransac"],
    },
    "diag": {"model": "max", "dimensions": 50},
    "demo": {"mixture": "clutter", "samples": 100000},
}

# Small run used where only reproducibility matters.
QUICK_CONFIG = {
    "dataset": {
        "classes": ["sphere", "box", "torus"],
        "points": 128,
        "train-per-class": 6,
        "test-per-class": 3,
    },
    "model": {"mlp-widths": [16], "feature-dim": 16, "fc-widths": [16]},
    "operators": ["max", "histogram", "m_estimator"],
    "train": {"epochs": 3, "batch-size": 6},
    "sweeps": {
        "outliers": [0.0, 0.3],
        "noise": [0.0, 0.05],
        "dropout": [0.0, 0.5],
        "clustered": [0, 40],
    },
    "threshold-sweep": {"thresholds": [0.1, 0.5]},
    "bench": {"presets": ["1x1"], "operators": ["max", "histogram"]},
    "diag": {"dimensions": 8},
    "demo": {"samples": 5000, "grid-step": 0.5},
}


def write_config(directory, data):
    """Write an experiment config file.

    Args:
        directory: target directory.
        data: config mapping.

    Returns:
        path of the file.
    """
    path = Path(directory) / "experiment.yaml"
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


def experiment_config(directory, data):
    """Load an experiment writing into a directory.

    Args:
        directory: scratch directory holding the config and outputs.
        data: config mapping.

    Returns:
        ExperimentConfig.
    """
    os.environ.pop("MODEPOOL_OUTPUT_ROOT", None)
    path = write_config(directory, data)
    return load_config(path, output_dir=Path(directory) / "out")


def accuracy(rows, operator, level=None):
    """Accuracy of one operator in a report.

    Args:
        rows: rows read with read_csv.
        operator: pooling operator.
        level: sweep level, for sweep reports.

    Returns:
        accuracy as a float.
    """
    for row in rows:
        if row["operator"] != operator:
            continue
        if level is None or float(row["level"]) == level:
            return float(row["accuracy"])
    raise KeyError(f"no row for {operator} at {level}")


def sweep_rows(harness, axis):
    """Run one sweep and read its report.

    Args:
        harness: BenchHarness with trained models.
        axis: sweep axis.

    Returns:
        list of row dictionaries.
    """
    rows = read_csv(harness.cmd_sweep(axis))
    for row in rows:
        logger.info(
            f"{axis}={row['level']} {row['operator']}: {row['accuracy']}"
        )
    return rows
