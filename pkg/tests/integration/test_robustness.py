# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Robustness of trained classifiers to test-time perturbations."""

import logging

import numpy as np
import pytest
from helpers import accuracy, sweep_rows

from classifier import pooled_features
from data import add_uniform_outliers
from utils import derive_seed, read_csv

logger = logging.getLogger(__name__)


@pytest.mark.slow
@pytest.mark.usefixtures("experiment")
class TestRobustness:
    """Accuracy of models trained on clean clouds, evaluated perturbed."""

    def test_outliers(self, experiment):
        """Mode pooling keeps its accuracy at 50% uniform outliers."""
        rows = sweep_rows(experiment, "outliers")
        operators = experiment.config.operators
        clean = {op: accuracy(rows, op, 0.0) for op in operators}
        noisy = {op: accuracy(rows, op, 0.5) for op in operators}

        assert noisy["histogram"] >= 0.85 * clean["histogram"]
        assert noisy["max"] <= 0.6 * clean["max"]
        assert noisy["ransac"] >= 0.75 * clean["ransac"]
        assert noisy["m_estimator"] >= 0.75 * clean["m_estimator"]
        assert noisy["histogram"] >= noisy["max"]

    def test_clean_level_matches_eval(self, experiment):
        """The zero level of a sweep reproduces the clean evaluation."""
        rows = sweep_rows(experiment, "outliers")
        evaluation = read_csv(experiment.out / "eval.csv")
        for op in experiment.config.operators:
            assert accuracy(rows, op, 0.0) == accuracy(evaluation, op)

    def test_noise(self, experiment):
        """Histogram and TQ pooling tolerate sigma 0.1 jitter."""
        rows = sweep_rows(experiment, "noise")
        for op in ("histogram", "m_estimator"):
            assert accuracy(rows, op, 0.1) >= 0.8 * accuracy(rows, op, 0.0)

    def test_dropout(self, experiment):
        """Dropping half the points costs at most five points."""
        rows = sweep_rows(experiment, "dropout")
        for op in ("histogram", "m_estimator"):
            drop = accuracy(rows, op, 0.0) - accuracy(rows, op, 0.5)
            assert drop <= 0.05

    def test_clustered(self, experiment):
        """Clustered background points are swept for every operator."""
        rows = sweep_rows(experiment, "clustered")
        assert len(rows) == 2 * len(experiment.config.operators)

    def test_pooled_difference(self, experiment):
        """Histogram pooled features move less than max pooled features."""
        test = experiment.split("test")
        models = {op: experiment.model(op) for op in ("histogram", "max")}
        wins = 0
        for index, cloud in enumerate(test):
            seed = derive_seed(experiment.config.dataset.seed, "diff", index)
            noisy = add_uniform_outliers(cloud, 0.5, seed)
            distance = {
                op: np.linalg.norm(
                    pooled_features(model, noisy)
                    - pooled_features(model, cloud)
                )
                for op, model in models.items()
            }
            wins += distance["histogram"] < distance["max"]
        logger.info(f"histogram moved less on {wins}/{len(test)} clouds")
        assert wins >= 0.9 * len(test)

    def test_threshold_sweep(self, experiment):
        """Extreme bin half-widths do no better than an interior one."""
        rows = read_csv(experiment.cmd_threshold_sweep())
        columns = ("clean_accuracy", "outlier_accuracy", "noise_accuracy")
        score = {
            float(r["threshold"]): np.mean([float(r[c]) for c in columns])
            for r in rows
        }
        assert [r["best"] for r in rows].count("true") == 1
        assert score[0.01] <= score[0.143]
        assert score[5.0] <= score[0.143]

    def test_diag(self, experiment):
        """Mode pooling changes less than max pooling under outliers."""
        _, _, norms = experiment.cmd_diag(outlier_ratio=0.5)
        rows = {
            r["operator"]: float(r["l2_difference"]) for r in read_csv(norms)
        }
        assert rows["histogram"] < rows["max"]
