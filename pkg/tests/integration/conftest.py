# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Acceptance test fixtures."""

import logging

import pytest
from helpers import ACCEPTANCE_CONFIG, experiment_config

from harness import BenchHarness

logger = logging.getLogger(__name__)


@pytest.fixture(name="experiment", scope="session")
def experiment(tmp_path_factory):
    """Generate the synthetic suite and train one model per operator."""
    directory = tmp_path_factory.mktemp("acceptance")
    harness = BenchHarness(experiment_config(directory, ACCEPTANCE_CONFIG))
    harness.cmd_gen_data()
    harness.cmd_train()
    clean = harness.cmd_eval()
    logger.info(f"clean accuracies in {clean}")
    return harness
