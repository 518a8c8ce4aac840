# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Byte-for-byte reproducibility of experiment outputs."""

import logging

import pytest
from helpers import QUICK_CONFIG, experiment_config

from harness import BenchHarness

logger = logging.getLogger(__name__)

# Wall-clock timings and the summary of the last command vary.
VARYING = {"bench.csv", "summary.txt"}


def _run(directory):
    """Run every command and collect the written reports and data."""
    directory.mkdir()
    harness = BenchHarness(experiment_config(directory, QUICK_CONFIG))
    harness.cmd_gen_data()
    harness.cmd_train()
    harness.cmd_eval()
    for axis in ("outliers", "noise", "dropout", "clustered"):
        harness.cmd_sweep(axis)
    harness.cmd_threshold_sweep()
    harness.cmd_bench()
    harness.cmd_diag()
    harness.cmd_demo_mmap()
    return {
        path.relative_to(harness.out).as_posix(): path.read_bytes()
        for path in sorted(harness.out.rglob("*"))
        if path.is_file()
        and path.name not in VARYING
        and path.suffix in (".csv", ".xyz", ".json")
        and path.name != "state.json"
    }


@pytest.mark.slow
class TestDeterminism:
    """Two runs of the same config in separate directories."""

    def test_outputs_identical(self, tmp_path):
        """Every report and data file matches byte for byte."""
        first = _run(tmp_path / "first")
        second = _run(tmp_path / "second")
        assert any(name.endswith(".xyz") for name in first)
        assert any(name.startswith("sweep_") for name in first)
        assert sorted(first) == sorted(second)
        differing = [name for name in first if first[name] != second[name]]
        logger.info(f"compared {len(first)} files")
        assert not differing
