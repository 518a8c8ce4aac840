# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.


"""Helper, state and logging unit tests."""

import logging
import tempfile
from pathlib import Path
from unittest import TestCase, mock

import numpy as np

from errors import ConfigError
from literals import POOL_SCHEMA
from log import configure_logging, log_command
from state import State
from utils import (
    atomic_write,
    config_hash,
    csv_text,
    derive_seed,
    format_value,
    handle_command_error,
    ordered_map,
    read_csv,
    render,
    validate_keys,
    write_csv,
)

logger = logging.getLogger(__name__)


class TestUtils(TestCase):
    """Helper functions."""

    def setUp(self):
        """Create a scratch directory."""
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def test_config_hash(self):
        """Hashes ignore key order but not values."""
        a = config_hash({"a": 1, "b": [1, 2]})
        self.assertEqual(a, config_hash({"b": [1, 2], "a": 1}))
        self.assertNotEqual(a, config_hash({"a": 1, "b": [2, 1]}))
        self.assertEqual(len(a), 64)

    def test_derive_seed(self):
        """Derived seeds are stable and separate streams."""
        self.assertEqual(derive_seed(7, "train"), derive_seed(7, "train"))
        self.assertNotEqual(derive_seed(7, "train"), derive_seed(7, "test"))
        self.assertNotEqual(derive_seed(7, "a", 1), derive_seed(8, "a", 1))
        self.assertLess(derive_seed(0, "x"), 2**32)

    def test_format_value(self):
        """Cells are formatted deterministically."""
        self.assertEqual(format_value(True), "true")
        self.assertEqual(format_value(np.bool_(False)), "false")
        self.assertEqual(format_value(0.1 + 0.2), "0.3")
        self.assertEqual(format_value(np.float64(1e-12)), "1e-12")
        self.assertEqual(format_value([1, 0.5]), "1;0.5")
        self.assertEqual(format_value("max"), "max")

    def test_csv_round_trip(self):
        """Reports keep their provenance and read back as dictionaries."""
        text = csv_text(("a", "b"), [(1, 0.5)], {"seed": 3})
        lines = text.splitlines()
        self.assertTrue(lines[0].startswith("# modepool "))
        self.assertEqual(lines[1], "# seed: 3")
        self.assertEqual(lines[2:], ["a,b", "1,0.5"])

        path = write_csv(self.dir / "r.csv", ("a", "b"), [(1, 0.5)], {})
        self.assertEqual(read_csv(path), [{"a": "1", "b": "0.5"}])

    def test_atomic_write(self):
        """Text and bytes are written without leftovers."""
        atomic_write(self.dir / "sub" / "t.txt", "text")
        atomic_write(self.dir / "b.bin", b"\x00\x01")
        self.assertEqual((self.dir / "sub" / "t.txt").read_text(), "text")
        self.assertEqual((self.dir / "b.bin").read_bytes(), b"\x00\x01")
        self.assertEqual(
            sorted(p.name for p in self.dir.iterdir()), ["b.bin", "sub"]
        )

    def test_atomic_write_failure(self):
        """A failed write keeps the previous content."""
        target = self.dir / "keep.txt"
        atomic_write(target, "old")
        with mock.patch("utils.os.replace", side_effect=OSError("disk")):
            with self.assertRaises(OSError):
                atomic_write(target, "new")
        self.assertEqual(target.read_text(), "old")
        self.assertEqual(len(list(self.dir.iterdir())), 1)

    def test_ordered_map(self):
        """Results keep the input order with and without threads."""
        items = list(range(20))
        squares = [x * x for x in items]
        self.assertEqual(ordered_map(lambda x: x * x, items), squares)
        threaded = ordered_map(lambda x: x * x, items, workers=4)
        self.assertEqual(threaded, squares)

    def test_validate_keys(self):
        """Schema errors name the section and field."""
        validate_keys({"bins": 10}, POOL_SCHEMA, section="pooling")
        with self.assertRaises(ConfigError) as ctx:
            validate_keys({"bins": "ten"}, POOL_SCHEMA, section="pooling")
        self.assertEqual(ctx.exception.field, "pooling.bins")

    def test_render(self):
        """The summary template lists lines and outputs."""
        text = render(
            "summary.jinja",
            {
                "app": "modepool",
                "version": "0.1.0",
                "command": "eval",
                "config_hash": "abc",
                "lines": ["max: 0.9"],
                "outputs": ["out/eval.csv"],
            },
        )
        self.assertEqual(
            text,
            "modepool 0.1.0: eval\nconfig-hash: abc\n  max: 0.9\n"
            "outputs:\n  - out/eval.csv\n",
        )

    def test_render_keeps_markup_characters(self):
        """Plain-text output is not HTML-escaped."""
        text = render(
            "summary.jinja",
            {
                "app": "modepool",
                "version": "0.1.0",
                "command": "diag",
                "config_hash": "abc",
                "lines": ["ratio < 0.5 & bins > 10"],
                "outputs": [],
            },
        )
        self.assertIn("  ratio < 0.5 & bins > 10\n", text)
        self.assertNotIn("&lt;", text)

    def test_handle_command_error(self):
        """Errors are logged and re-raised."""

        @handle_command_error
        def broken():
            raise RuntimeError("boom")

        with self.assertLogs("utils", level="ERROR") as logs:
            with self.assertRaises(RuntimeError):
                broken()
        self.assertIn("Failed to execute broken", logs.output[0])


class TestState(TestCase):
    """JSON backed state."""

    def setUp(self):
        """Create a state in a scratch directory."""
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / "state.json"
        self.state = State(self.path)

    def test_set_get_delete(self):
        """Values persist across instances and unknown names are None."""
        self.assertFalse(self.state.is_ready())
        self.assertIsNone(self.state.models)
        self.state.models = {"max": "models/max.npz"}
        self.assertTrue(self.state.is_ready())
        other = State(self.path)
        self.assertEqual(other.models, {"max": "models/max.npz"})
        del other.models
        self.assertIsNone(self.state.models)
        self.assertEqual(self.state.as_dict(), {})


class TestLogging(TestCase):
    """Logging helpers."""

    def test_log_command(self):
        """Commands log their start and completion."""

        class Runner:
            @log_command(logger)
            def cmd_run(self):
                return 3

        with self.assertLogs(logger, level="INFO") as logs:
            self.assertEqual(Runner().cmd_run(), 3)
        self.assertEqual(len(logs.output), 2)
        self.assertIn("running Runner.cmd_run", logs.output[0])
        self.assertIn("completed Runner.cmd_run", logs.output[1])

    def test_invalid_level(self):
        """Unknown level names are rejected."""
        with self.assertRaises(ValueError):
            configure_logging("verbose")
