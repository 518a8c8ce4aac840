#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Collection of helper methods for the modepool harness."""

import csv
import functools
import hashlib
import io
import json
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from cerberus import Validator
from jinja2 import Environment, FileSystemLoader

from errors import ConfigError
from literals import APP_NAME, CSV_FLOAT_FORMAT, VERSION

logger = logging.getLogger(__name__)


def render(template_name, env=None):
    """Render a text template from the templates directory.

    Args:
        template_name: template file name.
        env: (Optional) The values used by the template.

    Returns:
        content: rendered template content.
    """
    # get the absolute path of templates directory.
    repo_dir = os.path.abspath(
        os.path.join(os.path.dirname(__file__), os.pardir)
    )
    templates_path = os.path.join(repo_dir, "templates")

    loader = FileSystemLoader(templates_path)
    return (
        Environment(
            loader=loader,
            autoescape=False,  # nosec B701 plain-text output
            keep_trailing_newline=True,
            trim_blocks=True,
            lstrip_blocks=True,
        )
        .get_template(template_name)
        .render(**(env or {}))
    )


def validate_keys(data, schema, section="config"):
    """Validate a configuration mapping against a cerberus schema.

    Args:
        data: the provided configuration data.
        schema: the expected schema.
        section: name used to prefix the offending field.

    Raises:
        ConfigError: if the data does not match the schema.
    """
    v = Validator(schema)
    if not v.validate(data):
        field = sorted(v.errors)[0]
        raise ConfigError(f"{section}.{field}", str(v.errors[field]))


def atomic_write(path, content):
    """Write a file so that readers never observe a partial result.

    The content goes to a temporary file in the target directory which
    then replaces the target.

    Args:
        path: destination file.
        content: text or bytes to write.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(content, bytes) else "w"
    fd, tmp_name = tempfile.mkstemp(
        dir=str(path.parent), prefix=f".{path.name}.", suffix=".tmp"
    )
    try:
        kwargs = {} if mode == "wb" else {"encoding": "utf-8", "newline": ""}
        with os.fdopen(fd, mode, **kwargs) as handle:
            handle.write(content)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise


def config_hash(config):
    """Hash a configuration mapping independently of key order.

    Args:
        config: JSON serializable configuration.

    Returns:
        hex sha256 digest of the canonical JSON encoding.
    """
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def derive_seed(base, *parts):
    """Derive a stable 32-bit seed from a base seed and labels.

    Args:
        base: base seed.
        parts: labels distinguishing the derived stream.

    Returns:
        derived non-negative integer seed.
    """
    key = ":".join([str(base), *[str(p) for p in parts]])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def format_value(value):
    """Format a CSV cell deterministically.

    Args:
        value: cell value.

    Returns:
        string representation of the value.
    """
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), CSV_FLOAT_FORMAT)
    if isinstance(value, (list, tuple)):
        return ";".join(format_value(v) for v in value)
    return str(value)


def csv_text(columns, rows, provenance):
    """Build CSV content with a provenance preamble.

    Args:
        columns: header names.
        rows: iterable of row sequences matching the columns.
        provenance: mapping written as leading comment lines.

    Returns:
        the CSV document as a string.
    """
    buffer = io.StringIO()
    buffer.write(f"# {APP_NAME} {VERSION}\n")
    for key, value in provenance.items():
        buffer.write(f"# {key}: {format_value(value)}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return buffer.getvalue()


def write_csv(path, columns, rows, provenance):
    """Write a CSV report atomically.

    Args:
        path: destination file.
        columns: header names.
        rows: iterable of row sequences.
        provenance: mapping written as leading comment lines.

    Returns:
        the path written.
    """
    atomic_write(path, csv_text(columns, rows, provenance))
    logger.info(f"wrote {path}")
    return Path(path)


def read_csv(path):
    """Read a CSV report written by write_csv.

    Args:
        path: report location.

    Returns:
        list of dictionaries, one per data row.
    """
    with open(path, "r", encoding="utf-8") as handle:
        lines = [line for line in handle if not line.startswith("#")]
    return list(csv.DictReader(lines))


def ordered_map(func, items, workers=1):
    """Apply a function over items, possibly in parallel, keeping order.

    Args:
        func: callable applied to each item.
        items: sequence of inputs.
        workers: thread count; 1 runs inline.

    Returns:
        list of results in input order.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(func, items))


def handle_command_error(func):
    """Log failures of a harness command before they propagate.

    Args:
        func: The function to decorate.

    Returns:
        wrapper: A decorated function that re-raises on failure.
    """

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        """Execute wrapper for the decorated function and handle errors.

        Args:
            args: Positional arguments passed to the decorated function.
            kwargs: Keyword arguments passed to the decorated function.

        Returns:
            result: The result of the decorated function if successful.

        Raises:
            ConfigError: In case the configuration is invalid.
            Exception: In case the command fails at run time.
        """
        try:
            return func(*args, **kwargs)
        except ConfigError as err:
            logger.error(f"{func.__name__}: {err}")
            raise
        except Exception:
            logger.exception(f"Failed to execute {func.__name__}:")
            raise

    return wrapper
