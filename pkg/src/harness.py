#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Command line harness for the pooling experiments.

Every command reads one YAML experiment config, merged over the defaults in
the repository's config.yaml, and writes CSV reports with a provenance
preamble plus a rendered summary under the output directory.
"""

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from classifier import (
    ClassifierModel,
    TrainConfig,
    evaluate,
    feature_map,
    load,
    save,
    train,
    with_pool,
)
from data import (
    AugmentationSpec,
    add_uniform_outliers,
    build_dataset,
    clustered_counts,
    estimate_normals,
    load_xyz,
    save_xyz,
)
from density import (
    Mixture2D,
    density_at,
    density_grid,
    grid_mass,
    joint_peak,
    marginal_density,
    marginal_peak,
    mmap_estimate,
    sample_entropy,
    sample_mixture,
)
from errors import ConfigError
from literals import (
    APP_NAME,
    BENCH_COLUMNS,
    BENCH_PRESETS,
    CSV_FLOAT_FORMAT,
    DEMO_DENSITY_COLUMNS,
    DEMO_MARGINAL_COLUMNS,
    DEMO_PEAK_COLUMNS,
    DIAG_HISTOGRAM_COLUMNS,
    DIAG_NORM_COLUMNS,
    DIAG_POOLING_COLUMNS,
    EVAL_COLUMNS,
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    EXIT_RUNTIME_ERROR,
    EXPERIMENT_SCHEMA,
    LOG_LEVELS,
    LOSS_COLUMNS,
    MANIFEST_FILE,
    MIN_SHAPE_POINTS,
    MIXTURE_ALIASES,
    MIXTURE_PRESETS,
    MODEL_PRESETS,
    NORMAL_NEIGHBORS,
    OUTPUT_ROOT_ENV,
    SHAPE_CLASSES,
    STATE_FILE,
    SUMMARY_FILE,
    SUMMARY_TEMPLATE,
    SWEEP_AXES,
    SWEEP_COLUMNS,
    THRESHOLD_COLUMNS,
    VERSION,
)
from log import configure_logging, log_command
from pooling import (
    PoolConfig,
    histogram_counts,
    pool_forward,
    pool_timing_bench,
)
from state import State
from utils import (
    atomic_write,
    config_hash,
    derive_seed,
    handle_command_error,
    ordered_map,
    render,
    validate_keys,
    write_csv,
)

logger = logging.getLogger(__name__)

DEFAULTS_PATH = Path(__file__).resolve().parent.parent / "config.yaml"
# Keys that only affect where and how verbosely a run happens.
_UNHASHED_KEYS = ("output-dir", "log-level", "workers")
_UNTRAINED_KEYS = ("workers", "log-every")


def _merge(base, override):
    """Merge two config mappings; nested dicts merge key by key.

    Args:
        base: default values.
        override: user values.

    Returns:
        merged dictionary.
    """
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _read_yaml(path):
    """Load a YAML mapping.

    Raises:
        ConfigError: in case the file is not a YAML mapping.
    """
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = yaml.safe_load(handle) or {}
    except yaml.YAMLError as err:
        logger.debug(f"Incorrectly formatted config {path}: {err}")
        raise ConfigError("config", f"invalid YAML in {path}") from err
    if not isinstance(data, dict):
        raise ConfigError("config", f"{path} is not a mapping")
    return data


def _check_levels(name, levels, low, high, high_open=False):
    """Validate a list of ascending levels inside [low, high].

    Raises:
        ConfigError: in case of an unsorted or out of range level.
    """
    if list(levels) != sorted(levels):
        raise ConfigError(name, f"levels must be ascending: {levels}")
    for level in levels:
        above = level >= high if high_open else level > high
        if level < low or above:
            raise ConfigError(name, f"level {level} out of range")


@dataclass
class DatasetSpec:
    """Synthetic dataset settings."""

    classes: list
    points: int
    train_per_class: int
    test_per_class: int
    seed: int
    scale_jitter: float
    normals: bool


@dataclass
class ModelSpec:
    """Classifier architecture settings."""

    mlp_widths: list
    feature_dim: int
    fc_widths: list
    seed: int


@dataclass
class ExperimentConfig:
    """A validated experiment configuration.

    Attrs:
        raw: the merged configuration mapping.
        output_dir: root of every written file.
        log_level: harness log level.
        workers: thread count of the worker pools.
        dataset: DatasetSpec.
        model: ModelSpec.
        operators: pooling operators with one model each.
        pooling: base PoolConfig; the operator is set per model.
        train: TrainConfig.
        hash: sha256 of the configuration, output location excluded.
    """

    raw: dict
    output_dir: Path
    log_level: str
    workers: int
    dataset: DatasetSpec
    model: ModelSpec
    operators: list
    pooling: PoolConfig
    train: TrainConfig
    hash: str

    def pool_config(self, operator):
        """PoolConfig of the model trained with an operator."""
        return self.pooling.replace(operator=operator)

    @property
    def seeds(self):
        """Seeds recorded in report provenance."""
        return (
            f"dataset={self.dataset.seed};model={self.model.seed};"
            f"train={self.train.seed};pool={self.pooling.seed}"
        )


def load_config(path=None, output_dir=None, log_level=None):
    """Read, merge and validate an experiment config.

    Args:
        path: optional user config file merged over the defaults.
        output_dir: optional override of output-dir.
        log_level: optional override of log-level.

    Returns:
        ExperimentConfig.

    Raises:
        ConfigError: in case the configuration is invalid.
    """
    user = _read_yaml(path) if path else {}
    validate_keys(user, EXPERIMENT_SCHEMA)
    raw = _merge(_read_yaml(DEFAULTS_PATH), user)

    preset = MODEL_PRESETS[raw["model"].get("preset", "desk")]
    user_model = user.get("model", {})
    for key in ("mlp-widths", "feature-dim"):
        if key not in user_model:
            raw["model"][key] = preset[key]
    if "bins" not in user.get("pooling", {}):
        raw["pooling"]["bins"] = preset["bins"]

    if log_level:
        raw["log-level"] = log_level
    if os.environ.get(OUTPUT_ROOT_ENV):
        raw["output-dir"] = os.environ[OUTPUT_ROOT_ENV]
    if output_dir:
        raw["output-dir"] = str(output_dir)
    validate_keys(raw, EXPERIMENT_SCHEMA)

    if raw["log-level"].lower() not in LOG_LEVELS:
        raise ConfigError("log-level", f"invalid {raw['log-level']!r}")

    ds = raw["dataset"]
    for name in ds["classes"]:
        if name not in SHAPE_CLASSES:
            raise ConfigError("dataset.classes", f"unknown class {name!r}")
    if len(ds["classes"]) < 2 or len(set(ds["classes"])) != len(
        ds["classes"]
    ):
        raise ConfigError("dataset.classes", "need two or more classes")
    if ds["points"] < MIN_SHAPE_POINTS:
        raise ConfigError("dataset.points", f"must be >= {MIN_SHAPE_POINTS}")
    for key in ("train-per-class", "test-per-class"):
        if ds[key] < 1:
            raise ConfigError(f"dataset.{key}", "must be >= 1")

    sweeps = raw["sweeps"]
    _check_levels("sweeps.outliers", sweeps["outliers"], 0.0, 1.0)
    _check_levels("sweeps.noise", sweeps["noise"], 0.0, float("inf"))
    _check_levels("sweeps.dropout", sweeps["dropout"], 0.0, 1.0, True)
    _check_levels("sweeps.clustered", sweeps["clustered"], 0, float("inf"))
    thresholds = raw["threshold-sweep"]["thresholds"]
    _check_levels("threshold-sweep.thresholds", thresholds, 0, float("inf"))
    if thresholds and thresholds[0] <= 0:
        raise ConfigError("threshold-sweep.thresholds", "must be positive")
    if not raw["operators"]:
        raise ConfigError("operators", "at least one operator is required")

    pooling = dict(raw["pooling"], operator=raw["operators"][0])
    try:
        pool = PoolConfig.from_dict(pooling)
    except ConfigError as err:
        raise ConfigError(f"pooling.{err.field}", err.message) from err
    try:
        train_config = TrainConfig.from_dict(raw["train"])
    except ConfigError as err:
        raise ConfigError(f"train.{err.field}", err.message) from err

    hashed = {k: v for k, v in raw.items() if k not in _UNHASHED_KEYS}
    return ExperimentConfig(
        raw=raw,
        output_dir=Path(raw["output-dir"]),
        log_level=raw["log-level"].lower(),
        workers=int(raw["workers"]),
        dataset=DatasetSpec(
            classes=list(ds["classes"]),
            points=int(ds["points"]),
            train_per_class=int(ds["train-per-class"]),
            test_per_class=int(ds["test-per-class"]),
            seed=int(ds["seed"]),
            scale_jitter=float(ds["scale-jitter"]),
            normals=bool(ds["normals"]),
        ),
        model=ModelSpec(
            mlp_widths=list(raw["model"]["mlp-widths"]),
            feature_dim=int(raw["model"]["feature-dim"]),
            fc_widths=list(raw["model"]["fc-widths"]),
            seed=int(raw["model"]["seed"]),
        ),
        operators=list(raw["operators"]),
        pooling=pool,
        train=train_config,
        hash=config_hash(hashed),
    )


def _with_normals(cloud):
    """Recompute normals of a cloud from its (possibly augmented) points."""
    return estimate_normals(cloud, k=min(NORMAL_NEIGHBORS, len(cloud)))


class BenchHarness:
    """Runs the experiment commands for one configuration."""

    def __init__(self, config):
        """Construct.

        Args:
            config: ExperimentConfig.
        """
        self.config = config
        self.out = config.output_dir
        self.state = State(self.out / STATE_FILE)
        self._splits = {}

    @property
    def provenance(self):
        """Comment lines written at the top of every CSV."""
        return {"config-hash": self.config.hash, "seed": self.config.seeds}

    def _summarize(self, command, lines, outputs):
        """Render, write and log the summary of a command.

        Args:
            command: command name.
            lines: human readable result lines.
            outputs: written files.
        """
        text = render(
            SUMMARY_TEMPLATE,
            {
                "app": APP_NAME,
                "version": VERSION,
                "command": command,
                "config_hash": self.config.hash,
                "lines": lines,
                "outputs": [str(p) for p in outputs],
            },
        )
        atomic_write(self.out / SUMMARY_FILE, text)
        logger.info(text.rstrip())

    def _split_seed(self, split):
        return derive_seed(self.config.dataset.seed, split)

    def _build_split(self, split):
        """Generate one split in memory."""
        ds = self.config.dataset
        per_class = ds.train_per_class if split == "train" else (
            ds.test_per_class
        )
        clouds = build_dataset(
            ds.classes,
            per_class,
            ds.points,
            self._split_seed(split),
            ds.scale_jitter,
        )
        if ds.normals:
            clouds = ordered_map(_with_normals, clouds, self.config.workers)
        return clouds

    def _dataset_key(self):
        return config_hash(self.config.raw["dataset"])

    def split(self, split):
        """Clouds of a split, read from disk when gen-data wrote them.

        Args:
            split: train or test.

        Returns:
            list of PointCloud.
        """
        if split in self._splits:
            return self._splits[split]
        manifest_path = self.out / "data" / MANIFEST_FILE
        clouds = None
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
            if manifest.get("dataset-hash") == self._dataset_key():
                clouds = [
                    load_xyz(
                        self.out / "data" / entry["file"],
                        normalize=False,
                        label=entry["label"],
                    )
                    for entry in manifest["files"]
                    if entry["split"] == split
                ]
                logger.debug(f"read {len(clouds)} {split} clouds from disk")
        if clouds is None:
            clouds = self._build_split(split)
        self._splits[split] = clouds
        return clouds

    @handle_command_error
    @log_command(logger)
    def cmd_gen_data(self):
        """Write the synthetic dataset as XYZ files plus a manifest.

        Returns:
            path of the manifest.
        """
        ds = self.config.dataset
        root = self.out / "data"
        entries = []
        for split in ("train", "test"):
            clouds = self._build_split(split)
            self._splits[split] = clouds
            per_class = len(clouds) // len(ds.classes)
            for position, cloud in enumerate(clouds):
                name = ds.classes[cloud.label]
                index = position % per_class
                rel = f"{split}/{name}_{index:04d}.xyz"
                save_xyz(cloud, root / rel)
                entries.append(
                    {
                        "file": rel,
                        "split": split,
                        "label": cloud.label,
                        "class": name,
                        "seed": derive_seed(
                            self._split_seed(split), name, index
                        ),
                        "augmentation": None,
                    }
                )
        manifest = {
            "app": APP_NAME,
            "version": VERSION,
            "config-hash": self.config.hash,
            "dataset-hash": self._dataset_key(),
            "classes": ds.classes,
            "files": entries,
        }
        path = root / MANIFEST_FILE
        atomic_write(path, json.dumps(manifest, indent=2, sort_keys=True))
        self.state.manifest = str(path)
        self.state.config_hash = self.config.hash
        self._summarize(
            "gen-data",
            [f"{len(entries)} clouds of {ds.points} points"],
            [path],
        )
        return path

    def _model_path(self, operator):
        return self.out / "models" / f"{operator}.npz"

    def _training_hash(self, operator):
        """Hash of every setting that shapes the weights of one model."""
        raw = self.config.raw
        train = {
            k: v for k, v in raw["train"].items() if k not in _UNTRAINED_KEYS
        }
        return config_hash(
            {
                "dataset": raw["dataset"],
                "model": raw["model"],
                "pool": self.config.pool_config(operator).to_dict(),
                "train": train,
            }
        )

    def _train_one(self, operator):
        """Train, save and report the model of one operator."""
        arch = self.config.model
        ds = self.config.dataset
        model = ClassifierModel.create(
            input_dim=6 if ds.normals else 3,
            class_count=len(ds.classes),
            pool=self.config.pool_config(operator),
            mlp_widths=arch.mlp_widths,
            feature_dim=arch.feature_dim,
            fc_widths=arch.fc_widths,
            seed=arch.seed,
        )
        model.training_hash = self._training_hash(operator)
        logger.info(f"training the {operator} model")
        result = train(model, self.split("train"), self.config.train)
        path = self._model_path(operator)
        save(result.model, path)
        write_csv(
            self.out / "train" / f"{operator}_loss.csv",
            LOSS_COLUMNS,
            [(s.epoch, s.loss, s.accuracy) for s in result.curve],
            self.provenance,
        )
        return path

    def model(self, operator):
        """Trained model of an operator, trained first when missing or stale.

        A model file written under other dataset, model, pooling or
        training settings is retrained.

        Args:
            operator: pooling operator.

        Returns:
            ClassifierModel.
        """
        path = self._model_path(operator)
        if not path.exists():
            logger.info(f"no {operator} model at {path}; training it")
            self._train_one(operator)
            return load(path, operator=operator)
        model = load(path, operator=operator)
        if model.training_hash != self._training_hash(operator):
            logger.warning(
                f"{path} was trained under other settings; retraining it"
            )
            self._train_one(operator)
            model = load(path, operator=operator)
        return model

    @handle_command_error
    @log_command(logger)
    def cmd_train(self, operators=None):
        """Train one model per pooling operator on clean data.

        Args:
            operators: optional subset of the configured operators.

        Returns:
            mapping of operator to model file.
        """
        operators = operators or self.config.operators
        self.split("train")
        paths = ordered_map(self._train_one, operators, self.config.workers)
        models = dict(self.state.models or {})
        models.update({op: str(p) for op, p in zip(operators, paths)})
        self.state.models = models
        self.state.config_hash = self.config.hash
        self._summarize(
            "train",
            [f"{op}: {p}" for op, p in zip(operators, paths)],
            paths,
        )
        return dict(zip(operators, paths))

    def _evaluation_row(self, evaluation):
        return [
            evaluation.accuracy,
            evaluation.correct,
            evaluation.total,
            evaluation.per_class_accuracy,
        ]

    @handle_command_error
    @log_command(logger)
    def cmd_eval(self):
        """Evaluate every operator's model on the clean test split.

        Returns:
            path of the report.
        """
        test = self.split("test")
        models = [self.model(op) for op in self.config.operators]
        evaluations = ordered_map(
            lambda m: evaluate(m, test), models, self.config.workers
        )
        rows = [
            [op, *self._evaluation_row(e), e.confusion.ravel().tolist()]
            for op, e in zip(self.config.operators, evaluations)
        ]
        path = write_csv(
            self.out / "eval.csv", EVAL_COLUMNS, rows, self.provenance
        )
        self._summarize(
            "eval",
            [
                f"{row[0]}: accuracy {format(row[1], CSV_FLOAT_FORMAT)}"
                for row in rows
            ],
            [path],
        )
        return path

    def augment(self, clouds, spec_for):
        """Augment clouds with per-cloud seeds.

        Args:
            clouds: list of PointCloud.
            spec_for: callable mapping a cloud index to an AugmentationSpec.

        Returns:
            list of augmented PointCloud.
        """
        normals = self.config.dataset.normals

        def one(index):
            cloud = spec_for(index).apply(clouds[index])
            # Perturbed points get normals of their own neighborhoods.
            if normals and cloud is not clouds[index]:
                cloud = _with_normals(cloud)
            return cloud

        return ordered_map(one, range(len(clouds)), self.config.workers)

    def _sweep_spec(self, axis, level, index):
        """AugmentationSpec of one test cloud at one sweep level."""
        seed = derive_seed(self.config.dataset.seed, axis, level, index)
        if axis == "outliers":
            return AugmentationSpec(outlier_ratio=level, seed=seed)
        if axis == "noise":
            return AugmentationSpec(noise_sigma=level, seed=seed)
        if axis == "dropout":
            return AugmentationSpec(dropout_ratio=level, seed=seed)
        per_surface = clustered_counts(
            level, self.config.raw["clustered-convention"]
        )
        clustered = (
            {"surface_count": 2, "points_per_surface": per_surface}
            if per_surface
            else None
        )
        return AugmentationSpec(clustered=clustered, seed=seed)

    @handle_command_error
    @log_command(logger)
    def cmd_sweep(self, axis):
        """Accuracy of every operator across the levels of one axis.

        Args:
            axis: outliers, noise, dropout or clustered.

        Returns:
            path of the report.

        Raises:
            ConfigError: in case of an unknown axis.
        """
        if axis not in SWEEP_AXES:
            raise ConfigError("axis", f"unknown sweep axis {axis!r}")
        levels = self.config.raw["sweeps"][axis]
        test = self.split("test")
        models = {op: self.model(op) for op in self.config.operators}
        augmented = [
            self.augment(
                test, lambda i, lv=level: self._sweep_spec(axis, lv, i)
            )
            for level in levels
        ]

        tasks = [
            (op, li)
            for op in self.config.operators
            for li in range(len(levels))
        ]

        def run(task):
            op, li = task
            logger.debug(f"evaluating {op} at {axis}={levels[li]}")
            return evaluate(models[op], augmented[li])

        evaluations = ordered_map(run, tasks, self.config.workers)
        rows = [
            [axis, levels[li], op, *self._evaluation_row(e)]
            for (op, li), e in zip(tasks, evaluations)
        ]
        path = write_csv(
            self.out / f"sweep_{axis}.csv",
            SWEEP_COLUMNS,
            rows,
            self.provenance,
        )
        self._summarize(
            f"sweep {axis}",
            [
                f"{row[2]} @ {row[1]}: {format(row[3], CSV_FLOAT_FORMAT)}"
                for row in rows
            ],
            [path],
        )
        return path

    @handle_command_error
    @log_command(logger)
    def cmd_threshold_sweep(self, thresholds=None):
        """Re-evaluate the histogram model across bin half-widths.

        No retraining happens; the bin count follows the threshold as
        round((hi - lo) / (2 * threshold)), at least 2. The best threshold
        maximizes the mean of the clean, outlier and noise accuracies.

        Args:
            thresholds: optional list overriding the configured ones.

        Returns:
            path of the report.
        """
        section = self.config.raw["threshold-sweep"]
        thresholds = thresholds or section["thresholds"]
        if any(t <= 0 for t in thresholds):
            raise ConfigError("thresholds", "must be positive")
        test = self.split("test")
        base = self.model("histogram")
        seed = self.config.dataset.seed
        noisy = self.augment(
            test,
            lambda i: AugmentationSpec(
                noise_sigma=section["noise-sigma"],
                seed=derive_seed(seed, "threshold", "noise", i),
            ),
        )
        outliers = self.augment(
            test,
            lambda i: AugmentationSpec(
                outlier_ratio=section["outlier-ratio"],
                seed=derive_seed(seed, "threshold", "outliers", i),
            ),
        )
        lo, hi = self.config.pooling.value_range

        def run(threshold):
            bins = max(2, int(round((hi - lo) / (2 * threshold))))
            pool = base.pool.replace(operator="histogram", bins=bins)
            model = with_pool(base, pool)
            return [
                threshold,
                bins,
                pool.half_width,
                evaluate(model, test).accuracy,
                evaluate(model, outliers).accuracy,
                evaluate(model, noisy).accuracy,
            ]

        rows = ordered_map(run, thresholds, self.config.workers)
        scores = [np.mean(row[3:6]) for row in rows]
        best = int(np.argmax(scores))
        rows = [row + [i == best] for i, row in enumerate(rows)]
        path = write_csv(
            self.out / "threshold_sweep.csv",
            THRESHOLD_COLUMNS,
            rows,
            self.provenance,
        )
        self._summarize(
            "threshold-sweep",
            [f"best threshold: {rows[best][0]} ({rows[best][1]} bins)"],
            [path],
        )
        return path

    @handle_command_error
    @log_command(logger)
    def cmd_bench(self, presets=None):
        """Time every operator on the benchmark shapes.

        Timing rows vary from run to run; every other report is
        reproducible byte for byte.

        Args:
            presets: optional subset of preset names.

        Returns:
            path of the report.
        """
        section = self.config.raw["bench"]
        presets = presets or section["presets"]
        for name in presets:
            if name not in BENCH_PRESETS:
                raise ConfigError("bench.presets", f"unknown preset {name!r}")
        rows = []
        for name in presets:
            shape = BENCH_PRESETS[name]
            stats = {}
            for op in section["operators"]:
                stats[op] = pool_timing_bench(
                    shape["points"],
                    shape["features"],
                    section["batch"],
                    self.config.pool_config(op),
                    repeats=section["repeats"],
                    seed=self.config.pooling.seed,
                )
            reference = stats.get("max")
            for op, timing in stats.items():
                ratio = (
                    timing.median / reference.median
                    if reference and reference.median > 0
                    else ""
                )
                rows.append(
                    [
                        name,
                        shape["points"],
                        shape["features"],
                        section["batch"],
                        op,
                        timing.repeats,
                        timing.mean,
                        timing.median,
                        ratio,
                    ]
                )
        path = write_csv(
            self.out / "bench.csv", BENCH_COLUMNS, rows, self.provenance
        )
        self._summarize(
            "bench",
            [f"{r[0]} {r[4]}: median {r[7]:.6f}s" for r in rows],
            [path],
        )
        return path

    @handle_command_error
    @log_command(logger)
    def cmd_diag(self, outlier_ratio=None):
        """Compare feature histograms and pooled outputs, clean vs noisy.

        The feature maps of one test cloud, clean and with uniform outliers,
        come from a single model; every configured operator then pools the
        same maps over a seeded subset of dimensions.

        Args:
            outlier_ratio: optional override of the configured ratio.

        Returns:
            paths of the histogram, pooling and norm reports.
        """
        section = self.config.raw["diag"]
        ratio = section["outlier-ratio"] if outlier_ratio is None else (
            outlier_ratio
        )
        test = self.split("test")
        index = section["cloud-index"]
        if index >= len(test):
            raise ConfigError("diag.cloud-index", f"only {len(test)} clouds")
        model = self.model(section["model"])
        seed = derive_seed(self.config.dataset.seed, "diag", index)
        clean = test[index]
        noisy = add_uniform_outliers(clean, ratio, seed)
        if self.config.dataset.normals and ratio > 0:
            noisy = _with_normals(noisy)
        f_clean = feature_map(model, clean)
        f_noisy = feature_map(model, noisy)

        rng = np.random.default_rng(seed)
        count = min(section["dimensions"], f_clean.shape[1])
        dims = np.sort(rng.choice(f_clean.shape[1], size=count, replace=False))

        lo, hi = self.config.pooling.value_range
        bins = section["bins"]
        edges = np.linspace(lo, hi, bins + 1)
        hist_rows = []
        for d in dims:
            a = histogram_counts(f_clean[:, d], bins, (lo, hi))
            b = histogram_counts(f_noisy[:, d], bins, (lo, hi))
            for k in range(bins):
                hist_rows.append(
                    [int(d), k, edges[k], edges[k + 1], int(a[k]), int(b[k])]
                )

        pool_rows, norm_rows = [], []
        for op in self.config.operators:
            pool = self.config.pool_config(op)
            clean_out = pool_forward(f_clean[:, dims], pool).output
            noisy_out = pool_forward(f_noisy[:, dims], pool).output
            diff = np.abs(noisy_out - clean_out)
            for d, c, n, delta in zip(dims, clean_out, noisy_out, diff):
                pool_rows.append([op, int(d), c, n, delta])
            norm_rows.append([op, count, float(np.linalg.norm(diff))])

        paths = [
            write_csv(
                self.out / "diag_histograms.csv",
                DIAG_HISTOGRAM_COLUMNS,
                hist_rows,
                self.provenance,
            ),
            write_csv(
                self.out / "diag_pooling.csv",
                DIAG_POOLING_COLUMNS,
                pool_rows,
                self.provenance,
            ),
            write_csv(
                self.out / "diag_norms.csv",
                DIAG_NORM_COLUMNS,
                norm_rows,
                self.provenance,
            ),
        ]
        self._summarize(
            "diag",
            [
                f"{r[0]}: l2 difference {format(r[2], CSV_FLOAT_FORMAT)}"
                for r in norm_rows
            ],
            paths,
        )
        return paths

    def mixture(self, source=None):
        """Mixture named by the demo config: a preset or a YAML file.

        Args:
            source: optional override of demo.mixture.

        Returns:
            Mixture2D.
        """
        source = source or self.config.raw["demo"]["mixture"]
        if source in MIXTURE_PRESETS or source in MIXTURE_ALIASES:
            return Mixture2D.preset(source)
        if not Path(source).is_file():
            raise ConfigError("demo.mixture", f"no preset or file {source!r}")
        return Mixture2D.from_dict(_read_yaml(source))

    @handle_command_error
    @log_command(logger)
    def cmd_demo_mmap(self, mixture=None):
        """Density grid, marginals and peak estimates of a 2D mixture.

        Args:
            mixture: optional preset name or mixture file.

        Returns:
            paths of the density, marginal and peak reports.
        """
        section = self.config.raw["demo"]
        mix = self.mixture(mixture)
        step = section["grid-step"]
        samples = sample_mixture(mix, section["samples"], section["seed"])

        joint = joint_peak(mix)
        marginal = np.array([marginal_peak(mix, axis) for axis in (0, 1)])
        mmap = mmap_estimate(samples, section["bins"], tuple(section["range"]))
        mass = grid_mass(mix, step=min(step, 0.02))
        entropy = sample_entropy(samples, mixture=mix)

        xs, ys, grid = density_grid(mix, step)
        density_rows = [
            [x, y, grid[i, j]]
            for i, x in enumerate(xs)
            for j, y in enumerate(ys)
        ]
        marginal_rows = [
            [axis, x, float(marginal_density(mix, axis, x))]
            for axis, axis_xs in ((0, xs), (1, ys))
            for x in axis_xs
        ]
        peak_rows = [
            ["joint", *joint.location, joint.value, joint.unique],
            ["marginal", *marginal, density_at(mix, marginal), True],
            ["mmap", *mmap, density_at(mix, mmap), True],
        ]
        provenance = dict(self.provenance, **{"grid-mass": mass})
        paths = [
            write_csv(
                self.out / "demo_density.csv",
                DEMO_DENSITY_COLUMNS,
                density_rows,
                provenance,
            ),
            write_csv(
                self.out / "demo_marginals.csv",
                DEMO_MARGINAL_COLUMNS,
                marginal_rows,
                provenance,
            ),
            write_csv(
                self.out / "demo_peaks.csv",
                DEMO_PEAK_COLUMNS,
                peak_rows,
                provenance,
            ),
        ]
        self._summarize(
            "demo-mmap",
            [
                f"joint peak: {joint.location.tolist()}",
                f"marginal peaks: {marginal.tolist()}",
                f"mmap estimate: {mmap.tolist()}",
                f"grid mass: {format(mass, CSV_FLOAT_FORMAT)}",
                f"sample entropy: {format(entropy, CSV_FLOAT_FORMAT)}",
            ],
            paths,
        )
        return paths


def _parser():
    """Build the argument parser."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file (YAML)")
    common.add_argument("--output-dir", help="override output-dir")
    common.add_argument(
        "--log-level", choices=LOG_LEVELS, help="override log-level"
    )

    parser = argparse.ArgumentParser(
        prog=APP_NAME, description="Robust mode pooling experiments."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write the dataset")
    train_cmd = sub.add_parser("train", parents=[common], help="train models")
    train_cmd.add_argument("--operators", nargs="+")
    sub.add_parser("eval", parents=[common], help="evaluate on clean data")
    sweep = sub.add_parser("sweep", parents=[common], help="robustness sweep")
    sweep.add_argument("--axis", choices=SWEEP_AXES, action="append")
    threshold = sub.add_parser(
        "threshold-sweep", parents=[common], help="bin half-width sweep"
    )
    threshold.add_argument("--thresholds", nargs="+", type=float)
    bench = sub.add_parser("bench", parents=[common], help="time pooling")
    bench.add_argument("--presets", nargs="+")
    diag = sub.add_parser("diag", parents=[common], help="feature histograms")
    diag.add_argument("--outlier-ratio", type=float)
    demo = sub.add_parser("demo-mmap", parents=[common], help="2D MMAP demo")
    demo.add_argument("--mixture")
    return parser


def run(args):
    """Execute a parsed command line.

    Args:
        args: argparse namespace.

    Returns:
        the value returned by the command.
    """
    config = load_config(args.config, args.output_dir, args.log_level)
    configure_logging(config.log_level)
    harness = BenchHarness(config)
    if args.command == "gen-data":
        return harness.cmd_gen_data()
    if args.command == "train":
        return harness.cmd_train(args.operators)
    if args.command == "eval":
        return harness.cmd_eval()
    if args.command == "sweep":
        axes = args.axis or list(SWEEP_AXES)
        return [harness.cmd_sweep(axis) for axis in axes]
    if args.command == "threshold-sweep":
        return harness.cmd_threshold_sweep(args.thresholds)
    if args.command == "bench":
        return harness.cmd_bench(args.presets)
    if args.command == "diag":
        return harness.cmd_diag(args.outlier_ratio)
    return harness.cmd_demo_mmap(args.mixture)


def main(argv=None):
    """Command line entry point.

    Args:
        argv: arguments without the program name.

    Returns:
        exit code: 0 on success, 1 for configuration errors, 2 otherwise.
    """
    args = _parser().parse_args(argv)
    try:
        run(args)
    except ConfigError as err:
        print(f"{APP_NAME}: {err}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except Exception as err:  # pylint: disable=broad-except
        print(f"{APP_NAME}: {err}", file=sys.stderr)
        return EXIT_RUNTIME_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
