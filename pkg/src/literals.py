#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Literals used by the modepool library and harness."""

APP_NAME = "modepool"
VERSION = "0.1.0"
MODEL_FORMAT = "modepool-classifier"
MODEL_FORMAT_VERSION = 1

# Pooling literals
POOL_OPERATORS = (
    "max",
    "mean",
    "median",
    "histogram",
    "ransac",
    "m_estimator",
)
GRAD_MODES = ("winner_only", "inlier_mean")
HISTOGRAM_VALUES = ("member_mean", "bin_center")
RANSAC_VALUES = ("hypothesis", "inlier_mean")
RHO_KINDS = ("truncated_quadratic", "welsch")
M_GRADS = ("fixed_weight", "exact")

DEFAULT_BINS = 70
DEFAULT_RANGE = (-10.0, 10.0)
# Half-width of a default histogram bin, 20 / 140.
DEFAULT_EPSILON = 0.143
DEFAULT_HYPOTHESIS_FRACTION = 0.5
DEFAULT_TAU = 0.143
DEFAULT_MAX_ITERS = 50
DEFAULT_TOL = 1e-6

# Kernels switch to the compiled parallel loops when this is truthy.
NUMBA_PARALLEL_ENV = "MODEPOOL_NUMBA_PARALLEL"
# Feature columns handled by one compiled-kernel task.
KERNEL_COLUMN_BLOCK = 64

BENCH_PRESETS = {
    "1024x2048": {"points": 2048, "features": 1024},
    "512x512": {"points": 512, "features": 512},
    "1x1": {"points": 1, "features": 1},
}
BENCH_MIN_REPEATS = 20

# Data literals
SHAPE_CLASSES = ("sphere", "box", "cylinder", "cone", "torus")
MIN_SHAPE_POINTS = 8
BOX_HALF_EXTENTS = (0.5, 0.35, 0.25)
TORUS_RADII = (0.35, 0.15)
NORMAL_NEIGHBORS = 20
CLUSTER_OFFSET = 0.1
CLUSTER_JITTER = 0.01
CLUSTERED_CONVENTIONS = ("total", "per-surface")

# Network literals
DEFAULT_MLP_WIDTHS = (64, 128)
DEFAULT_FEATURE_DIM = 128
DEFAULT_FC_WIDTHS = (64,)
DEFAULT_LEARNING_RATE = 1e-4
OPTIMIZERS = ("sgd", "adam")
MODEL_PRESETS = {
    "desk": {"mlp-widths": [64, 128], "feature-dim": 128, "bins": 70},
    "modelnet": {"mlp-widths": [64, 128], "feature-dim": 1024, "bins": 70},
    "scanobjectnn": {"mlp-widths": [128], "feature-dim": 4048, "bins": 200},
}

# Harness literals
OUTPUT_ROOT_ENV = "MODEPOOL_OUTPUT_ROOT"
STATE_FILE = "state.json"
MANIFEST_FILE = "manifest.json"
SUMMARY_TEMPLATE = "summary.jinja"
SUMMARY_FILE = "summary.txt"
LOG_LEVELS = ("info", "debug", "warn", "error")
SWEEP_AXES = ("outliers", "noise", "dropout", "clustered")
CSV_FLOAT_FORMAT = ".10g"

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_RUNTIME_ERROR = 2

SWEEP_COLUMNS = (
    "axis",
    "level",
    "operator",
    "accuracy",
    "correct",
    "total",
    "per_class_accuracy",
)
EVAL_COLUMNS = (
    "operator",
    "accuracy",
    "correct",
    "total",
    "per_class_accuracy",
    "confusion",
)
THRESHOLD_COLUMNS = (
    "threshold",
    "bins",
    "half_width",
    "clean_accuracy",
    "outlier_accuracy",
    "noise_accuracy",
    "best",
)
BENCH_COLUMNS = (
    "preset",
    "points",
    "features",
    "batch",
    "operator",
    "repeats",
    "mean_s",
    "median_s",
    "ratio_vs_max",
)
LOSS_COLUMNS = ("epoch", "loss", "accuracy")

POOL_SCHEMA = {
    "operator": {"type": "string", "allowed": list(POOL_OPERATORS)},
    "bins": {"type": "integer"},
    "range": {
        "type": "list",
        "minlength": 2,
        "maxlength": 2,
        "schema": {"type": "number"},
    },
    "epsilon": {"type": "number"},
    "hypothesis-fraction": {"type": "number"},
    "rho": {"type": "string", "allowed": list(RHO_KINDS)},
    "tau": {"type": "number"},
    "max-iters": {"type": "integer"},
    "tol": {"type": "number"},
    "grad-mode": {"type": "string", "allowed": list(GRAD_MODES)},
    "histogram-value": {"type": "string", "allowed": list(HISTOGRAM_VALUES)},
    "ransac-value": {"type": "string", "allowed": list(RANSAC_VALUES)},
    "m-grad": {"type": "string", "allowed": list(M_GRADS)},
    "seed": {"type": "integer", "min": 0},
}

TRAIN_SCHEMA = {
    "learning-rate": {"type": "number"},
    "epochs": {"type": "integer"},
    "batch-size": {"type": "integer"},
    "optimizer": {"type": "string", "allowed": list(OPTIMIZERS)},
    "seed": {"type": "integer", "min": 0},
    "rotate": {"type": "boolean"},
    "workers": {"type": "integer"},
    "log-every": {"type": "integer"},
}

_LEVELS = {"type": "list", "schema": {"type": "number"}}

EXPERIMENT_SCHEMA = {
    "log-level": {"type": "string"},
    "output-dir": {"type": "string"},
    "workers": {"type": "integer", "min": 1},
    "dataset": {
        "type": "dict",
        "schema": {
            "classes": {"type": "list", "schema": {"type": "string"}},
            "points": {"type": "integer"},
            "train-per-class": {"type": "integer"},
            "test-per-class": {"type": "integer"},
            "seed": {"type": "integer", "min": 0},
            "scale-jitter": {"type": "number", "min": 0, "max": 0.9},
            "normals": {"type": "boolean"},
        },
    },
    "model": {
        "type": "dict",
        "schema": {
            "preset": {"type": "string", "allowed": list(MODEL_PRESETS)},
            "mlp-widths": {"type": "list", "schema": {"type": "integer"}},
            "feature-dim": {"type": "integer"},
            "fc-widths": {"type": "list", "schema": {"type": "integer"}},
            "seed": {"type": "integer", "min": 0},
        },
    },
    "operators": {
        "type": "list",
        "schema": {"type": "string", "allowed": list(POOL_OPERATORS)},
    },
    "pooling": {"type": "dict", "schema": POOL_SCHEMA},
    "train": {"type": "dict", "schema": TRAIN_SCHEMA},
    "sweeps": {
        "type": "dict",
        "schema": {axis: _LEVELS for axis in SWEEP_AXES},
    },
    "clustered-convention": {
        "type": "string",
        "allowed": list(CLUSTERED_CONVENTIONS),
    },
    "threshold-sweep": {
        "type": "dict",
        "schema": {
            "thresholds": _LEVELS,
            "outlier-ratio": {"type": "number"},
            "noise-sigma": {"type": "number"},
        },
    },
    "bench": {
        "type": "dict",
        "schema": {
            "presets": {
                "type": "list",
                "schema": {"type": "string", "allowed": list(BENCH_PRESETS)},
            },
            "batch": {"type": "integer"},
            "repeats": {"type": "integer"},
            "operators": {
                "type": "list",
                "schema": {"type": "string", "allowed": list(POOL_OPERATORS)},
            },
        },
    },
    "diag": {
        "type": "dict",
        "schema": {
            "model": {"type": "string", "allowed": list(POOL_OPERATORS)},
            "dimensions": {"type": "integer"},
            "bins": {"type": "integer"},
            "outlier-ratio": {"type": "number"},
            "cloud-index": {"type": "integer", "min": 0},
        },
    },
    "demo": {
        "type": "dict",
        "schema": {
            "mixture": {"type": "string"},
            "samples": {"type": "integer"},
            "bins": {"type": "integer"},
            "range": {
                "type": "list",
                "minlength": 2,
                "maxlength": 2,
                "schema": {"type": "number"},
            },
            "grid-step": {"type": "number"},
            "seed": {"type": "integer", "min": 0},
        },
    },
}

MIXTURE_SCHEMA = {
    "components": {
        "type": "list",
        "schema": {
            "type": "dict",
            "schema": {
                "weight": {"type": "number", "required": True},
                "mean": {
                    "type": "list",
                    "minlength": 2,
                    "maxlength": 2,
                    "required": True,
                },
                "cov": {"type": "list", "required": True},
            },
        },
    },
    "uniform": {
        "type": "dict",
        "nullable": True,
        "schema": {
            "weight": {"type": "number", "required": True},
            "low": {"type": "list", "minlength": 2, "maxlength": 2},
            "high": {"type": "list", "minlength": 2, "maxlength": 2},
        },
    },
}

CLUTTER_MIXTURE = {
    "components": [
        {"weight": 0.2, "mean": [0.0, 0.0], "cov": [[1.0, 0.5], [0.5, 1.0]]},
    ],
    "uniform": {"weight": 0.8, "low": [-5.0, -5.0], "high": [5.0, 5.0]},
}
FOUR_PEAK_MIXTURE = {
    "components": [
        {"weight": 0.25, "mean": [0.0, 0.0], "cov": [[1.0, 0.5], [0.5, 1.0]]},
        {"weight": 0.25, "mean": [5.0, 4.0], "cov": [[5.0, 0.5], [0.5, 5.0]]},
        {"weight": 0.25, "mean": [-3.0, 5.0], "cov": [[5.0, 0.5], [0.5, 5.0]]},
        {"weight": 0.25, "mean": [-4.0, 7.0], "cov": [[5.0, 0.5], [0.5, 5.0]]},
    ],
    "uniform": None,
}
MIXTURE_PRESETS = {"clutter": CLUTTER_MIXTURE, "four-peaks": FOUR_PEAK_MIXTURE}
MIXTURE_ALIASES = {"fig3": "clutter", "fig4": "four-peaks"}
DEFAULT_GRID_RESOLUTION = 1e-3
DIAG_HISTOGRAM_COLUMNS = (
    "dimension",
    "bin",
    "low",
    "high",
    "clean_count",
    "augmented_count",
)
DIAG_POOLING_COLUMNS = (
    "operator",
    "dimension",
    "clean",
    "augmented",
    "abs_difference",
)
DIAG_NORM_COLUMNS = ("operator", "dimensions", "l2_difference")
DEMO_DENSITY_COLUMNS = ("x", "y", "density")
DEMO_MARGINAL_COLUMNS = ("axis", "x", "density")
DEMO_PEAK_COLUMNS = ("estimate", "x", "y", "density", "unique")
