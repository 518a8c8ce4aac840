# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Permutation-invariant point cloud classifier with manual backprop.

A shared ReLU MLP maps every point to a D-dimensional feature, a pooling
operator reduces the N x D feature map to one global feature and a fully
connected head produces the class logits. Training minimizes softmax
cross-entropy.
"""

import copy
import io
import json
import logging
import math
import zipfile
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from data import rotate_z
from errors import (
    ConfigError,
    CorruptModelError,
    ModelConfigMismatchError,
    ModelVersionError,
    NonFiniteInputError,
    ShapeMismatchError,
    StaleCacheError,
    TrainingDivergedError,
)
from literals import (
    DEFAULT_FC_WIDTHS,
    DEFAULT_FEATURE_DIM,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MLP_WIDTHS,
    MODEL_FORMAT,
    MODEL_FORMAT_VERSION,
    OPTIMIZERS,
    VERSION,
)
from pooling import PoolConfig, pool_backward, pool_forward
from utils import atomic_write, ordered_map

logger = logging.getLogger(__name__)


@dataclass
class Layer:
    """Affine layer y = x @ weight + bias."""

    weight: np.ndarray
    bias: np.ndarray


@dataclass
class ClassifierModel:
    """Weights of the pointwise MLP, the pooling config and the head.

    Attrs:
        mlp: pointwise layers from the input dim to the feature dim.
        fc: head layers from the feature dim to the class count.
        pool: pooling configuration.
        revision: bumped on every parameter update.
        training_hash: hash of the settings the weights were trained
            under; None when unknown.
    """

    mlp: List[Layer]
    fc: List[Layer]
    pool: PoolConfig
    revision: int = 0
    training_hash: Optional[str] = None

    @classmethod
    def create(
        cls,
        input_dim,
        class_count,
        pool,
        mlp_widths=DEFAULT_MLP_WIDTHS,
        feature_dim=DEFAULT_FEATURE_DIM,
        fc_widths=DEFAULT_FC_WIDTHS,
        seed=0,
    ):
        """Build a He-initialized model.

        Args:
            input_dim: 3 for xyz, 6 with normals.
            class_count: number of classes.
            pool: PoolConfig.
            mlp_widths: hidden widths of the pointwise MLP.
            feature_dim: width D of the last pointwise layer.
            fc_widths: hidden widths of the head.
            seed: initialization seed.

        Returns:
            ClassifierModel.

        Raises:
            ConfigError: in case a size is not positive.
        """
        sizes = [input_dim, *mlp_widths, feature_dim, *fc_widths, class_count]
        if any(int(s) != s or s < 1 for s in sizes):
            raise ConfigError("model", f"layer sizes must be >= 1: {sizes}")
        if class_count < 2:
            raise ConfigError("classes", "need at least two classes")

        rng = np.random.default_rng(seed)

        def layers(widths):
            return [
                Layer(
                    rng.normal(0.0, math.sqrt(2.0 / n_in), size=(n_in, n_out)),
                    np.zeros(n_out),
                )
                for n_in, n_out in zip(widths[:-1], widths[1:])
            ]

        mlp = layers([input_dim, *mlp_widths, feature_dim])
        fc = layers([feature_dim, *fc_widths, class_count])
        return cls(mlp=mlp, fc=fc, pool=pool)

    @property
    def input_dim(self):
        """Per-point input width."""
        return self.mlp[0].weight.shape[0]

    @property
    def feature_dim(self):
        """Width D of the pooled feature."""
        return self.mlp[-1].weight.shape[1]

    @property
    def class_count(self):
        """Number of logits."""
        return self.fc[-1].weight.shape[1]

    def parameters(self):
        """Every parameter array, in a fixed order.

        Returns:
            list of arrays updated in place by the optimizers.
        """
        params = []
        for layer in [*self.mlp, *self.fc]:
            params.extend([layer.weight, layer.bias])
        return params

    def header(self):
        """Describe the architecture for model files.

        Returns:
            JSON serializable dictionary.
        """
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_FORMAT_VERSION,
            "code-version": VERSION,
            "input-dim": self.input_dim,
            "feature-dim": self.feature_dim,
            "classes": self.class_count,
            "mlp-widths": [layer.weight.shape[1] for layer in self.mlp[:-1]],
            "fc-widths": [layer.weight.shape[1] for layer in self.fc[:-1]],
            "pool": self.pool.to_dict(),
            "training-hash": self.training_hash,
        }


@dataclass
class ForwardCache:
    """Activations kept for the backward pass."""

    revision: int
    activations: List[np.ndarray]
    pooled: object
    head: List[np.ndarray]
    logits: np.ndarray


@dataclass
class Gradients:
    """Loss gradients, laid out like ClassifierModel.parameters()."""

    values: List[np.ndarray]
    loss: float
    probabilities: np.ndarray


@dataclass
class TrainConfig:
    """Training hyperparameters.

    Attrs:
        learning_rate: optimizer step size.
        epochs: passes over the dataset.
        batch_size: clouds per update.
        optimizer: sgd or adam.
        seed: shuffling and augmentation seed.
        rotate: apply a random z rotation to every training cloud.
        workers: threads used within a batch.
        log_every: epochs between progress log lines.
    """

    learning_rate: float = DEFAULT_LEARNING_RATE
    epochs: int = 50
    batch_size: int = 16
    optimizer: str = "adam"
    seed: int = 0
    rotate: bool = True
    workers: int = 1
    log_every: int = 1

    def __post_init__(self):
        """Validate.

        Raises:
            ConfigError: naming the first invalid field.
        """
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError("optimizer", f"unknown {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate", "must be positive")
        for name in ("epochs", "batch_size", "workers", "log_every"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed", "must be unsigned")

    @classmethod
    def from_dict(cls, data):
        """Build from hyphenated config keys.

        Args:
            data: mapping of config values.

        Returns:
            TrainConfig.

        Raises:
            ConfigError: in case of an unknown key.
        """
        names = set(cls.__dataclass_fields__)
        kwargs = {}
        for key, value in data.items():
            name = key.replace("-", "_")
            if name not in names:
                raise ConfigError(key, "unknown training option")
            kwargs[name] = value
        return cls(**kwargs)


@dataclass
class EpochStats:
    """Training progress of one epoch."""

    epoch: int
    loss: float
    accuracy: float


@dataclass
class TrainResult:
    """Trained model and its loss curve."""

    model: ClassifierModel
    curve: List[EpochStats] = field(default_factory=list)


@dataclass
class Evaluation:
    """Classification results on a set of clouds.

    Attrs:
        correct: number of correct predictions.
        total: number of clouds.
        confusion: class_count x class_count counts, rows are true labels.
    """

    correct: int
    total: int
    confusion: np.ndarray

    @property
    def accuracy(self):
        """Share of correct predictions."""
        return self.correct / self.total if self.total else 0.0

    @property
    def per_class_accuracy(self):
        """Recall of every class; 0 for classes without samples."""
        support = self.confusion.sum(axis=1)
        hits = np.diag(self.confusion)
        return [
            float(h / s) if s else 0.0 for h, s in zip(hits, support)
        ]


def _inputs(model, cloud):
    """Per-point input matrix of a cloud or raw array.

    Raises:
        ShapeMismatchError: in case the width does not match the model.
        NonFiniteInputError: in case of NaN or Inf coordinates.
    """
    x = cloud.features if hasattr(cloud, "features") else cloud
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] != model.input_dim:
        raise ShapeMismatchError(
            f"expected N x {model.input_dim} input with N >= 1, "
            f"got {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise NonFiniteInputError("cloud contains NaN or Inf values")
    return x


def softmax(logits):
    """Numerically stable softmax.

    Args:
        logits: vector of scores.

    Returns:
        probabilities summing to one.
    """
    shifted = np.exp(logits - np.max(logits))
    return shifted / shifted.sum()


def forward(model, cloud):
    """Compute the logits of one cloud.

    Args:
        model: ClassifierModel.
        cloud: PointCloud or N x input_dim array.

    Returns:
        (logits, ForwardCache).
    """
    h = _inputs(model, cloud)
    activations = [h]
    for layer in model.mlp:
        h = np.maximum(h @ layer.weight + layer.bias, 0.0)
        activations.append(h)

    pooled = pool_forward(h, model.pool)
    a = pooled.output
    head = [a]
    for layer in model.fc[:-1]:
        a = np.maximum(a @ layer.weight + layer.bias, 0.0)
        head.append(a)
    logits = a @ model.fc[-1].weight + model.fc[-1].bias
    cache = ForwardCache(model.revision, activations, pooled, head, logits)
    return logits, cache


def backward(model, cache, label):
    """Gradients of the softmax cross-entropy loss.

    Args:
        model: the ClassifierModel that produced the cache.
        cache: ForwardCache from forward.
        label: true class id.

    Returns:
        Gradients.

    Raises:
        StaleCacheError: in case the model changed since the forward pass.
        ValueError: in case the label is out of range.
    """
    if cache.revision != model.revision:
        raise StaleCacheError(
            f"cache from revision {cache.revision}, model is at "
            f"{model.revision}; rerun forward"
        )
    if not 0 <= label < model.class_count:
        raise ValueError(f"label {label} out of range")

    probs = softmax(cache.logits)
    loss = -math.log(max(probs[label], np.finfo(float).tiny))
    delta = probs.copy()
    delta[label] -= 1.0

    fc_grads = []
    for index in range(len(model.fc) - 1, -1, -1):
        layer = model.fc[index]
        a_prev = cache.head[index]
        fc_grads.append(Layer(np.outer(a_prev, delta), delta.copy()))
        delta = layer.weight @ delta
        if index > 0:
            delta = delta * (a_prev > 0)
    fc_grads.reverse()

    features = cache.activations[-1]
    d_features = pool_backward(
        features, model.pool, cache.pooled.selection, delta
    )
    delta = d_features * (features > 0)

    mlp_grads = []
    for index in range(len(model.mlp) - 1, -1, -1):
        layer = model.mlp[index]
        h_prev = cache.activations[index]
        mlp_grads.append(Layer(h_prev.T @ delta, delta.sum(axis=0)))
        if index > 0:
            delta = (delta @ layer.weight.T) * (h_prev > 0)
    mlp_grads.reverse()

    values = []
    for layer in [*mlp_grads, *fc_grads]:
        values.extend([layer.weight, layer.bias])
    return Gradients(values=values, loss=loss, probabilities=probs)


def predict(model, cloud):
    """Predicted class id of a cloud."""
    logits, _ = forward(model, cloud)
    return int(np.argmax(logits))


def pooled_features(model, cloud):
    """Global feature of a cloud, the output of the pooling layer.

    Args:
        model: ClassifierModel.
        cloud: PointCloud or N x input_dim array.

    Returns:
        length-D vector.
    """
    _, cache = forward(model, cloud)
    return cache.pooled.output


def feature_map(model, cloud):
    """Per-point features entering the pooling layer.

    Args:
        model: ClassifierModel.
        cloud: PointCloud or N x input_dim array.

    Returns:
        N x D matrix.
    """
    _, cache = forward(model, cloud)
    return cache.activations[-1]


def with_pool(model, pool):
    """Copy of a model using another pooling operator.

    Args:
        model: ClassifierModel.
        pool: PoolConfig.

    Returns:
        ClassifierModel sharing no arrays with the original.
    """
    clone = copy.deepcopy(model)
    clone.pool = pool
    clone.revision = 0
    return clone


class OptimizerBase(ABC):
    """The base class for parameter update rules."""

    def __init__(self, learning_rate):
        """Construct.

        Args:
            learning_rate: step size.
        """
        self.learning_rate = learning_rate

    @abstractmethod
    def _update(self, index, param, grad):
        """Handle the update of one parameter array in place."""

    def step(self, model, grads):
        """Apply gradients to a model.

        Args:
            model: ClassifierModel, updated in place.
            grads: gradient arrays in parameter order.
        """
        for index, (param, grad) in enumerate(zip(model.parameters(), grads)):
            self._update(index, param, grad)
        model.revision += 1


class Sgd(OptimizerBase):
    """Plain stochastic gradient descent."""

    def _update(self, index, param, grad):
        param -= self.learning_rate * grad


class Adam(OptimizerBase):
    """Adam with bias-corrected moment estimates."""

    def __init__(self, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        """Construct.

        Args:
            learning_rate: step size.
            beta1: first moment decay.
            beta2: second moment decay.
            eps: denominator guard.
        """
        super().__init__(learning_rate)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.moments = {}

    def step(self, model, grads):
        """Apply gradients to a model.

        Args:
            model: ClassifierModel, updated in place.
            grads: gradient arrays in parameter order.
        """
        self.t += 1
        super().step(model, grads)

    def _update(self, index, param, grad):
        m, v = self.moments.get(index, (np.zeros_like(param),) * 2)
        m = self.beta1 * m + (1 - self.beta1) * grad
        v = self.beta2 * v + (1 - self.beta2) * grad * grad
        self.moments[index] = (m, v)
        m_hat = m / (1 - self.beta1**self.t)
        v_hat = v / (1 - self.beta2**self.t)
        param -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


_OPTIMIZER_MAP = {"sgd": Sgd, "adam": Adam}


def create_optimizer(config):
    """Create the optimizer named by a TrainConfig.

    Args:
        config: TrainConfig.

    Returns:
        the appropriate optimizer instance.
    """
    return _OPTIMIZER_MAP[config.optimizer](config.learning_rate)


def train(model, clouds, config):
    """Train a model on labeled clouds.

    Args:
        model: ClassifierModel, updated in place.
        clouds: sequence of PointCloud with labels.
        config: TrainConfig.

    Returns:
        TrainResult with one EpochStats per epoch.

    Raises:
        ValueError: in case the dataset is empty or a label is out of range.
        TrainingDivergedError: in case the loss becomes NaN or infinite.
    """
    clouds = list(clouds)
    if not clouds:
        raise ValueError("training set is empty")
    for cloud in clouds:
        if not 0 <= cloud.label < model.class_count:
            raise ValueError(f"label {cloud.label} out of range")

    rng = np.random.default_rng(config.seed)
    optimizer = create_optimizer(config)
    result = TrainResult(model=model)

    def sample(item):
        cloud, angle = item
        if angle is not None:
            cloud = rotate_z(cloud, angle)
        _, cache = forward(model, cloud)
        return backward(model, cache, cloud.label)

    for epoch in range(config.epochs):
        order = rng.permutation(len(clouds))
        angles = rng.uniform(0.0, 2 * np.pi, size=len(clouds))
        total_loss, correct = 0.0, 0
        for batch, start in enumerate(
            range(0, len(clouds), config.batch_size)
        ):
            rows = order[start : start + config.batch_size]
            items = [
                (clouds[i], angles[i] if config.rotate else None)
                for i in rows
            ]
            grads = ordered_map(sample, items, config.workers)
            batch_loss = sum(g.loss for g in grads)
            if not math.isfinite(batch_loss):
                raise TrainingDivergedError(epoch, batch, batch_loss)
            total_loss += batch_loss
            correct += sum(
                int(np.argmax(g.probabilities)) == clouds[i].label
                for g, i in zip(grads, rows)
            )
            mean = [
                sum(values) / len(grads)
                for values in zip(*(g.values for g in grads))
            ]
            optimizer.step(model, mean)

        stats = EpochStats(
            epoch=epoch,
            loss=total_loss / len(clouds),
            accuracy=correct / len(clouds),
        )
        result.curve.append(stats)
        if (epoch + 1) % config.log_every == 0:
            logger.info(
                f"epoch {epoch + 1}/{config.epochs}: "
                f"loss={stats.loss:.6f} accuracy={stats.accuracy:.4f}"
            )
    return result


def evaluate(model, clouds, workers=1):
    """Classify labeled clouds.

    Args:
        model: ClassifierModel.
        clouds: sequence of PointCloud with labels.
        workers: threads used for prediction.

    Returns:
        Evaluation.
    """
    clouds = list(clouds)
    predictions = ordered_map(lambda c: predict(model, c), clouds, workers)
    confusion = np.zeros((model.class_count, model.class_count), dtype=int)
    for cloud, predicted in zip(clouds, predictions):
        confusion[cloud.label, predicted] += 1
    return Evaluation(
        correct=int(np.trace(confusion)),
        total=len(clouds),
        confusion=confusion,
    )


def save(model, path):
    """Write a model file atomically.

    The file is an uncompressed NumPy archive: entry ``header`` holds the
    UTF-8 JSON architecture description and training hash, entries
    ``mlp.<i>.weight``, ``mlp.<i>.bias``, ``fc.<i>.weight`` and
    ``fc.<i>.bias`` the float64 parameters.

    Args:
        model: ClassifierModel.
        path: destination file.
    """
    header = json.dumps(model.header(), sort_keys=True).encode("utf-8")
    arrays = {"header": np.frombuffer(header, dtype=np.uint8)}
    for prefix, layers in (("mlp", model.mlp), ("fc", model.fc)):
        for index, layer in enumerate(layers):
            arrays[f"{prefix}.{index}.weight"] = layer.weight
            arrays[f"{prefix}.{index}.bias"] = layer.bias
    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    atomic_write(path, buffer.getvalue())
    logger.debug(f"saved model to {path}")


def _read_layers(archive, prefix, count, path):
    """Read the layers of one model part."""
    layers = []
    for index in range(count):
        weight = archive[f"{prefix}.{index}.weight"]
        bias = archive[f"{prefix}.{index}.bias"]
        if weight.ndim != 2 or bias.shape != (weight.shape[1],):
            raise CorruptModelError(f"{path}: bad shape in {prefix}.{index}")
        layers.append(
            Layer(weight.astype(np.float64), bias.astype(np.float64))
        )
    return layers


def load(path, operator=None):
    """Read a model file.

    Args:
        path: model file.
        operator: expected pooling operator; None accepts any.

    Returns:
        ClassifierModel.

    Raises:
        CorruptModelError: in case the file is truncated or malformed.
        ModelVersionError: in case of an unsupported format version.
        ModelConfigMismatchError: in case the pooling operator differs.
    """
    try:
        with np.load(path, allow_pickle=False) as archive:
            header = json.loads(bytes(archive["header"]).decode("utf-8"))
            if header.get("format") != MODEL_FORMAT:
                raise CorruptModelError(f"{path}: not a {MODEL_FORMAT} file")
            if header.get("version") != MODEL_FORMAT_VERSION:
                raise ModelVersionError(
                    f"{path}: format version {header.get('version')}, "
                    f"expected {MODEL_FORMAT_VERSION}"
                )
            mlp = _read_layers(
                archive, "mlp", len(header["mlp-widths"]) + 1, path
            )
            fc = _read_layers(
                archive, "fc", len(header["fc-widths"]) + 1, path
            )
            pool = PoolConfig.from_dict(header["pool"])
    except (ModelVersionError, CorruptModelError):
        raise
    except (
        OSError,
        EOFError,
        KeyError,
        ValueError,
        zipfile.BadZipFile,
    ) as err:
        raise CorruptModelError(
            f"{path}: unreadable model file: {err}"
        ) from err

    model = ClassifierModel(
        mlp=mlp,
        fc=fc,
        pool=pool,
        training_hash=header.get("training-hash"),
    )
    widths = [model.input_dim]
    for layer in [*mlp, *fc]:
        if layer.weight.shape[0] != widths[-1]:
            raise CorruptModelError(f"{path}: layer shapes do not chain")
        widths.append(layer.weight.shape[1])
    if (
        model.input_dim != header.get("input-dim")
        or model.feature_dim != header.get("feature-dim")
        or model.class_count != header.get("classes")
    ):
        raise CorruptModelError(f"{path}: header does not match parameters")
    if operator is not None and pool.operator != operator:
        raise ModelConfigMismatchError(
            f"{path}: model pools with {pool.operator!r}, "
            f"expected {operator!r}"
        )
    return model
