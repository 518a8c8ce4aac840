# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Structured errors raised by modepool."""


class ConfigError(ValueError):
    """A configuration value violates its schema or an invariant.

    Attrs:
        field: name of the offending configuration field.
        message: description of the violation.
    """

    def __init__(self, field, message):
        """Construct.

        Args:
            field: name of the offending configuration field.
            message: description of the violation.
        """
        super().__init__(f"config: {field}: {message}")
        self.field = field
        self.message = message


class NonFiniteInputError(ValueError):
    """Input values contain NaN or Inf."""


class ShapeMismatchError(ValueError):
    """Array shapes do not chain as required."""


class NotConvergedError(RuntimeError):
    """An iterative solve did not converge where convergence is required."""


class StaleCacheError(RuntimeError):
    """A forward cache was produced by an older revision of the model."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss.

    Attrs:
        epoch: zero-based epoch in which the loss diverged.
        batch: zero-based batch index within the epoch.
    """

    def __init__(self, epoch, batch, loss):
        """Construct.

        Args:
            epoch: zero-based epoch in which the loss diverged.
            batch: zero-based batch index within the epoch.
            loss: the offending loss value.
        """
        super().__init__(
            f"training diverged at epoch {epoch}, batch {batch}: "
            f"loss={loss!r}; lower the learning rate"
        )
        self.epoch = epoch
        self.batch = batch


class ModelFileError(ValueError):
    """A model file cannot be used."""


class CorruptModelError(ModelFileError):
    """A model file is truncated or malformed."""


class ModelVersionError(ModelFileError):
    """A model file was written by an unsupported format version."""


class ModelConfigMismatchError(ModelFileError):
    """A model file does not match the expected pooling configuration."""


class PointCloudFormatError(ValueError):
    """A point cloud file cannot be parsed.

    Attrs:
        path: the file being parsed.
        line: 1-based line number of the problem, or None.
    """

    def __init__(self, path, line, message):
        """Construct.

        Args:
            path: the file being parsed.
            line: 1-based line number of the problem, or None.
            message: description of the problem.
        """
        where = f"{path}:{line}" if line is not None else f"{path}"
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


class EmptyFileError(PointCloudFormatError):
    """The file holds no points."""


class MalformedHeaderError(PointCloudFormatError):
    """The OFF header is missing or malformed."""


class NonNumericTokenError(PointCloudFormatError):
    """A coordinate token is not a number."""


class VertexCountMismatchError(PointCloudFormatError):
    """The declared vertex count does not match the data."""
