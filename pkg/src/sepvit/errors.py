"""Exception hierarchy shared by every sepvit module."""


class SepViTError(Exception):
    """Base class; the CLI prints ``<category>: <message>`` for these."""

    category = "error"


class ShapeError(SepViTError, ValueError):
    category = "shape"


class LayoutError(ShapeError):
    category = "layout"


class ConfigError(SepViTError, ValueError):
    category = "config"


class ParameterError(SepViTError, ValueError):
    category = "parameter"


class DTypeError(SepViTError, TypeError):
    category = "dtype"


class ContractError(SepViTError, RuntimeError):
    category = "contract"


class NumericError(SepViTError, ArithmeticError):
    category = "numeric"


class CheckpointError(SepViTError, IOError):
    category = "checkpoint"


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass
