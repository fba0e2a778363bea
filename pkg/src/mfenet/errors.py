"""Exception types shared across the engine."""


class ContractViolation(ValueError):
    """An operation was called with arguments violating its contract."""


class ImageFormatError(Exception):
    """An image file could not be parsed; message includes the byte offset."""


class CheckpointError(Exception):
    """Base class for checkpoint load failures."""


class CheckpointFormatError(CheckpointError):
    """Bad magic, unsupported version, or truncated checkpoint payload."""


class CheckpointMismatchError(CheckpointError):
    """Checkpoint tensor names do not match the expected model config."""


class TrainingDiverged(RuntimeError):
    """Loss or a gradient became NaN; a diagnostic checkpoint was saved."""
