"""Exception hierarchy shared by every package in the codec."""


class CodecError(Exception):
    """Root of all errors raised by the codec."""


class ConfigurationError(CodecError, ValueError):
    """Invalid configuration or tensor shapes. Names the offending layer when known."""

    def __init__(self, message, layer=None):
        self.layer = layer
        if layer:
            message = f"[{layer}] {message}"
        super().__init__(message)


class NumericalError(CodecError, ArithmeticError):
    def __init__(self, message, layer=None):
        self.layer = layer
        if layer:
            message = f"[{layer}] {message}"
        super().__init__(message)


class UsageError(CodecError, RuntimeError):
    pass


class TrainingError(CodecError, RuntimeError):
    """Training diverged. `step` is the step index at which it happened."""

    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


class CorpusError(CodecError):
    pass


class DataLeakageError(CodecError):
    pass


class CheckpointError(CodecError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CorruptStreamError(CodecError):
    pass


class ModelMismatchError(CodecError):
    pass
