"""Exception types shared across the package."""


class IrshieldError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(IrshieldError):
    """Model definition text is malformed. Carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ShapeError(IrshieldError):
    """Tensor or layer shapes do not line up."""


class WeightsError(IrshieldError):
    """Weights blob is malformed or its length does not match the model."""


class PartitionError(IrshieldError):
    """A requested cut point is not a valid partition boundary."""


class AuthError(IrshieldError):
    """Authenticated decryption failed: tampered data, wrong key, or wrong
    content type."""


class StateError(IrshieldError):
    """An enclave operation was invoked in the wrong session state."""


class ProtocolError(IrshieldError):
    """Malformed or out-of-contract wire traffic."""
