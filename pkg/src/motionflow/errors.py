"""Exception types shared across the library."""


class MotionFlowError(Exception):
    """Base class for all library errors."""


class BadMagic(MotionFlowError):
    """File does not start with the expected magic bytes."""


class Truncated(MotionFlowError):
    """File ended before the declared payload was complete."""


class IoError(MotionFlowError):
    """Underlying file system operation failed."""


class InvalidSpec(MotionFlowError):
    """Motion specification violates its invariants."""


class NonPositiveScale(MotionFlowError):
    """Normalization scale must be strictly positive."""


class TimestepOutOfRange(MotionFlowError):
    """Timestep outside the supported [0, 1] interval."""


class DegenerateDims(MotionFlowError):
    """Grid dimensions too small to be meaningful."""


class ShapeMismatch(MotionFlowError):
    """Operands have incompatible spatial or channel dimensions."""


class DegenerateWeight(MotionFlowError):
    """Splatting weight denominator collapsed to ~zero."""


class ScaleMismatch(MotionFlowError):
    """Normalized flows carry different instance scales."""


class EmptyDataset(MotionFlowError):
    """Training requires at least one sample."""


class NonFiniteLoss(MotionFlowError):
    """Training loss became NaN or infinite."""


class VersionMismatch(MotionFlowError):
    """Checkpoint version or configuration differs from what was expected."""


class ChecksumFailure(MotionFlowError):
    """Checkpoint payload does not match its embedded checksum."""


class TooSmall(MotionFlowError):
    """Image too small for the requested multi-scale operation."""


class ContractViolation(MotionFlowError):
    """A pluggable method returned values violating its contract."""
