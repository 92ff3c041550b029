"""Exception types shared across the package."""


class GesaError(Exception):
    """Base class for all errors raised by this package."""


class GroupMismatchError(GesaError):
    """Two elements (or an element and a container) belong to different groups."""


class DimensionMismatchError(GesaError):
    """A point, vector or feature block has the wrong dimension for the group."""


class ShapeError(GesaError):
    """Tensor operands have incompatible shapes."""


class SingularRotationError(GesaError):
    """Rotation angle is within tolerance of pi, where the log map branches."""


class EmptyInputError(GesaError):
    """An operation received an empty point set or feature map."""


class ConfigError(GesaError):
    """A configuration object violates one of its invariants."""


class NonScalarLossError(GesaError):
    """backward() was called on a tensor that is not a scalar."""


class MissingGradientError(GesaError):
    """The optimizer was given a gradient map missing one of its parameters."""


class NotTrainedError(GesaError):
    """Evaluation-mode statistics or predictions requested before any training."""


class NonFiniteError(GesaError):
    """A trajectory state or a training loss stopped being finite."""
