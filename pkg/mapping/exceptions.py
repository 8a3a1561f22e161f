"""
Mapping exception classes' module.
"""

class PreintegrationError(Exception):
    """Includes any error encountered while preintegrating IMU samples."""

class EmptyWindowError(PreintegrationError):
    """Raised when fewer than two IMU samples are given to the preintegration."""

class TimestampOrderError(PreintegrationError):
    """Raised when IMU timestamps are not strictly increasing."""

class InitializationError(Exception):
    """Includes any error encountered while initializing the state from a window of frames."""

class InsufficientRotationError(InitializationError):
    """Raised when the window does not rotate enough to observe the gyroscope bias."""

    def __init__(self, msg: str, condition_number: float, *args):
        """Raised when the window does not rotate enough to observe the gyroscope bias. The condition number of the normal matrix should be given as a parameter."""
        super().__init__(msg, *args)
        self.condition_number = condition_number

class DegenerateExcitationError(InitializationError):
    """Raised when the velocity and gravity linear system is ill-conditioned."""

    def __init__(self, msg: str, condition_number: float, *args):
        """Raised when the velocity and gravity linear system is ill-conditioned. The condition number of the stacked system should be given as a parameter."""
        super().__init__(msg, *args)
        self.condition_number = condition_number

class NotStationaryError(InitializationError):
    """Raised when the static initializer is fed a window that is not at rest."""

class DescriptorError(Exception):
    """Raised when two descriptors of different dimensions are compared."""

class PoseGraphError(Exception):
    """Includes any error encountered while building or optimizing a pose graph."""

class MissingEndpointError(PoseGraphError):
    """Raised when an edge references a node that is not in the graph."""

class UnderDeterminedGraphError(PoseGraphError):
    """Raised when a connected component of the graph has neither a prior nor a fixed node."""

    def __init__(self, msg: str, component: tuple[int], *args):
        """Raised when a connected component of the graph has neither a prior nor a fixed node. The node ids of the component should be given as a parameter."""
        super().__init__(msg, *args)
        self.component = component

class MapLifecycleError(Exception):
    """Raised when a map database operation is called in the wrong lifecycle state."""

class FusionError(Exception):
    """Raised when two maps could not be fused."""
