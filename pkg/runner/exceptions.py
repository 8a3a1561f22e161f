"""
Runner exception classes module.
"""

class ConfigError(Exception):
    """Raised when a run configuration holds unknown keys or invalid values."""

    def __init__(self, msg: str, key: str, *args):
        """Raised when a run configuration holds unknown keys or invalid values. The offending key should be given as a parameter."""
        super().__init__(msg, *args)
        self.key = key

class EvaluationError(Exception):
    """Includes any error encountered while evaluating a trajectory."""

class InsufficientOverlapError(EvaluationError):
    """Raised when too few estimated poses can be associated with ground-truth poses."""

class PipelineError(Exception):
    """Wraps an error raised by a mapping module while processing a frame."""

    def __init__(self, msg: str, frame_index: int, *args):
        """Wraps an error raised by a mapping module while processing a frame. The frame index should be given as a parameter."""
        super().__init__(msg, *args)
        self.frame_index = frame_index
