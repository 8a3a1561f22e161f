"""
Simulation exception classes module.
"""

class LoadingError(Exception):
    """Includes any error encountered during a frame log's or a result file's loading."""

class ScenarioError(Exception):
    """Includes any error found while parsing or validating a scenario."""

    def __init__(self, msg: str, field: str, *args):
        """Includes any error found while parsing or validating a scenario. The offending field should be given as a parameter."""
        super().__init__(msg, *args)
        self.field = field

class TrajectoryRangeError(Exception):
    """Raised when a trajectory is evaluated outside of its time span."""
