"""
Exception types for SliceSim.
"""

from typing import Optional, Any


class SliceSimError(Exception):
    """Base class for all SliceSim failures."""


class ConfigError(SliceSimError):
    """Configuration file missing, malformed or failing validation."""


class ConstraintViolationError(SliceSimError):
    """An allocation violating the budget constraints reached the simulator."""

    def __init__(self, message: str, report: Any):
        super().__init__(message)
        self.report = report


class PolicyNaNError(SliceSimError):
    """A NaN appeared in a policy output or in the training loss."""

    def __init__(self, message: str, snapshot_path: Optional[str] = None):
        super().__init__(message if snapshot_path is None else f"{message} (snapshot: {snapshot_path})")
        self.snapshot_path = snapshot_path


class RolloutError(SliceSimError):
    """An environment failed while collecting a batch."""

    def __init__(self, message: str, partial: Optional[dict] = None):
        super().__init__(message)
        self.partial = partial or {}


class ReplaySchemaError(SliceSimError):
    """Trace or explanation files do not have the expected layout."""
