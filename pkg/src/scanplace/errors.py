"""Exception types shared across the toolkit.

Contract violations (bad arguments, inconsistent shapes, empty inputs) derive
from ContractError; dataset file problems derive from DatasetIOError.  The CLI
maps the former to exit code 2 and the latter to exit code 3.
"""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


class ContractError(ToolkitError, ValueError):
    """An operation was called with arguments that violate its contract."""


class ShapeError(ContractError):
    """Array shapes are inconsistent with what the operation requires."""


class InvalidPoseError(ContractError):
    """Rotation matrix is not orthonormal with determinant +1."""


class InvalidParameterError(ContractError):
    """A configuration value is outside its documented domain."""


class EmptyScanError(ContractError):
    """A point cloud was empty where at least one point is required."""


class UndefinedOverlapError(ContractError):
    """Overlap was requested for a pair on which it is not defined."""


class EmptyMiningError(ContractError):
    """No query produced a usable training tuple."""


class DatasetIOError(ToolkitError, OSError):
    """A dataset file is missing, truncated, or malformed."""
