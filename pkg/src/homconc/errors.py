"""Exception types raised across the package."""


class HomconcError(Exception):
    """Base class for package errors."""


class PartitionError(HomconcError, ValueError):
    """Phase masks overlap or leave voxels unassigned."""


class CoercivityError(HomconcError, ValueError):
    """A conductivity tensor is not symmetric positive definite."""

    def __init__(self, message, voxel=None):
        super().__init__(message)
        self.voxel = voxel


class ConvergenceError(HomconcError, RuntimeError):
    """An iterative solve stopped before reaching its tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConfigError(HomconcError, ValueError):
    """Invalid or inconsistent configuration."""
