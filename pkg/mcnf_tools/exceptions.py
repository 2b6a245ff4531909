"""Exceptions raised by MCNF Tools"""


class McnfError(Exception):
    """Base class for all errors raised by the package"""


class ConfigError(McnfError, ValueError):
    """Invalid experiment configuration; `key` names the offending entry"""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class ManifoldMismatchError(McnfError, ValueError):
    """Points, targets or parameters belong to a different manifold"""


class GeneratorIndexError(McnfError, IndexError):
    """Generator index outside [0, m_gen)"""


class RankDeficientError(McnfError, ValueError):
    """QR input has (numerically) dependent columns"""


class NotPositiveDefiniteError(McnfError, ValueError):
    """Cholesky pivot not strictly positive"""


class RetractionError(McnfError, ValueError):
    """Raw point too far from the manifold to be retracted"""


class PositivityError(McnfError, ValueError):
    """SPD state lost positive definiteness; the trajectory is aborted"""


class SolverError(McnfError, RuntimeError):
    """ODE integration failed"""


class StepUnderflowError(SolverError):
    """Adaptive step size fell below h_min"""


class MaxStepsExceededError(SolverError):
    """Integration needed more than max_steps attempts"""


class NonFiniteError(SolverError):
    """Dynamics produced NaN or infinite values"""


class BatchFailedError(McnfError, RuntimeError):
    """Too many samples of a batch were dropped"""


class CheckpointError(McnfError, ValueError):
    """Checkpoint is corrupt or does not match the configured architecture"""


class ConstraintViolationError(McnfError, ValueError):
    """Point does not satisfy the manifold constraint to the required tolerance"""
