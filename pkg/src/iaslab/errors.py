"""Exception types shared across the package."""


class IaslabError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(IaslabError):
    """Vectors of different lengths were combined."""


class EmptyCluster(IaslabError):
    """A centroid was requested for an empty point set."""


class KTooLarge(IaslabError):
    """More clusters requested than there are points."""


class NonPositiveFitness(IaslabError):
    """Selection received a fitness value that is not strictly positive."""


class SingularSystem(IaslabError):
    """The damped normal matrix could not be factorized."""


class DegenerateDesign(IaslabError):
    """The design matrix is rank deficient and damping never produced an
    accepted step."""


class InsufficientData(IaslabError):
    """Fewer samples than the fit requires."""


class UnmappedTask(IaslabError):
    """An assignment does not cover every task, or references an unknown VM."""


class ModelNotFound(IaslabError):
    """A prediction-based command was invoked without a fitted model file."""


class ConfigError(IaslabError):
    """Invalid or unknown configuration input."""
