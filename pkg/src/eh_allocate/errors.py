"""Exception types shared across the package."""


class EhAllocateError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(EhAllocateError):
    """Array lengths or matrix shapes do not agree."""


class NotHermitian(EhAllocateError):
    """A covariance input is not Hermitian within tolerance."""


class NotPSD(EhAllocateError):
    """A covariance input has a significantly negative eigenvalue."""


class NotUnit(EhAllocateError):
    """A direction vector is not unit-norm within tolerance."""


class RhoOutOfRange(EhAllocateError):
    """Correlation coefficient outside the positive-semidefinite range."""


class RankError(EhAllocateError):
    """Invalid rank / bandwidth request (e.g. s does not divide n)."""


class DelayOutOfRange(EhAllocateError):
    """Sampling offset outside 0..n/s - 1."""


class FlatSpectrumRequired(EhAllocateError):
    """Operation only defined for models whose nonzero eigenvalues are equal."""


class InfeasibleRegion(EhAllocateError):
    """The feasible set is empty (no spendable energy with an equality constraint)."""


class ZeroVarianceWithEnergy(EhAllocateError):
    """Strict mode: energy would have to be spent on a zero-variance slot."""


class WindowError(EhAllocateError):
    """Window length does not tile the horizon."""


class PlanInvalid(EhAllocateError):
    """Sampling plan inconsistent with the model dimensions."""


class InvalidConfig(EhAllocateError):
    """Malformed experiment or instance configuration."""
