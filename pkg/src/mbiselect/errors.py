"""Exception types shared across the package."""


class MbiError(Exception):
    """Base class for all package-specific errors."""


class NonBlockRow(MbiError):
    """A row is partially observed within a single source block."""


class EmptyDonor(MbiError):
    """Some missing-pattern group has no donor group to impute from."""


class NoDonorRows(MbiError):
    """No pooled rows jointly observe the target and its predictors."""


class SingularDesign(MbiError):
    """Normal equations of an unregularized fit are numerically singular."""


class DimensionMismatch(MbiError):
    """Imputed view columns disagree with the donor's observed set."""


class ZeroTrace(MbiError):
    """Component-count selection called on a matrix with nonpositive trace."""


class AllComponentsDropped(MbiError):
    """Reduction removed every component of a group with nonzero moments."""


class NonFiniteObjective(MbiError):
    """Objective evaluation overflowed; the iterate has diverged."""


class LineSearchFailed(MbiError):
    """Line search exhausted its backtracking budget without improvement."""


class InitFailed(MbiError):
    """No usable rows to initialize the coefficient vector."""


class SingularV1(MbiError):
    """Transformed moment covariance not invertible; reduction bug."""


class NoCompleteGroup(MbiError):
    """Operation requires a complete-case group and none exists."""


class InvalidRho(MbiError):
    """Exchangeable correlation parameter outside the valid range."""


class DegenerateRSS(MbiError):
    """Residual sum of squares is zero or negative within tolerance."""


class FitPathError(MbiError):
    """Every fit along the tuning-parameter grid failed."""

    def __init__(self, message, per_lambda=None):
        super().__init__(message)
        self.per_lambda = per_lambda or []
