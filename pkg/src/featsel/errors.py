"""Exception hierarchy shared across the package."""


class FeatselError(Exception):
    """Base class for all package errors."""


class InvalidInputError(FeatselError, ValueError):
    pass


class DimensionMismatchError(InvalidInputError):
    pass


class NotPositiveDefiniteError(FeatselError, ValueError):
    pass


class LinearizationError(FeatselError, ArithmeticError):
    pass


class CrossCovarianceError(FeatselError, ValueError):
    """Assembled horizon covariance failed the PSD check."""

    def __init__(self, mode, min_eig):
        self.mode = mode
        self.min_eig = min_eig
        super().__init__(
            f"assembled covariance is not positive definite in cross_mode={mode!r} "
            f"(min eigenvalue {min_eig:.3e})"
        )


class DegenerateObservationError(FeatselError, ValueError):
    pass


class FusionShapeError(DimensionMismatchError):
    pass


class UndefinedGapError(FeatselError, ZeroDivisionError):
    pass


class HorizonAbort(FeatselError, RuntimeError):
    """Propagation or fusion failed inside the closed loop."""

    def __init__(self, horizon, cause):
        self.horizon = horizon
        self.cause = cause
        super().__init__(f"horizon {horizon}: {cause}")
