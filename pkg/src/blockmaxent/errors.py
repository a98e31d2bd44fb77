"""Exception hierarchy.

Input problems derive from :class:`InputError` (CLI exit code 1), numerical
failures from :class:`NumericalError` (CLI exit code 2).
"""


class BlockMaxentError(Exception):
    pass


class InputError(BlockMaxentError, ValueError):
    pass


class NumericalError(BlockMaxentError, ArithmeticError):
    pass


class NonPositiveRate(InputError):
    pass


class NegativeArrival(InputError):
    pass


class InvalidBlockSize(InputError):
    pass


class TruncationTooSmall(InputError):
    pass


class NegativeMean(InputError):
    pass


class InvalidMean(InputError):
    pass


class TooFewBatches(InputError):
    pass


class MixedSpec(InputError):
    pass


class InvalidSimConfig(InputError):
    pass


class UnstableSystem(InputError):
    """Raised when a stationary quantity is requested for an unstable system."""

    def __init__(self, report):
        super().__init__(
            f"unstable: lambda={report.lam:g} >= bound={report.bound:g}"
        )
        self.report = report


class DegenerateMean(InputError):
    """Block mean at an endpoint of [0, b]; the block marginal is a point mass."""

    def __init__(self, I, b):
        super().__init__(f"degenerate block mean I={I!r} for b={b}")
        self.I = I
        self.b = b


class SolveDidNotConverge(NumericalError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class TruncationDiverged(NumericalError):
    def __init__(self, message, iterates=()):
        super().__init__(message)
        # last two (J_max, I, J) triples of the doubling search
        self.iterates = tuple(iterates)


class DegenerateRun(NumericalError):
    pass


class SupportMismatch(NumericalError):
    pass
