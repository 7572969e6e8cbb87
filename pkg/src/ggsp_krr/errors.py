"""Exception hierarchy.

Two families matter to callers: :class:`DataError` (bad input, exit code 2
from the CLI) and :class:`NumericalError` (a factorization or solve gave up,
exit code 3).
"""


class GgspError(Exception):
    """Base class for all package errors."""


class DataError(GgspError, ValueError):
    pass


class NumericalError(GgspError, ArithmeticError):
    pass


# graph construction
class DisconnectedGraph(DataError):
    pass


class SelfLoop(DataError):
    pass


class DuplicateEdge(DataError):
    pass


class InvalidVertex(DataError, IndexError):
    pass


class EigensolveFailure(NumericalError):
    pass


# kernels
class NonMonotoneSpectrum(DataError):
    pass


class NegativeSpectrum(DataError):
    pass


class DegenerateSpectrum(DataError):
    pass


class OutOfDomain(DataError):
    pass


class ZeroSpectralWeight(DataError, ZeroDivisionError):
    pass


class NonOrthonormalBasis(DataError):
    pass


class UnsupportedKernel(DataError):
    pass


class NoPolyDegree(DataError):
    """Localized evaluation needs a graph kernel built in polynomial form."""


# solvers
class SolveFailure(NumericalError):
    pass


class FactorizationFailure(NumericalError):
    pass


class SingularSubmatrix(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class StepTooLarge(DataError):
    pass


class EmptyNeighborhood(DataError):
    pass


class InvalidParameter(DataError):
    pass


# harness
class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ZeroSignal(DataError, ZeroDivisionError):
    pass
