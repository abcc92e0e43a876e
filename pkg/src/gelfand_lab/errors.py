"""Exception hierarchy shared by all modules."""


class GelfandLabError(Exception):
    """Base class for every error raised by this package."""


class PointOutsideDomain(GelfandLabError, ValueError):
    pass


class CoincidentPoints(GelfandLabError, ValueError):
    pass


class DegenerateConfiguration(GelfandLabError, ValueError):
    pass


class LambdaOutOfRange(GelfandLabError, ValueError):
    pass


class IndexOutOfBand(GelfandLabError, IndexError):
    pass


class NotCirculant(GelfandLabError, ValueError):
    pass


class NumericalFailure(GelfandLabError, RuntimeError):
    """A solver failed to converge or hit a numerical safeguard."""


class NewtonDiverged(NumericalFailure):
    pass


class EscapedDomain(NumericalFailure):
    pass


class JacobianSingular(NumericalFailure):
    pass


class StepFloorReached(NumericalFailure):
    pass


class MeshUnderResolved(NumericalFailure):
    pass


class ConvergenceFailure(NumericalFailure):
    pass


class QuadratureNotConverged(NumericalFailure):
    pass


class WeightNotPositive(GelfandLabError, ValueError):
    pass


class WrongPeakCount(GelfandLabError, ValueError):
    pass


class WindowExceedsGrid(GelfandLabError, ValueError):
    pass
