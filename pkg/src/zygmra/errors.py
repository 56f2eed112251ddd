"""Exception types shared across the package."""


class ZygmraError(Exception):
    """Base class for every error raised by the package."""


class FinestScale(ZygmraError):
    pass


class CoarsestScale(ZygmraError):
    pass


class LambdaOutOfRange(ZygmraError):
    pass


class GridMismatch(ZygmraError):
    pass


class NonFiniteInput(ZygmraError):
    pass


class ScaleMismatch(ZygmraError):
    pass


class NotZygmund(ZygmraError):
    pass


class NotAncestor(ZygmraError):
    pass


class CollapseResidual(ZygmraError):
    pass


class ConstraintViolated(ZygmraError):
    pass


class NormalizationOverflow(ZygmraError):
    pass


class EmptyComplexityBucket(ZygmraError):
    pass


class DiagonalPoint(ZygmraError):
    pass


class DiagonalDominated(ZygmraError):
    pass


class QuadratureNonConvergent(ZygmraError):
    pass


class CutoffTooLarge(ZygmraError):
    pass


class GammaUnachievable(ZygmraError):
    pass


class FamilyTooLarge(ZygmraError):
    pass


class UnknownFixture(ZygmraError):
    pass


class FormatError(ZygmraError):
    pass


class ComplexityExceedsGrid(ZygmraError):
    pass


class SampleDegenerate(ZygmraError):
    pass
