"""Exception hierarchy shared by all qfacts modules."""


class QFactsError(Exception):
    """Base class for every error raised by this package."""


class NotHermitian(QFactsError):
    pass


class NotPositive(QFactsError):
    pass


class ZeroTrace(QFactsError):
    pass


class InvalidProjectors(QFactsError):
    pass


class NotNormalized(QFactsError):
    pass


class DegenerateFacts(QFactsError):
    pass


class ZeroAmplitude(QFactsError):
    pass


class UnknownOutcome(QFactsError, KeyError):
    pass


class NonCommuting(QFactsError):
    pass


class NoFixedPoint(QFactsError):
    pass


class NoReference(QFactsError):
    pass


class PerturbationTooLarge(QFactsError):
    pass


class DominanceViolated(QFactsError):
    pass


class InvalidConfig(QFactsError):
    pass


class WeightUnderflow(QFactsError):
    pass


class TooLarge(QFactsError):
    pass


class BadWindow(QFactsError):
    pass


class DegenerateD(QFactsError):
    pass


class NeighborhoodsOverlap(QFactsError):
    pass


class FactsUnidentifiable(QFactsError):
    pass


class NoStates(QFactsError):
    pass


class InsufficientResolvedCycles(QFactsError):
    pass


class AssumptionViolated(QFactsError):
    pass
