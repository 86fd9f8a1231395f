"""Exception hierarchy shared by all modules."""


class EigencertError(Exception):
    """Base class for library errors."""


class DimensionMismatch(EigencertError, ValueError):
    pass


class RankDeficientOverlap(EigencertError):
    pass


class NegativeRadicand(EigencertError):
    pass


class GapViolation(EigencertError):
    """Raised when constants are requested for a cluster without a verified gap."""


class NotSPD(EigencertError):
    pass


class NoConvergence(EigencertError):
    pass


class Breakdown(EigencertError):
    pass


class SingularSystem(EigencertError):
    pass


class GalerkinViolation(EigencertError):
    pass


class ClusterMismatch(EigencertError):
    pass


class DegenerateTriangle(EigencertError):
    pass


class ClosureOverflow(EigencertError):
    pass


class PatchIncompatible(EigencertError):
    pass


class CaseIIWithoutConstants(EigencertError, ValueError):
    pass


class ConfigError(EigencertError, ValueError):
    pass
