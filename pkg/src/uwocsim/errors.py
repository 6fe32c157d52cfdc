"""Exception hierarchy shared by all uwocsim modules."""


class UwocError(Exception):
    """Base class for every error raised by this package."""


# channel_mc
class NoPhotonsReceived(UwocError):
    pass


class InvalidBinWidth(UwocError):
    pass


class CacheFormatError(UwocError):
    pass


# turbulence
class DegenerateVariance(UwocError):
    pass


class NonConvergent(UwocError):
    pass


class NotPositiveDefinite(UwocError):
    pass


class AllWeightsZero(UwocError):
    pass


# link_budget
class ResolutionTooCoarse(UwocError):
    pass


class EmptyChannel(UwocError):
    pass


# ber engines
class MemoryTooLarge(UwocError):
    pass


class CostGuardExceeded(UwocError):
    pass


class CorrelationUnsupported(UwocError):
    pass


class AllChannelsZero(UwocError):
    pass


class NotMiso(UwocError):
    pass


class NoEyeOpening(UwocError):
    pass


class RootBracketFailure(UwocError):
    pass


class InvalidLayout(UwocError):
    pass


# bench
class CacheMismatch(UwocError):
    pass


class ConfigError(UwocError):
    pass
