"""Exception hierarchy shared by all detector suites."""


class ProxySleuthError(Exception):
    """Base class for every error raised by this package."""


# prober
class ResolutionFailed(ProxySleuthError):
    pass


class ConnectTimeout(ProxySleuthError):
    pass


class ConnectRefused(ProxySleuthError):
    pass


class PairFailed(ProxySleuthError):
    pass


class SiteUnmeasurable(ProxySleuthError):
    pass


class FetchTimeout(ProxySleuthError):
    pass


class TlsFailure(ProxySleuthError):
    pass


# inference
class InsufficientSamples(ProxySleuthError, ValueError):
    pass


class InsufficientSites(ProxySleuthError, ValueError):
    pass


class EmptyInput(ProxySleuthError, ValueError):
    pass


class MixedUrls(ProxySleuthError, ValueError):
    pass


class NonPositiveBaseline(ProxySleuthError, ValueError):
    pass


# rewrite
class MixedObjects(ProxySleuthError, ValueError):
    pass


class InsufficientSweep(ProxySleuthError, ValueError):
    pass


# redirect
class SentinelUnreachable(ProxySleuthError):
    pass


# simnet
class InvalidTopology(ProxySleuthError, ValueError):
    pass


class Unreachable(ProxySleuthError):
    pass


# liveservers
class BindFailure(ProxySleuthError):
    pass


class MissingCertificate(ProxySleuthError):
    pass


# session / cli
class ConfigInvalid(ProxySleuthError, ValueError):
    pass


class ScenarioNotFound(ProxySleuthError, FileNotFoundError):
    pass
