"""Exception hierarchy.

Every error carries a stable ``code`` string so the CLI can emit it as
machine-readable JSON and tests can match on it.
"""


class PdmpError(Exception):
    code = "PdmpError"
    exit_code = 4


class ConfigError(PdmpError, ValueError):
    code = "ConfigError"
    exit_code = 2


class BalanceViolation(ConfigError):
    code = "BalanceViolation"


class InvalidRowSum(ConfigError):
    code = "InvalidRowSum"


class NoiseSupportTooLarge(ConfigError):
    code = "NoiseSupportTooLarge"


class UnknownGalleryName(ConfigError, KeyError):
    code = "UnknownGalleryName"

    def __str__(self):
        return Exception.__str__(self)


class PreconditionError(PdmpError, ValueError):
    code = "PreconditionError"
    exit_code = 2


class StateEscapedY(PdmpError):
    code = "StateEscapedY"


class BeyondHorizon(PdmpError, ValueError):
    code = "BeyondHorizon"


class QuadratureFailure(PdmpError):
    code = "QuadratureFailure"


class RejectionStall(PdmpError):
    code = "RejectionStall"


class SupportTooLarge(PdmpError, ValueError):
    code = "SupportTooLarge"


class SeriesNotDecaying(PdmpError):
    code = "SeriesNotDecaying"


class DegenerateSigma(PdmpError, ValueError):
    code = "DegenerateSigma"


class InsufficientSamples(PdmpError, ValueError):
    code = "InsufficientSamples"
