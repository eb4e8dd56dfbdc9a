"""Exception hierarchy shared across the package.

The CLI maps the three families onto exit codes: configuration problems (2),
data problems (3) and numerical failures (4).
"""


class DPPVAEError(Exception):
    pass


class ConfigError(DPPVAEError, ValueError):
    pass


class DataError(DPPVAEError):
    pass


class NumericError(DPPVAEError, ArithmeticError):
    pass


class ShapeMismatch(DPPVAEError, ValueError):
    pass


# linalg
class NotPositiveDefinite(NumericError):
    pass


class NoConvergence(NumericError):
    pass


class DegenerateInput(NumericError):
    pass


# autodiff
class NotScalarLoss(DPPVAEError, ValueError):
    pass


class TapeConsumed(DPPVAEError, RuntimeError):
    pass


# dpp
class InvalidParams(ConfigError):
    pass


class NegativeTail(NumericError):
    pass


# models
class DomainError(DPPVAEError, ValueError):
    pass


class NonFiniteLoss(NumericError):
    pass


# data
class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class InsufficientSamples(DataError):
    pass


class UnknownWindow(DataError, KeyError):
    pass


class InvalidConfig(ConfigError):
    pass


# eval
class SingleClass(DataError, ValueError):
    pass


class TooFewSamples(DataError, ValueError):
    pass
