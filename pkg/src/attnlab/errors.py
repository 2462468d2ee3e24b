"""Exception types raised across the package."""


class AttnLabError(Exception):
    pass


class ShapeError(AttnLabError, ValueError):
    pass


class DomainError(AttnLabError, ValueError):
    pass


class ContractError(AttnLabError, ValueError):
    pass


class NumericalError(AttnLabError, ArithmeticError):
    pass


class ConfigError(AttnLabError, ValueError):
    pass
