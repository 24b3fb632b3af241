"""Exception hierarchy; each class maps to a CLI exit code."""


class PhySRError(Exception):
    exit_code = 1


class ConfigError(PhySRError, ValueError):
    exit_code = 2


class DataError(PhySRError, ValueError):
    exit_code = 3


class NumericalError(PhySRError, ArithmeticError):
    exit_code = 4
