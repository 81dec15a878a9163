"""Exception hierarchy. Each family maps to one CLI exit code."""


class BlinkyError(Exception):
    exit_code = 1


class ConfigError(BlinkyError, ValueError):
    exit_code = 1


class DataError(BlinkyError):
    exit_code = 2


class TrainingDivergence(BlinkyError, RuntimeError):
    exit_code = 3
