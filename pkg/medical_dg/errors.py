"""
Error types shared across the package.

Each error carries the exit code the CLI reports for it:
0 success, 2 configuration error, 3 data error, 4 runtime/training error.
"""


class CDDSAError(Exception):
    exit_code = 4


class ConfigurationError(CDDSAError, ValueError):
    exit_code = 2


class DataError(CDDSAError, ValueError):
    exit_code = 3


class ShapeError(CDDSAError, ValueError):
    exit_code = 4


class LossError(CDDSAError, ValueError):
    exit_code = 4


class TrainingError(CDDSAError, RuntimeError):
    exit_code = 4
