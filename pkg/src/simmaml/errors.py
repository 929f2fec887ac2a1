"""Exception hierarchy. ``exit_code`` is what the CLI returns when one escapes."""


class SimMamlError(Exception):
    exit_code = 1


class ConfigError(SimMamlError, ValueError):
    exit_code = 1


class DataError(SimMamlError, ValueError):
    exit_code = 2


class TreeParseError(DataError):
    pass


class IndexFormatError(DataError):
    """Bad magic bytes or unsupported format version."""


class IndexTruncatedError(IndexFormatError):
    pass


class FingerprintError(DataError):
    """Index was built for a different corpus."""


class NumericalError(SimMamlError, ArithmeticError):
    exit_code = 3
