"""Exception hierarchy shared by the library and the command line tool."""


class QmemError(Exception):
    """Base class for all errors raised by qmem."""


class ConfigError(QmemError, ValueError):
    """Malformed scenario, unknown key or invalid parameter value."""


class RegimeError(QmemError, ValueError):
    """A formula is used outside the regime where it is valid."""


class TagFormatError(QmemError, ValueError):
    """Time-tag file does not follow the ``#qmemtags v1`` format."""


class RunIOError(QmemError, OSError):
    """Reading or writing a tag file, manifest or scenario failed."""


class EstimatorError(QmemError, ValueError):
    """An estimator cannot produce a value from the given data."""
