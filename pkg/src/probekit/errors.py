"""Exception hierarchy shared by all probekit modules."""


class ProbekitError(Exception):
    """Base class for all probekit errors."""


class ConfigError(ProbekitError, ValueError):
    """Invalid configuration, arguments or file contents (CLI exit code 2)."""


class FormatError(ConfigError):
    """Malformed or truncated binary file."""


class NumericalError(ProbekitError, ArithmeticError):
    """A numerical stage failed (CLI exit code 3)."""


class InstabilityError(NumericalError):
    """Time stepping blew up."""


class DivergenceError(NumericalError):
    """An iterative method stopped decreasing its objective."""
