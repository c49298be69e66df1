"""Error types shared across the package, mapped to CLI exit codes."""


class FedMarketError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class DomainError(FedMarketError, ValueError):
    """An argument is outside the mathematical domain of an operation."""

    exit_code = 2


class ConfigError(FedMarketError, ValueError):
    """A scenario configuration is missing, malformed, or inconsistent."""

    exit_code = 2


class CapacityError(FedMarketError, RuntimeError):
    """A request exceeds what an algorithm can enumerate; use an approximate method."""

    exit_code = 3


class OutputError(FedMarketError, OSError):
    """An output path cannot be written or read back."""

    exit_code = 4
