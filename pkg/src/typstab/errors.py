"""Exception types raised across the package."""


class TypstabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(TypstabError, ValueError):
    """A distribution, query or experiment configuration is malformed."""


class ArgumentError(TypstabError, ValueError):
    """An operation was called with arguments outside its valid range."""


class InfeasibleError(TypstabError, ValueError):
    """No parameter value satisfies the requested constraint."""


class ContractViolationError(TypstabError, RuntimeError):
    """A mechanism does not meet the stability parameters it declared."""
