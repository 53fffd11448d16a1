"""Exception types shared across the package."""


class CounterwarpError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(CounterwarpError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class DomainError(CounterwarpError, ValueError):
    """A numeric argument is outside its valid domain."""


class ContractError(CounterwarpError, ValueError):
    """A call violates an API precondition that is not a pure shape issue."""


class FormatError(CounterwarpError, ValueError):
    """A file or byte stream does not match its declared format."""


class ConsistencyError(CounterwarpError, ValueError):
    """Two inputs that must agree (e.g. image/label counts) do not."""


class ConfigError(CounterwarpError, ValueError):
    """An experiment configuration fails schema validation."""
