"""Error taxonomy shared across the package.

The CLI maps these onto distinct exit codes (see cli module).
"""


class CmvaeError(Exception):
    """Base class for all package errors."""


class ConfigError(CmvaeError):
    """Invalid configuration value, flag combination, or profile name."""


class ContractError(CmvaeError):
    """A documented precondition was violated by the caller."""


class DimensionError(ContractError):
    """Operands have incompatible shapes; message names both shapes."""


class NumericError(CmvaeError):
    """A numeric op produced NaN/Inf, or training diverged."""


class DataError(CmvaeError):
    """Broken or inconsistent data: unknown ids, bad files, bad manifests."""
