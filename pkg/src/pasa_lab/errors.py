"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific class that applies instead of bare ValueError/KeyError.
"""


class PasaLabError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(PasaLabError):
    """A config value is out of range or inconsistent; message names the field."""


class GenerationError(PasaLabError):
    """Synthetic data generation could not satisfy its constraints."""

    def __init__(self, message: str, retries: int = 0):
        super().__init__(message)
        self.retries = retries


class DataError(PasaLabError):
    """An input file or corpus is malformed or violates its invariants."""


class NotFoundError(PasaLabError, LookupError):
    """A paper, section, or other entity id does not exist."""


class ContractViolation(PasaLabError):
    """A caller broke an API precondition (bad argument combination)."""


class NumericError(PasaLabError):
    """Training or evaluation produced non-finite numbers."""
