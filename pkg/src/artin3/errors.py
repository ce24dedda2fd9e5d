"""Exception types shared across the package.

The CLI maps these onto exit codes: input and catalog problems exit 4,
exhausted search budgets exit 3, failed verification checks exit 2.
"""

__all__ = [
    "Artin3Error",
    "InputError",
    "CatalogError",
    "NotNormalError",
    "AbelianizationTypeError",
    "BudgetError",
    "VerificationError",
    "ConsistencyError",
]


class Artin3Error(Exception):
    """Base class for all package errors."""


class InputError(Artin3Error):
    """Malformed or out-of-domain input. CLI exit code 4."""

    exit_code = 4


class CatalogError(InputError):
    """Problems with catalog files or presentation text."""


class NotNormalError(InputError):
    """A subgroup that had to be normal is not."""


class AbelianizationTypeError(InputError):
    """The commutator quotient does not have the required type."""


class BudgetError(Artin3Error):
    """A configured search or enumeration budget was exhausted. Exit code 3."""

    exit_code = 3

    def __init__(self, message, spent=None, budget=None):
        super().__init__(message)
        self.spent = spent
        self.budget = budget


class VerificationError(Artin3Error):
    """A verification battery check failed. CLI exit code 2."""

    exit_code = 2


class ConsistencyError(VerificationError):
    """An internal structural invariant failed; indicates a defect here."""
