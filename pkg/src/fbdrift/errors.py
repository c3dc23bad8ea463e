"""Exception types shared across the lab."""


class DriftLabError(Exception):
    """Base class for all package-specific errors."""


class NumericsError(DriftLabError):
    """A quadrature or time march produced NaN/overflow or diverged."""


class ContractError(DriftLabError):
    """An operation was called on inputs it structurally refuses."""


class InfeasibleError(DriftLabError):
    """Requested constants/exponents admit no valid configuration."""


class DomainError(DriftLabError):
    """Evaluation requested at a declared singularity."""
