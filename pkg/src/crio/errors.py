"""Exception types shared across the package."""

from __future__ import annotations


class CrioError(Exception):
    """Base class for all package errors."""


class DimensionError(CrioError, ValueError):
    """Operand shapes or subsystem dimensions do not match."""


class NonHermitianError(CrioError, ValueError):
    """A Hamiltonian or density matrix failed the hermiticity check."""


class BasisError(CrioError, ValueError):
    """A measurement basis is not orthonormal or does not span the subsystem."""


class IntegrationError(CrioError, RuntimeError):
    """The ODE integrator could not reach the requested accuracy."""


class ProtocolOrderError(CrioError, RuntimeError):
    """A conditional action was attempted before the message it depends on."""


class RegimeError(CrioError, ValueError):
    """Driving parameters fall outside the validity region of the effective model."""


class ConfigError(CrioError, ValueError):
    """A run configuration failed validation."""
