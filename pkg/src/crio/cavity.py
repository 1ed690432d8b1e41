"""Photon-cavity-atom CZ link used to build the three-party resource state.

Register layout is ``(photon, atom1, atom2)``. The photon basis is
``(H, V)`` and each atom is ordered ``(g_v, g_h)``, so the qubit encoding
``H -> 0``, ``g_v -> 0``, ``g_h -> 1`` is the plain computational basis.

Rates are in units of the atom-cavity coupling ``g``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ._parallel import pmap
from .core import Operator, StateVector, apply
from .errors import ConfigError

__all__ = [
    "CavityParams",
    "ReflectionCoeffs",
    "FEResult",
    "FERow",
    "IDEAL_COEFFS",
    "hwp_operator",
    "reflection_coefficients",
    "scatter_map",
    "prepare_h3",
    "fidelity_efficiency",
    "fe_point",
    "fe_sweep",
    "fe_csv",
    "FE_CSV_HEADER",
]

FE_CSV_HEADER = "kappa_over_g,gamma_over_g,omega_over_g,F,E"

# index of |photon, atom> in the 4-dim scattering space
_HV, _HH, _VV, _VH = 0, 1, 2, 3  # H g_v, H g_h, V g_v, V g_h


@dataclass(frozen=True)
class CavityParams:
    kappa: float
    gamma: float
    g: float = 1.0
    omega: float = 0.0

    def __post_init__(self) -> None:
        for name in ("kappa", "gamma", "g", "omega"):
            val = float(getattr(self, name))
            if not math.isfinite(val):
                raise ConfigError(f"{name} must be finite")
            object.__setattr__(self, name, val)
        if self.kappa < 0 or self.gamma < 0 or self.g < 0:
            raise ConfigError("kappa, gamma and g must be non-negative")
        if self.kappa == 0 and self.omega == 0:
            raise ConfigError("kappa = omega = 0 makes the reflection coefficients singular")


@dataclass(frozen=True)
class ReflectionCoeffs:
    r_h1: complex
    r_h2: complex
    r0: complex

    def __post_init__(self) -> None:
        for name in ("r_h1", "r_h2", "r0"):
            val = complex(getattr(self, name))
            if abs(val) > 1 + 1e-12:
                raise ValueError(f"|{name}| = {abs(val):.6g} exceeds 1 for a passive cavity")
            object.__setattr__(self, name, val)


IDEAL_COEFFS = ReflectionCoeffs(0.0, 1.0, -1.0)


def hwp_operator(theta: float) -> Operator:
    """Half-wave plate with its major axis at ``theta`` from vertical."""
    c, s = math.cos(2 * theta), math.sin(2 * theta)
    return Operator([[c, s], [s, -c]], tags={"unitary", "hermitian"})


def reflection_coefficients(p: CavityParams) -> ReflectionCoeffs:
    """Reflection amplitudes of a single-sided cavity holding one Lambda atom.

    ``r_h1`` keeps the polarization, ``r_h2`` flips it together with the atom,
    and ``r0`` is the empty-cavity value (the ``g = 0`` limit of ``r_h1``).
    """
    a = 1j * p.omega + p.kappa / 2
    r0 = (1j * p.omega - p.kappa / 2) / a
    if p.g == 0:
        return ReflectionCoeffs(r0, 0.0, r0)
    den = 2 * p.g**2 + a * (1j * p.omega + p.gamma / 2)
    if den == 0:
        raise ConfigError("parameters sit on a pole of the reflection coefficients")
    r_h1 = ((1j * p.omega - p.kappa / 2) + p.kappa * p.g**2 / den) / a
    r_h2 = p.kappa * p.g**2 / (a * den)
    return ReflectionCoeffs(r_h1, r_h2, r0)


def scatter_map(coeffs: ReflectionCoeffs | None = None) -> Operator:
    """Photon-atom reflection map on ``(H, V) x (g_v, g_h)``.

    ``None`` gives the ideal unitary; otherwise the lossy linear map
    built from ``coeffs``.
    """
    c = IDEAL_COEFFS if coeffs is None else coeffs
    m = np.zeros((4, 4), dtype=complex)
    m[_HH, _HH], m[_VV, _HH] = c.r_h1, c.r_h2
    m[_HH, _VV], m[_VV, _VV] = c.r_h2, c.r_h1
    m[_HV, _HV] = c.r0
    m[_VH, _VH] = c.r0
    tags = {"unitary"} if coeffs is None else set()
    return Operator(m, (2, 2), tags=tags)


def _pair(amps: Sequence[complex], name: str) -> np.ndarray:
    v = np.asarray(amps, dtype=complex).reshape(-1)
    if v.size != 2:
        raise ConfigError(f"{name} needs two amplitudes")
    if abs(float(np.vdot(v, v).real) - 1.0) > 1e-10:
        raise ConfigError(f"{name} amplitudes are not normalized")
    return v


def prepare_h3(
    photon: Sequence[complex] = (1 / math.sqrt(2), 1 / math.sqrt(2)),
    atom1: Sequence[complex] = (1 / math.sqrt(2), 1 / math.sqrt(2)),
    atom2: Sequence[complex] = (1 / math.sqrt(2), 1 / math.sqrt(2)),
    noise: CavityParams | None = None,
    *,
    clamp_r0: bool = True,
    transmission: float = 1.0,
) -> StateVector:
    """Entangle a photon with two cavity atoms.

    Amplitudes follow the physical labels: ``photon = (a1, a2)`` on
    ``(H, V)`` and ``atom = (b1, b2)`` on ``(g_h, g_v)``.

    The H part goes straight through. The V part reflects off cavity 1,
    crosses HWP(0), reflects off cavity 1 again, then repeats the same
    sequence at cavity 2 before rejoining the H part.

    With ``noise`` the lossy reflection map is used and the result is
    unnormalized. ``clamp_r0`` pins the empty-cavity amplitude to -1.
    ``transmission`` scales the photon amplitude to model lossy fibre.
    """
    a = _pair(photon, "photon")
    b = _pair(atom1, "atom1")[::-1]
    c = _pair(atom2, "atom2")[::-1]
    if not 0.0 <= transmission <= 1.0:
        raise ConfigError("transmission must lie in [0, 1]")
    if noise is None:
        scat = scatter_map(None)
    else:
        rc = reflection_coefficients(noise)
        if clamp_r0:
            rc = ReflectionCoeffs(rc.r_h1, rc.r_h2, -1.0)
        scat = scatter_map(rc)
    hwp = hwp_operator(0.0)
    line1 = StateVector.product([a[0], 0.0], b, c)
    line2 = StateVector.product([0.0, a[1]], b, c)
    for atom in (1, 2):
        line2 = apply(scat, [0, atom], line2)
        line2 = apply(hwp, [0], line2)
        line2 = apply(scat, [0, atom], line2)
    amps = transmission * (line1.amps + line2.amps)
    if noise is None and transmission == 1.0:
        return StateVector(line1.dims, amps)
    return StateVector(line1.dims, amps, normalized=False)


@dataclass(frozen=True)
class FEResult:
    F: float
    E: float
    N: float


def fidelity_efficiency(psi_eff: StateVector, psi_ideal: StateVector) -> FEResult:
    """``E = |<psi_eff|psi_ideal>|^2``, ``N = ||psi_eff||``, ``F = E / N^2``."""
    if not psi_ideal.normalized:
        raise ValueError("ideal state must be normalized")
    n = psi_eff.norm()
    if n == 0.0:
        raise ValueError("effective state has zero norm")
    e = abs(np.vdot(psi_eff.amps, psi_ideal.amps)) ** 2
    return FEResult(float(e / n**2), float(e), float(n))


@dataclass(frozen=True)
class FERow:
    kappa_over_g: float
    gamma_over_g: float
    omega_over_g: float
    F: float
    E: float


def fe_point(kappa: float, gamma: float, omega: float = 0.0, clamp_r0: bool = True) -> FERow:
    """F and E for balanced inputs at one ``(kappa, gamma, omega)`` point."""
    p = CavityParams(kappa, gamma, 1.0, omega)
    res = fidelity_efficiency(prepare_h3(noise=p, clamp_r0=clamp_r0), prepare_h3())
    return FERow(p.kappa, p.gamma, p.omega, res.F, res.E)


def _fe_task(args):
    return fe_point(*args)


def fe_sweep(
    kappas: Iterable[float],
    gammas: Iterable[float],
    omega: float = 0.0,
    *,
    clamp_r0: bool = True,
    workers: int | None = None,
) -> list[FERow]:
    """Evaluate :func:`fe_point` on the grid, kappa outer and gamma inner."""
    ks, gs = [float(k) for k in kappas], [float(g) for g in gammas]
    if not ks or not gs:
        raise ConfigError("kappa and gamma grids must be non-empty")
    if any(v < 0 for v in ks + gs):
        raise ConfigError("grid values must be non-negative")
    tasks = [(k, g, float(omega), clamp_r0) for k in ks for g in gs]
    return pmap(_fe_task, tasks, workers=workers)


def fe_csv(rows: Iterable[FERow]) -> str:
    lines = [FE_CSV_HEADER]
    for r in rows:
        lines.append(
            f"{r.kappa_over_g:.6f},{r.gamma_over_g:.6f},{r.omega_over_g:.6f},{r.F:.6f},{r.E:.6f}"
        )
    return "\n".join(lines) + "\n"
