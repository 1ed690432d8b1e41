"""Controlled remote implementation of operations: protocol, cavity link and Rydberg gate simulation."""

from __future__ import annotations

__version__ = "0.1.0"

from .cavity import CavityParams, fe_point, fe_sweep, prepare_h3, reflection_coefficients
from .core import (
    BlochAxis,
    DensityMatrix,
    HarmonicHamiltonian,
    Operator,
    StateVector,
    integrate_master_equation,
    measure_branches,
    partial_trace,
)
from .errors import (
    ConfigError,
    CrioError,
    DimensionError,
    IntegrationError,
    NonHermitianError,
    ProtocolOrderError,
    RegimeError,
)
from .protocol import bob_transmit, prepare_graph_state, reduce_to_stator, run_crio
from .rydberg import (
    DrivingParams,
    GateMode,
    NoiseParams,
    average_fidelity_angles,
    average_fidelity_inputs,
    holonomic_target_unitary,
    simulate_gate,
)

__all__ = [
    "__version__",
    "BlochAxis",
    "CavityParams",
    "ConfigError",
    "CrioError",
    "DensityMatrix",
    "DimensionError",
    "DrivingParams",
    "GateMode",
    "HarmonicHamiltonian",
    "IntegrationError",
    "NoiseParams",
    "NonHermitianError",
    "Operator",
    "ProtocolOrderError",
    "RegimeError",
    "StateVector",
    "average_fidelity_angles",
    "average_fidelity_inputs",
    "bob_transmit",
    "fe_point",
    "fe_sweep",
    "holonomic_target_unitary",
    "integrate_master_equation",
    "measure_branches",
    "partial_trace",
    "prepare_graph_state",
    "prepare_h3",
    "reduce_to_stator",
    "reflection_coefficients",
    "run_crio",
    "simulate_gate",
]
