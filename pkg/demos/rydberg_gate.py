# %% [markdown]
# # Anti-blockade controlled gate: effective and full models

# %%
from __future__ import annotations

import math

from crio.rydberg import (
    DrivingParams,
    GateMode,
    NoiseParams,
    average_fidelity_inputs,
    effective_couplings,
    simulate_gate,
)

p = DrivingParams()
e = effective_couplings(p)
print(f"V/2pi = {p.V / (2 * math.pi):.2f} MHz, Omega_eff = {e.omega_eff:.4f}, theta = {e.theta:.4f}, phi = {e.phi:.4f}")

# %%
noise = NoiseParams()
for mode in GateMode:
    res = simulate_gate(p, noise, mode, n_points=3)
    print(f"{mode.value:20s} T = {res.T:7.3f} us  F = {res.fidelity:.5f}  max pRR = {res.max_pRR:.3f}")

# %% [markdown]
# Population trace of the resonant holonomic loop.

# %%
res = simulate_gate(p, noise, GateMode.FULL_RESONANT, n_points=11)
print(res.trace.to_csv())

# %% [markdown]
# Average over input states at the operating angles (channel built once).

# %%
for mode in (GateMode.EFFECTIVE_RESONANT, GateMode.FULL_RESONANT):
    print(mode.value, average_fidelity_inputs(p, noise, mode, (math.pi / 2, math.pi)))
