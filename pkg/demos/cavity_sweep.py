# %% [markdown]
# # Fidelity and efficiency of the cavity-mediated h3 preparation

# %%
from __future__ import annotations

import numpy as np

from crio.cavity import CavityParams, fe_csv, fe_sweep, prepare_h3, reflection_coefficients

# %%
rc = reflection_coefficients(CavityParams(kappa=2.0, gamma=0.2))
print(rc)
print("x = r_h1^2 - r_h2^2 =", (rc.r_h1**2 - rc.r_h2**2).real)

# %%
noisy = prepare_h3(noise=CavityParams(2.0, 0.2))
print(np.round(noisy.amps * 2 * np.sqrt(2), 6).real)

# %%
rows = fe_sweep(np.linspace(0.5, 3.0, 6), [0.1, 0.2, 0.3])
print(fe_csv(rows))

# %% [markdown]
# Off resonance, with and without the r0 = -1 clamp.

# %%
for clamp in (True, False):
    print(clamp, fe_csv(fe_sweep([1.0], [0.1], omega=0.3, clamp_r0=clamp)).splitlines()[1])
