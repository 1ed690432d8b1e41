# %% [markdown]
# # Remote rotation through a three-party graph state
#
# Bob holds an angle alpha, Charlie holds a qubit and a secret axis n.
# Alice controls whether the rotation exp(i alpha sigma_n) reaches Charlie.

# %%
from __future__ import annotations

import math

import numpy as np

from crio.core import BlochAxis, StateVector
from crio.protocol import attach_control, bob_transmit, prepare_graph_state, reduce_to_stator, run_crio

# %%
h3 = prepare_graph_state(3)
print(np.round(h3.amps * 2 * math.sqrt(2), 12).real)

# %% [markdown]
# Charlie couples the target to his graph qubit; Alice and Charlie measure in X.
# Every branch leaves the same (Bob, target) stator.

# %%
axis = BlochAxis(1.1, 0.4)
psi = StateVector((2,), [math.cos(0.35), np.exp(0.9j) * math.sin(0.35)])
red = reduce_to_stator(attach_control(h3, 2, psi, axis), axis, psi)
for b in red.branches:
    print(b.transcript.branch, round(b.probability, 6), b.check.holds)

# %%
res = bob_transmit(red.state, 0.8, axis, psi)
print([round(br.fidelity, 12) for br in res.branches])

# %% [markdown]
# End to end, five parties, two channels at once.

# %%
rng = np.random.default_rng(5)
axes = [BlochAxis.random(rng) for _ in range(2)]
targets = [StateVector((2,), [1, 0]), StateVector((2,), [1, 1j], normalized=False).normalize()]
run = run_crio(5, [0.3, -1.2], axes, targets)
print(len(run.branches), "branches, min fidelity", run.min_fidelity)
print(run.branches[0].transcript.to_jsonl())
