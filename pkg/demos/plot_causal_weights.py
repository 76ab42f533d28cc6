"""
Causal weights from logged transitions
======================================

Fit the action-to-reward effects on a synthetic batch where only the first
action matters, then watch the weights follow the active slider on
ChainReach as training moves through its stages.
"""

# %%
import matplotlib.pyplot as plt
import numpy as np

from acelab.agent import AgentConfig, train
from acelab.causal import ObservationBatch, discover
from acelab.envs import make_env

rng = np.random.default_rng(1)
n = 5000
s = rng.uniform(-1, 1, size=(n, 2))
a = np.c_[0.5 * s[:, 0] + rng.uniform(-1, 1, n), rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)]
r = 2.0 * a[:, 0] + s[:, 1] + 0.3 * rng.uniform(-1, 1, n)
weights = discover(ObservationBatch.from_arrays(s, a, r))
print("normalised weights:", np.round(weights.normalized, 3))

# %%
# A short ChainReach run. The local buffer and refresh interval are small so
# several refreshes fit in a few thousand steps.
cfg = AgentConfig.for_variant("causalsac", hidden=64, batch_size=128, update_every=2,
                              causal_interval=1500, local_buffer_size=1500)
agent, log = train(cfg, make_env("ChainReach-4D"), 24000, seed=0)
for row in log.weight_trace:
    w = [row[f"w_{i}"] for i in range(4)]
    print(row["step"], "stage", row["majority_stage"], np.round(w, 2))

# %%
steps = [row["step"] for row in log.weight_trace]
fig, ax = plt.subplots()
for i in range(4):
    ax.plot(steps, [row[f"w_{i}"] for row in log.weight_trace], marker=".", label=f"slider {i}")
ax.set_xlabel("environment step")
ax.set_ylabel("normalised causal weight")
ax.legend()
plt.show()
