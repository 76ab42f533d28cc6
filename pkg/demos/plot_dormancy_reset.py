"""
Gradient dormancy and the soft reset
====================================

Silence most hidden units of a network by zeroing their outgoing weights,
measure the fraction of neurons whose gradient is negligible, then pull the
parameters toward a fresh initialisation by that fraction.
"""

# %%
import numpy as np

from acelab.dormancy import dormancy_degree, soft_reset
from acelab.numerics import adam_init, backward, forward, init_mlp

rng = np.random.default_rng(3)
net = init_mlp([8, 64, 64, 1], rng)
for layer in (1, 2):
    dead = rng.choice(64, size=58, replace=False)
    net.weights[layer][:, dead] = 0.0
x, y = rng.normal(size=(256, 8)), rng.normal(size=(256, 1))


def measure():
    acts = forward(net, x)
    rec, _ = backward(net, acts, 2 * (acts.output - y) / len(x))
    return dormancy_degree(rec, tau=0.025)


# %%
before = measure()
print(f"dormant before: {before.n_dormant}/{before.n_neurons} (alpha {before.alpha:.3f})")
opt = adam_init(net.params())
_, opt, event = soft_reset(net, opt, before.alpha, eta_max=0.8, init_seed=7)
after = measure()
print(f"reset factor {event.eta:.2f}; dormant after: {after.n_dormant}/{after.n_neurons} (alpha {after.alpha:.3f})")
