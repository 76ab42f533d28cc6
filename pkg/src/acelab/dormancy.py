"""Gradient dormancy degree and the dormancy-guided soft reset."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Sequence, Union

import numpy as np

from .numerics import MLP, AdamState, GradientRecord, adam_reset, init_mlp

ZERO_MEAN = 1e-12


@dataclass
class LayerDormancy:
    n_neurons: int
    n_dormant: int
    mean_norm: float
    dead: bool = False  # mean norm below 1e-12, every neuron counted dormant


@dataclass
class DormancyReport:
    layers: List[LayerDormancy]
    alpha: float
    tau: float
    step: int = 0

    @property
    def n_neurons(self) -> int:
        return sum(l.n_neurons for l in self.layers)

    @property
    def n_dormant(self) -> int:
        return sum(l.n_dormant for l in self.layers)

    def to_dict(self) -> dict:
        return {"event": "dormancy", "step": self.step, "tau": self.tau, "alpha": self.alpha,
                "layers": [asdict(l) for l in self.layers]}


@dataclass
class ResetEvent:
    step: int
    eta: float
    alpha: float
    networks: List[str] = field(default_factory=list)
    init_seed: int = 0

    def to_dict(self) -> dict:
        return {"event": "reset", **asdict(self)}


def dormancy_degree(grads: Union[GradientRecord, Sequence[GradientRecord]], tau: float,
                    step: int = 0) -> DormancyReport:
    """Fraction of gradient-dormant neurons over every layer of every record.

    Neuron ``i`` of layer ``l`` is dormant when its incoming-weight gradient
    norm is at most ``tau`` times the layer mean. A layer whose mean norm is
    (numerically) zero counts as entirely dormant.
    """
    records = [grads] if isinstance(grads, GradientRecord) else list(grads)
    layers = []
    for rec in records:
        for norms in rec.norms:
            mean = float(np.mean(norms))
            if mean < ZERO_MEAN:
                layers.append(LayerDormancy(norms.size, norms.size, mean, dead=True))
            else:
                layers.append(LayerDormancy(norms.size, int(np.sum(norms / mean <= tau)), mean))
    total = sum(l.n_neurons for l in layers)
    dormant = sum(l.n_dormant for l in layers)
    return DormancyReport(layers, dormant / total if total else 0.0, tau, step)


def reset_factor(alpha: float, eta_max: float) -> float:
    if not 0.0 < eta_max <= 1.0:
        raise ValueError(f"eta_max must lie in (0, 1], got {eta_max}")
    return float(np.clip(alpha, 0.0, eta_max))


def interpolate(old: MLP, fresh: MLP, eta: float) -> MLP:
    """``(1 - eta) * old + eta * fresh``, exact at ``eta`` of 0 and 1."""
    if eta == 0.0:
        return old.copy()
    if eta == 1.0:
        return fresh.copy()
    return MLP([(1.0 - eta) * a + eta * b for a, b in zip(old.weights, fresh.weights)],
               [(1.0 - eta) * a + eta * b for a, b in zip(old.biases, fresh.biases)])


def soft_reset(params: MLP, optimizer: AdamState, alpha: float, eta_max: float, init_seed: int,
               step: int = 0, name: str = "net"):
    """Perturb ``params`` toward a fresh initialisation and clear the optimizer.

    The fresh network is drawn with ``init_seed`` using the same fan-in
    initialiser as training. Parameters are updated in place (so optimizer
    and target bookkeeping keep pointing at the same arrays) and the optimizer
    moments and step counter are zeroed even when ``eta`` is 0.
    Returns ``(params, optimizer, ResetEvent)``.
    """
    eta = reset_factor(alpha, eta_max)
    fresh = init_mlp(params.sizes, np.random.default_rng(init_seed))
    params.assign(interpolate(params, fresh, eta))
    adam_reset(optimizer)
    return params, optimizer, ResetEvent(step, eta, float(alpha), [name], int(init_seed))
