"""Dense feed-forward networks with exact reverse-mode gradients, Adam, and
small linear-algebra helpers used by causal discovery.

Networks are plain lists of ``(out, in)`` weight matrices and bias vectors.
Hidden layers use the rectifier; the last layer is linear. Inputs may be a
single vector or a ``(batch, in)`` matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateRegressorError,
    InsufficientDataError,
    NumericError,
    ShapeError,
)

__all__ = [
    "MLP",
    "Activations",
    "GradientRecord",
    "ParamGrads",
    "AdamState",
    "init_mlp",
    "forward",
    "backward",
    "input_gradient",
    "adam_init",
    "adam_step",
    "adam_reset",
    "standardize",
    "least_squares_residual",
]


@dataclass
class MLP:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(
                    f"layer {i} expects {w.shape[1]} inputs, "
                    f"layer {i - 1} produces {self.weights[i - 1].shape[0]}"
                )

    @property
    def sizes(self) -> List[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> List[np.ndarray]:
        """Parameter arrays in the order ``[W0, b0, W1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MLP":
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def assign(self, other: "MLP") -> None:
        """Overwrite parameters in place with those of ``other``."""
        for dst, src in zip(self.params(), other.params()):
            dst[...] = src


def init_mlp(sizes: Sequence[int], rng: np.random.Generator) -> MLP:
    """Uniform fan-in initialisation, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MLP(weights, biases)


@dataclass
class Activations:
    """Per-layer values from :func:`forward`.

    ``inputs[l]`` is what layer ``l`` consumed (``inputs[0]`` is the network
    input), ``pre[l]`` its affine output and ``post[l]`` the activated output.
    Everything is stored 2-D; ``squeeze`` records whether the caller passed a
    single vector.
    """

    inputs: List[np.ndarray]
    pre: List[np.ndarray]
    post: List[np.ndarray]
    squeeze: bool = False

    @property
    def output(self) -> np.ndarray:
        out = self.post[-1]
        return out[0] if self.squeeze else out


def forward(net: MLP, x) -> Activations:
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != net.weights[0].shape[1]:
        raise ShapeError(f"input of shape {x.shape} does not fit layer 0 width {net.weights[0].shape[1]}")
    inputs, pre, post = [], [], []
    last = net.n_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ w.T + b
        h = z if i == last else np.maximum(z, 0.0)
        pre.append(z)
        post.append(h)
    return Activations(inputs, pre, post, squeeze)


@dataclass
class GradientRecord:
    """L2 norm of each neuron's incoming-weight gradient row, per layer.

    Bias gradients are deliberately excluded.
    """

    norms: List[np.ndarray]

    @classmethod
    def from_weight_grads(cls, weight_grads: Sequence[np.ndarray]) -> "GradientRecord":
        return cls([np.sqrt(np.sum(g * g, axis=1)) for g in weight_grads])

    @property
    def n_neurons(self) -> int:
        return int(sum(n.size for n in self.norms))


@dataclass
class ParamGrads:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    inputs: np.ndarray = field(repr=False, default=None)

    def as_list(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def backward(net: MLP, acts: Activations, grad_out) -> tuple[GradientRecord, ParamGrads]:
    """Backpropagate ``grad_out`` (dLoss/dOutput) through ``net``.

    Batch gradients are summed over rows, so the caller folds any ``1/N``
    into ``grad_out``. The returned :class:`ParamGrads` also carries the
    gradient with respect to the network input.
    """
    g = np.asarray(grad_out, dtype=float)
    if acts.squeeze and g.ndim == 1:
        g = g[None, :]
    if g.shape != acts.post[-1].shape:
        raise ShapeError(f"output gradient {g.shape} does not match output {acts.post[-1].shape}")
    n = net.n_layers
    dws: List[Optional[np.ndarray]] = [None] * n
    dbs: List[Optional[np.ndarray]] = [None] * n
    for i in range(n - 1, -1, -1):
        if i != n - 1:
            g = g * (acts.pre[i] > 0.0)
        dws[i] = g.T @ acts.inputs[i]
        dbs[i] = g.sum(axis=0)
        g = g @ net.weights[i]
    grad_in = g[0] if acts.squeeze else g
    return GradientRecord.from_weight_grads(dws), ParamGrads(dws, dbs, grad_in)


def input_gradient(net: MLP, acts: Activations, grad_out) -> np.ndarray:
    """Gradient with respect to the network input only (no parameter gradients)."""
    g = np.asarray(grad_out, dtype=float)
    if acts.squeeze and g.ndim == 1:
        g = g[None, :]
    last = net.n_layers - 1
    for i in range(last, -1, -1):
        if i != last:
            g = g * (acts.pre[i] > 0.0)
        g = g @ net.weights[i]
    return g[0] if acts.squeeze else g


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def copy(self) -> "AdamState":
        return AdamState([a.copy() for a in self.m], [a.copy() for a in self.v],
                         self.step, self.lr, self.beta1, self.beta2, self.eps)


def adam_init(params: Sequence[np.ndarray], lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    return AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                     0, lr, beta1, beta2, eps)


def adam_reset(state: AdamState) -> AdamState:
    """Zero both moment estimates and the step counter, in place."""
    for a in state.m + state.v:
        a.fill(0.0)
    state.step = 0
    return state


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]):
    """One bias-corrected Adam update, applied in place.

    ``params`` and ``grads`` are parallel lists; for an :class:`MLP` use
    ``net.params()`` and ``ParamGrads.as_list()`` (two entries per layer).
    Returns ``(params, state)``.
    """
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ShapeError("params, grads and optimizer moments differ in length")
    for k, g in enumerate(grads):
        if g.shape != params[k].shape:
            raise ShapeError(f"gradient {k} has shape {g.shape}, parameter {params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in layer {k // 2}", layer=k // 2)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def standardize(data):
    """Column-wise zero mean / unit (population) variance.

    Returns ``(standardized, constant)`` where ``constant`` is a boolean mask
    of zero-variance columns; those come back as zeros.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise InsufficientDataError(f"need at least 2 rows to standardize, got {x.shape[0]}")
    mean = x.mean(axis=0)
    centered = x - mean
    std = np.sqrt(np.mean(centered**2, axis=0))
    constant = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    out = np.zeros_like(centered)
    ok = ~constant
    out[:, ok] = centered[:, ok] / std[ok]
    return out, constant


def least_squares_residual(x, y):
    """Regress ``y`` on ``x`` (with centring). Returns ``(coef, residual)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError("x and y must be 1-D vectors of equal length")
    if x.size < 2:
        raise InsufficientDataError("need at least 2 samples")
    xc = x - x.mean()
    var = np.mean(xc * xc)
    if var <= 1e-300:
        raise DegenerateRegressorError("regressor has zero variance")
    coef = float(np.mean(xc * (y - y.mean())) / var)
    return coef, y - coef * x
