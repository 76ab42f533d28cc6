"""Exact dynamic programming with the causality-aware entropy bonus.

Finite MDPs with a factored action space: a joint action is a tuple
``(a_1, ..., a_D)`` flattened in C order, and policies are products of one
categorical per action dimension. For such policies the weighted entropy is
``sum_i w_i * H(pi_i(.|s))``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConvergenceError, ShapeError

_PROB_TOL = 1e-12


@dataclass
class TabularMdp:
    transitions: np.ndarray  # (S, A, S')
    rewards: np.ndarray  # (S, A)
    action_dims: tuple
    gamma: float
    r_max: Optional[float] = None

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=float)
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.action_dims = tuple(int(k) for k in self.action_dims)
        s, a = self.rewards.shape
        if a != math.prod(self.action_dims):
            raise ShapeError(f"{a} joint actions but action dims {self.action_dims}")
        if self.transitions.shape != (s, a, s):
            raise ShapeError(f"transition tensor {self.transitions.shape}, expected {(s, a, s)}")
        if np.any(self.transitions < 0) or np.any(np.abs(self.transitions.sum(axis=2) - 1.0) > _PROB_TOL):
            raise ShapeError("each P(.|s,a) must be a probability vector")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.gamma}")
        if self.r_max is None:
            self.r_max = float(np.max(np.abs(self.rewards)))
        elif np.max(np.abs(self.rewards)) > self.r_max:
            raise ValueError("reward exceeds declared r_max")

    @property
    def n_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[1]

    def to_json(self) -> str:
        return json.dumps({
            "n_states": self.n_states,
            "action_dims": list(self.action_dims),
            "gamma": self.gamma,
            "r_max": self.r_max,
            "transitions": self.transitions.tolist(),
            "rewards": self.rewards.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "TabularMdp":
        doc = json.loads(text)
        mdp = cls(doc["transitions"], doc["rewards"], doc["action_dims"], doc["gamma"], doc["r_max"])
        if mdp.n_states != doc["n_states"]:
            raise ShapeError("n_states does not match tensor shapes")
        return mdp


def random_mdp(rng: np.random.Generator, n_states: int, action_dims=(2, 2), gamma=0.9,
               r_max=1.0) -> TabularMdp:
    a = math.prod(action_dims)
    p = rng.dirichlet(np.ones(n_states), size=(n_states, a))
    # renormalise so rows sum to one to machine precision
    p /= p.sum(axis=2, keepdims=True)
    r = rng.uniform(-r_max, r_max, size=(n_states, a))
    return TabularMdp(p, r, action_dims, gamma, r_max)


@dataclass
class FactoredPolicy:
    """``probs[i][s, k]`` is the probability of value ``k`` on dimension ``i`` in state ``s``."""

    probs: List[np.ndarray]

    def __post_init__(self):
        self.probs = [np.asarray(p, dtype=float) for p in self.probs]
        for p in self.probs:
            if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > _PROB_TOL):
                raise ShapeError("each per-dimension categorical must be a probability vector")

    @classmethod
    def uniform(cls, n_states: int, action_dims: Sequence[int]) -> "FactoredPolicy":
        return cls([np.full((n_states, k), 1.0 / k) for k in action_dims])

    @classmethod
    def random(cls, rng: np.random.Generator, n_states: int, action_dims: Sequence[int]) -> "FactoredPolicy":
        probs = []
        for k in action_dims:
            p = rng.dirichlet(np.ones(k), size=n_states)
            probs.append(p / p.sum(axis=1, keepdims=True))
        return cls(probs)

    @property
    def action_dims(self) -> tuple:
        return tuple(p.shape[1] for p in self.probs)

    @property
    def n_states(self) -> int:
        return self.probs[0].shape[0]

    def joint(self) -> np.ndarray:
        """``(S, A)`` joint action probabilities in C-order."""
        out = self.probs[0]
        for p in self.probs[1:]:
            out = (out[:, :, None] * p[:, None, :]).reshape(out.shape[0], -1)
        return out

    def copy(self) -> "FactoredPolicy":
        return FactoredPolicy([p.copy() for p in self.probs])


def _weights(weights, n_dims: int) -> np.ndarray:
    w = np.asarray(getattr(weights, "normalized", weights), dtype=float)
    if w.shape != (n_dims,):
        raise ShapeError(f"expected {n_dims} weights, got shape {w.shape}")
    return w


def _xlogx(p: np.ndarray) -> np.ndarray:
    return np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)


def dimension_entropies(policy: FactoredPolicy) -> np.ndarray:
    """``(S, D)`` Shannon entropy of each per-dimension categorical."""
    return np.stack([-_xlogx(p).sum(axis=1) for p in policy.probs], axis=1)


def causal_entropies(policy: FactoredPolicy, weights) -> np.ndarray:
    w = _weights(weights, len(policy.probs))
    return dimension_entropies(policy) @ w


def causal_entropy(policy: FactoredPolicy, state: int, weights) -> float:
    return float(causal_entropies(policy, weights)[state])


def joint_causal_entropy(joint_probs, action_dims: Sequence[int], weights) -> float:
    """``-E_{a~p}[sum_i w_i log p_i(a_i)]`` for one state's joint distribution.

    ``p_i`` are the marginals of ``joint_probs``. Agrees with
    :func:`causal_entropy` when the joint factorises.
    """
    w = _weights(weights, len(action_dims))
    joint = np.asarray(joint_probs, dtype=float).reshape(action_dims)
    total = 0.0
    for i in range(len(action_dims)):
        axes = tuple(j for j in range(len(action_dims)) if j != i)
        marginal = joint.sum(axis=axes)
        logm = np.log(np.where(marginal > 0, marginal, 1.0))
        shape = [1] * len(action_dims)
        shape[i] = action_dims[i]
        total -= w[i] * float(np.sum(joint * logm.reshape(shape)))
    return total


def max_causal_entropy(action_dims: Sequence[int], weights) -> float:
    w = _weights(weights, len(action_dims))
    return float(np.dot(w, np.log(np.asarray(action_dims, dtype=float))))


def soft_state_values(policy: FactoredPolicy, weights, q: np.ndarray, alpha: float) -> np.ndarray:
    """``V(s) = E_{a~pi}[Q(s,a)] + alpha * H_c(pi(.|s))``."""
    return np.sum(policy.joint() * q, axis=1) + alpha * causal_entropies(policy, weights)


def apply_causal_bellman(mdp: TabularMdp, policy: FactoredPolicy, weights, q, alpha: float) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != mdp.rewards.shape:
        raise ShapeError(f"Q table {q.shape} does not match MDP {mdp.rewards.shape}")
    v = soft_state_values(policy, weights, q, alpha)
    return mdp.rewards + mdp.gamma * (mdp.transitions @ v)


def q_bound(mdp: TabularMdp, weights, alpha: float) -> float:
    return (mdp.r_max + alpha * max_causal_entropy(mdp.action_dims, weights)) / (1.0 - mdp.gamma)


def iteration_budget(mdp: TabularMdp, weights, alpha: float, tol: float, margin: int = 50,
                     start_norm: float = 0.0) -> int:
    """Sweeps needed from a start of sup-norm ``start_norm``, plus ``margin``."""
    bound = max(q_bound(mdp, weights, alpha) + start_norm, tol)
    need = math.log(tol * (1.0 - mdp.gamma) / bound) / math.log(mdp.gamma)
    return max(0, math.ceil(need)) + margin


def policy_evaluation_fixed_point(mdp: TabularMdp, policy: FactoredPolicy, weights, alpha: float,
                                  tol: float = 1e-10, q0=None, margin: int = 50) -> np.ndarray:
    """Iterate the causal Bellman operator until the sup-norm step is below ``tol``.

    Raises :class:`ConvergenceError` if the contraction bound is exceeded,
    which can only happen if the operator is not a contraction.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = np.zeros_like(mdp.rewards) if q0 is None else np.array(q0, dtype=float)
    budget = iteration_budget(mdp, weights, alpha, tol, margin, float(np.max(np.abs(q))))
    for _ in range(budget):
        nxt = apply_causal_bellman(mdp, policy, weights, q, alpha)
        if np.max(np.abs(nxt - q)) < tol:
            return nxt
        q = nxt
    raise ConvergenceError(f"policy evaluation did not reach tol={tol} within {budget} iterations")


def _marginal_q(qs: np.ndarray, probs: List[np.ndarray], i: int) -> np.ndarray:
    """Expected ``Q`` over every dimension except ``i``."""
    out = qs
    for j in range(len(probs) - 1, -1, -1):
        if j != i:
            out = np.tensordot(out, probs[j], axes=([j], [0]))
    return out


def _coordinate_maximiser(marg: np.ndarray, temp: float) -> np.ndarray:
    if temp <= 0.0:
        out = np.zeros_like(marg)
        out[int(np.argmax(marg))] = 1.0
        return out
    z = (marg - marg.max()) / temp
    e = np.exp(z)
    return e / e.sum()


def _objective(qs: np.ndarray, temps: np.ndarray, probs: List[np.ndarray]) -> float:
    val = _marginal_q(qs, probs, 0) @ probs[0]
    ent = sum(t * -float(_xlogx(p).sum()) for t, p in zip(temps, probs))
    return float(val) + ent


def _ascend(qs, temps, start, tol, max_sweeps):
    probs = [p.copy() for p in start]
    for _ in range(max_sweeps):
        change = 0.0
        for i in range(len(probs)):
            new = _coordinate_maximiser(_marginal_q(qs, probs, i), temps[i])
            change = max(change, float(np.max(np.abs(new - probs[i]))))
            probs[i] = new
        if change < tol:
            break
    return probs


def policy_improvement(mdp: TabularMdp, q, weights, alpha: float, init: Optional[FactoredPolicy] = None,
                       tol: float = 1e-10, max_sweeps: int = 10_000) -> FactoredPolicy:
    """Per-state maximiser of ``E_{a~pi}[Q(s,a)] + alpha * H_c(pi(.|s))`` over factored policies.

    Coordinate ascent where each coordinate step is a closed-form softmax at
    temperature ``alpha * w_i`` (greedy when that is zero). Several starts are
    tried and the best kept; ``init`` is always one of them, so the result is
    never worse than ``init``. With ``alpha == 0`` the joint argmax is
    returned directly (ties to the lowest joint index).
    """
    q = np.asarray(q, dtype=float)
    dims = mdp.action_dims
    w = _weights(weights, len(dims))
    temps = alpha * w
    if init is None:
        init = FactoredPolicy.uniform(mdp.n_states, dims)
    out = [np.zeros((mdp.n_states, k)) for k in dims]
    n_corners = min(mdp.n_actions, 8)
    for s in range(mdp.n_states):
        qs = q[s].reshape(dims)
        if not np.any(temps > 0):
            best = [np.eye(k)[i] for k, i in zip(dims, np.unravel_index(int(np.argmax(q[s])), dims))]
        else:
            starts = [[p[s] for p in init.probs], [np.full(k, 1.0 / k) for k in dims]]
            for flat in np.argsort(-q[s], kind="stable")[:n_corners]:
                idx = np.unravel_index(int(flat), dims)
                starts.append([np.eye(k)[i] for k, i in zip(dims, idx)])
            best, best_val = None, -np.inf
            for start in starts:
                cand = _ascend(qs, temps, start, tol, max_sweeps)
                val = _objective(qs, temps, cand)
                if val > best_val:
                    best, best_val = cand, val
        for i in range(len(dims)):
            out[i][s] = best[i]
    return FactoredPolicy(out)


def policy_iteration(mdp: TabularMdp, weights, alpha: float, tol: float = 1e-8,
                     eval_tol: float = 1e-12, history: Optional[list] = None):
    """Alternate exact evaluation and improvement from the uniform policy.

    Returns ``(policy, Q)``. If ``history`` is a list, the Q table of every
    evaluated policy is appended to it in order.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    policy = FactoredPolicy.uniform(mdp.n_states, mdp.action_dims)
    max_rounds = 10 * mdp.n_states * mdp.n_actions
    for _ in range(max_rounds):
        q = policy_evaluation_fixed_point(mdp, policy, weights, alpha, eval_tol)
        if history is not None:
            history.append(q)
        new = policy_improvement(mdp, q, weights, alpha, init=policy)
        change = max(float(np.max(np.abs(a - b))) for a, b in zip(new.probs, policy.probs))
        policy = new
        if change < tol:
            q = policy_evaluation_fixed_point(mdp, policy, weights, alpha, eval_tol)
            if history is not None:
                history.append(q)
            return policy, q
    raise ConvergenceError(f"policy iteration still changing after {max_rounds} rounds")
