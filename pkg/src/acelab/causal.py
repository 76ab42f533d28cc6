"""Action-to-reward causal weights via DirectLiNGAM.

Two phases: a causal ordering is built by repeatedly picking the most
exogenous variable under the pairwise likelihood-ratio measure (log-cosh
maximum-entropy approximation), then each variable is regressed by ordinary
least squares on everything that precedes it in the ordering.

Adjacency matrices follow the ``B[target, source]`` convention, so the effect
of action ``i`` on the reward is ``B[reward, stateDim + i]``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateVariableError, InsufficientDataError, ShapeError
from .numerics import standardize

MIN_SAMPLES = 100
RIDGE = 1e-6
UNIFORM_FALLBACK = 1e-8

# constants of the maximum-entropy differential entropy approximation
_K1 = 79.047
_K2 = 7.4129
_GAMMA = 0.37457


@dataclass
class ObservationBatch:
    """Rows of ``[s_1..s_dS, a_1..a_dA, r]``."""

    state_dim: int
    action_dim: int
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        width = self.state_dim + self.action_dim + 1
        if self.data.ndim != 2 or self.data.shape[1] != width:
            raise ShapeError(f"expected rows of width {width}, got array of shape {self.data.shape}")
        if self.data.shape[0] < MIN_SAMPLES:
            raise InsufficientDataError(f"need at least {MIN_SAMPLES} samples, got {self.data.shape[0]}")
        if not np.all(np.isfinite(self.data)):
            raise ShapeError("observation batch contains non-finite entries")

    @classmethod
    def from_arrays(cls, states, actions, rewards) -> "ObservationBatch":
        states = np.atleast_2d(np.asarray(states, dtype=float))
        actions = np.atleast_2d(np.asarray(actions, dtype=float))
        rewards = np.asarray(rewards, dtype=float).reshape(-1, 1)
        return cls(states.shape[1], actions.shape[1], np.hstack([states, actions, rewards]))

    @property
    def reward_index(self) -> int:
        return self.state_dim + self.action_dim

    def header(self) -> list[str]:
        return ([f"s{i}" for i in range(self.state_dim)]
                + [f"a{i}" for i in range(self.action_dim)] + ["r"])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for row in self.data:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "ObservationBatch":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], rows[1:]
        if not head or head[-1] != "r":
            raise ShapeError("CSV header must end with the reward column 'r'")
        n_s = sum(h.startswith("s") for h in head)
        n_a = sum(h.startswith("a") for h in head)
        if n_s + n_a + 1 != len(head):
            raise ShapeError(f"unrecognised CSV header {head}")
        return cls(n_s, n_a, np.array([[float(v) for v in r] for r in body]))


@dataclass
class CausalWeights:
    """Signed action-to-reward effects plus the entropy weights derived from them."""

    raw: np.ndarray
    normalized: np.ndarray
    timestamp: int = 0
    flagged: bool = False

    @classmethod
    def uniform(cls, action_dim: int, timestamp: int = 0) -> "CausalWeights":
        return cls(np.zeros(action_dim), np.ones(action_dim), timestamp, False)

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.normalized == 1.0))


def _entropy(u: np.ndarray) -> np.ndarray:
    """Approximate differential entropy of standardized columns (axis 0)."""
    logcosh = np.mean(np.logaddexp(u, -u) - np.log(2.0), axis=0)
    gauss = np.mean(u * np.exp(-0.5 * u * u), axis=0)
    return (1.0 + np.log(2.0 * np.pi)) / 2.0 - _K1 * (logcosh - _GAMMA) ** 2 - _K2 * gauss**2


def _exogeneity_scores(x: np.ndarray) -> np.ndarray:
    """``sum_j min(0, dMI(i, j))^2`` for each column ``i``; smallest is most exogenous.

    ``x`` must have standardized columns.
    """
    n, m = x.shape
    corr = (x.T @ x) / n
    np.fill_diagonal(corr, 1.0)
    h = _entropy(x)
    scores = np.zeros(m)
    for i in range(m):
        others = [j for j in range(m) if j != i]
        if not others:
            break
        c = corr[i, others]
        xo = x[:, others]
        # residual of i on each j, and of each j on i
        r_ij = x[:, [i]] - xo * c
        r_ji = xo - x[:, [i]] * c
        scale = np.sqrt(np.maximum(1.0 - c * c, 1e-300))
        diff = (h[others] + _entropy(r_ij / scale)) - (h[i] + _entropy(r_ji / scale))
        scores[i] = np.sum(np.minimum(0.0, diff) ** 2)
    return scores


def _as_matrix(batch) -> tuple[np.ndarray, Optional[int]]:
    if isinstance(batch, ObservationBatch):
        return batch.data, batch.reward_index
    x = np.asarray(batch, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x, None


def estimate_ordering(batch, sink: Optional[Sequence[int]] = None) -> list[int]:
    """Causal ordering of all columns, most exogenous first.

    For an :class:`ObservationBatch` the reward column is pinned last (a
    same-step reward cannot cause the state or action). Plain arrays impose no
    constraint unless ``sink`` lists columns that must come last.
    """
    x, reward_idx = _as_matrix(batch)
    if sink is None:
        sink = [] if reward_idx is None else [reward_idx]
    sink = list(sink)
    x, constant = standardize(x)
    if constant.any():
        col = int(np.flatnonzero(constant)[0])
        raise DegenerateVariableError(f"column {col} is constant", column=col)

    remaining = list(range(x.shape[1]))
    order: list[int] = []
    x = x.copy()
    while remaining:
        candidates = [i for i in remaining if i not in sink] or remaining
        live = [i for i in remaining if np.std(x[:, i]) > 1e-9]
        explained = [i for i in candidates if i not in live]
        if explained:
            # residual already zero: determined by variables placed earlier
            pick = explained[0]
        elif len(candidates) == 1:
            pick = candidates[0]
        else:
            sub = x[:, live]
            sub = (sub - sub.mean(axis=0)) / sub.std(axis=0)
            scores = _exogeneity_scores(sub)
            cand_scores = [scores[live.index(i)] for i in candidates]
            pick = candidates[int(np.argmin(cand_scores))]
        order.append(pick)
        remaining.remove(pick)
        xm = x[:, pick]
        var_m = np.mean(xm * xm)
        if var_m > 1e-18:
            for i in remaining:
                x[:, i] = x[:, i] - (np.mean(x[:, i] * xm) / var_m) * xm
    return order


def estimate_effects(batch, ordering: Sequence[int]) -> np.ndarray:
    """Least-squares adjacency ``B[target, source]`` under ``ordering``.

    Each variable is regressed (with centring) on all of its predecessors.
    Ill-conditioned predecessor sets fall back to ridge regression with
    penalty ``1e-6`` and a :class:`RuntimeWarning`.
    """
    x, _ = _as_matrix(batch)
    d = x.shape[1]
    if sorted(ordering) != list(range(d)):
        raise ShapeError(f"ordering {list(ordering)} is not a permutation of {d} columns")
    xc = x - x.mean(axis=0)
    n = xc.shape[0]
    adj = np.zeros((d, d))
    for k in range(1, d):
        target = ordering[k]
        preds = list(ordering[:k])
        a = xc[:, preds]
        gram = a.T @ a / n
        rhs = a.T @ xc[:, target] / n
        if np.linalg.cond(gram) > 1e10:
            warnings.warn(f"rank-deficient predecessors for column {target}; using ridge", RuntimeWarning)
            coef = np.linalg.solve(gram + RIDGE * np.eye(len(preds)), rhs)
        else:
            coef = np.linalg.solve(gram, rhs)
        adj[target, preds] = coef
    return adj


def extract_action_reward_weights(adjacency, state_dim: int, action_dim: int,
                                  timestamp: int = 0, sign_policy: str = "abs") -> CausalWeights:
    """Pull the action-to-reward row out of a full adjacency matrix."""
    adjacency = np.asarray(adjacency, dtype=float)
    r = state_dim + action_dim
    raw = adjacency[r, state_dim:r].copy()
    flagged = bool(np.sum(np.abs(raw)) < UNIFORM_FALLBACK)
    return CausalWeights(raw, normalize_weights(raw, sign_policy), timestamp, flagged)


def normalize_weights(raw, sign_policy: str = "abs") -> np.ndarray:
    """Nonnegative weights summing to ``len(raw)``.

    ``sign_policy="abs"`` uses magnitudes; ``"positive"`` drops negative
    effects. A (near) zero total gives all-ones, i.e. plain entropy.
    """
    raw = np.asarray(raw, dtype=float)
    if sign_policy == "abs":
        mag = np.abs(raw)
    elif sign_policy == "positive":
        mag = np.maximum(raw, 0.0)
    else:
        raise ValueError(f"unknown sign policy {sign_policy!r}")
    total = mag.sum()
    if total < UNIFORM_FALLBACK:
        return np.ones_like(raw)
    return raw.size * mag / total


def discover(batch: ObservationBatch, timestamp: int = 0, sign_policy: str = "abs",
             standardize_input: bool = True) -> CausalWeights:
    """Full refresh: ordering, effects, action-to-reward extraction.

    Constant state or action columns are dropped before discovery and get a
    zero effect; a constant reward yields flagged uniform weights.
    """
    x = batch.data
    if standardize_input:
        x, constant = standardize(x)
    else:
        _, constant = standardize(x)
    r = batch.reward_index
    if constant[r]:
        return CausalWeights(np.zeros(batch.action_dim), np.ones(batch.action_dim), timestamp, True)
    keep = np.flatnonzero(~constant)
    sub = x[:, keep]
    sink = [int(np.flatnonzero(keep == r)[0])]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        order = estimate_ordering(sub, sink=sink)
        adj_sub = estimate_effects(sub, order)
    adj = np.zeros((x.shape[1], x.shape[1]))
    adj[np.ix_(keep, keep)] = adj_sub
    return extract_action_reward_weights(adj, batch.state_dim, batch.action_dim, timestamp, sign_policy)
