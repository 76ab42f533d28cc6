"""Randomised property suites: soft Bellman contraction, policy iteration,
linear-SEM recovery, gradient checks, dormancy arithmetic and the SAC
reduction. Each suite returns a :class:`SuiteResult`."""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np

from .agent import Agent, AgentConfig, train
from .causal import ObservationBatch, estimate_effects, estimate_ordering
from .dormancy import dormancy_degree, interpolate, soft_reset
from .envs import make_env
from .numerics import GradientRecord, adam_init, backward, forward, init_mlp
from .tabular import (FactoredPolicy, apply_causal_bellman, causal_entropies, policy_iteration,
                      random_mdp)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    data: Dict = field(default_factory=dict)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(fn: Callable[..., SuiteResult]):
    def wrapper(*args, **kwargs):
        start = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - start
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ------------------------------------------------------------------ tabular


@_timed
def contraction_suite(n: int = 200, seed: int = 0) -> SuiteResult:
    """``|T Q1 - T Q2|_inf <= gamma |Q1 - Q2|_inf + 1e-12`` on random instances."""
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(n):
        dims = tuple(int(k) for k in rng.integers(2, 4, size=rng.integers(1, 4)))
        mdp = random_mdp(rng, int(rng.integers(1, 9)), dims, gamma=float(rng.uniform(0.1, 0.995)))
        pol = FactoredPolicy.random(rng, mdp.n_states, dims)
        w = rng.uniform(0, 2, len(dims))
        w *= len(dims) / w.sum()
        alpha = float(rng.uniform(0, 2))
        q1 = rng.normal(scale=10, size=mdp.rewards.shape)
        q2 = rng.normal(scale=10, size=mdp.rewards.shape)
        lhs = np.max(np.abs(apply_causal_bellman(mdp, pol, w, q1, alpha) - apply_causal_bellman(mdp, pol, w, q2, alpha)))
        worst = max(worst, lhs - mdp.gamma * np.max(np.abs(q1 - q2)))
    return SuiteResult("contraction", bool(worst <= 1e-12), f"{n} instances, worst excess {worst:.3g}",
                       data={"worst_excess": float(worst)})


def exact_policy_q(mdp, policy: FactoredPolicy, weights, alpha: float) -> np.ndarray:
    """Q of a fixed policy by a direct linear solve, independent of the sweep-based evaluator."""
    s, a = mdp.rewards.shape
    pi = policy.joint()
    p = mdp.transitions.reshape(s * a, s)
    mix = np.zeros((s, s * a))
    for st in range(s):
        mix[st, st * a:(st + 1) * a] = pi[st]
    lhs = np.eye(s * a) - mdp.gamma * p @ mix
    rhs = mdp.rewards.reshape(-1) + mdp.gamma * alpha * p @ causal_entropies(policy, weights)
    return np.linalg.solve(lhs, rhs).reshape(s, a)


@_timed
def policy_improvement_suite(n_mdps: int = 50, n_random: int = 1000, seed: int = 1) -> SuiteResult:
    """Monotone policy-iteration rounds and dominance over random policies."""
    rng = np.random.default_rng(seed)
    worst_round, worst_dom = np.inf, np.inf
    for _ in range(n_mdps):
        mdp = random_mdp(rng, int(rng.integers(1, 9)), (2, 2), gamma=float(rng.uniform(0.5, 0.95)))
        w = rng.uniform(0.1, 2, 2)
        w *= 2 / w.sum()
        alpha = float(rng.uniform(0.05, 1.0))
        trace: List[np.ndarray] = []
        _, q = policy_iteration(mdp, w, alpha, history=trace)
        for prev, nxt in zip(trace, trace[1:]):
            worst_round = min(worst_round, float(np.min(nxt - prev)))
        for _ in range(n_random):
            other = FactoredPolicy.random(rng, mdp.n_states, (2, 2))
            worst_dom = min(worst_dom, float(np.min(q - exact_policy_q(mdp, other, w, alpha))))
    ok = worst_round >= -1e-9 and worst_dom >= -1e-6
    return SuiteResult("policy improvement", ok,
                       f"{n_mdps} MDPs, worst round step {worst_round:.3g}, worst dominance margin {worst_dom:.3g}",
                       data={"worst_round": worst_round, "worst_dominance": worst_dom})


# ------------------------------------------------------------------- causal


def random_action_reward_sem(rng: np.random.Generator, n: int = 10000):
    """Linear SEM with uniform noise over states, actions and a reward sink.

    Returns ``(batch, effects, null)``: true direct action-to-reward effects and
    the mask of actions without an edge into the reward.
    """
    while True:
        ds = int(rng.integers(1, 4))
        da = int(rng.integers(2, 8 - ds))
        if ds + da + 1 <= 8:
            break
    p = ds + da
    coef = np.zeros((p + 1, p + 1))  # coef[target, source], topological order = index order

    def edge():
        return float(rng.choice([-1, 1]) * rng.uniform(0.5, 1.5))

    for t in range(p):
        for src in range(t):
            if rng.uniform() < 0.4:
                coef[t, src] = edge()
    null = rng.uniform(size=da) < 0.4
    null[rng.integers(da)] = True  # at least one null edge
    if null.all():
        null[0] = False  # and at least one real one
    for j in range(da):
        if not null[j]:
            coef[p, ds + j] = edge()
    for i in range(ds):
        if rng.uniform() < 0.6:
            coef[p, i] = edge()
    scales = rng.uniform(0.5, 1.5, size=p + 1)
    x = np.zeros((n, p + 1))
    for t in range(p + 1):
        x[:, t] = x @ coef[t] + scales[t] * rng.uniform(-1, 1, size=n)
    batch = ObservationBatch(ds, da, x)
    return batch, coef[p, ds:p], null


@_timed
def causal_recovery_suite(n_trials: int = 100, n: int = 10000, seed: int = 2) -> SuiteResult:
    """Action-to-reward effects within 0.1 of truth; null edges below 0.05."""
    rng = np.random.default_rng(seed)
    effect_ok = null_ok = 0
    worst_err = worst_null = 0.0
    for _ in range(n_trials):
        batch, truth, null = random_action_reward_sem(rng, n)
        adj = estimate_effects(batch, estimate_ordering(batch))
        est = adj[batch.reward_index, batch.state_dim:batch.reward_index]
        err = float(np.max(np.abs(est[~null] - truth[~null])))
        nul = float(np.max(np.abs(est[null])))
        effect_ok += err < 0.1
        null_ok += nul < 0.05
        worst_err, worst_null = max(worst_err, err), max(worst_null, nul)
    need = math.ceil(0.95 * n_trials)
    ok = effect_ok >= need and null_ok >= need
    return SuiteResult("causal recovery", ok,
                       f"effects ok {effect_ok}/{n_trials}, null edges ok {null_ok}/{n_trials} "
                       f"(worst err {worst_err:.3g}, worst null {worst_null:.3g})",
                       data={"effect_ok": effect_ok, "null_ok": null_ok})


# ---------------------------------------------------------------- gradients


def _rel_ok(analytic: float, numeric: float, rtol: float, atol: float) -> bool:
    return abs(analytic - numeric) <= max(rtol * max(abs(analytic), abs(numeric)), atol)


def _check_all(params: List[np.ndarray], grads: List[np.ndarray], loss: Callable[[], float], h: float,
               rtol: float, atol: float) -> tuple[int, int]:
    bad = total = 0
    for p, g in zip(params, grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            up = loss()
            flat[k] = old - h
            down = loss()
            flat[k] = old
            total += 1
            bad += not _rel_ok(gflat[k], (up - down) / (2 * h), rtol, atol)
    return bad, total


@_timed
def gradient_suite(n_nets: int = 20, seed: int = 3, rtol: float = 1e-4, atol: float = 1e-9) -> SuiteResult:
    """Central differences against every parameter gradient: a generic MLP
    regression loss plus the agent's critic and reparameterised actor losses."""
    rng = np.random.default_rng(seed)
    bad = total = 0
    for k in range(n_nets):
        sizes = [int(rng.integers(1, 6))] + [int(rng.integers(2, 8)) for _ in range(rng.integers(1, 3))] + \
                [int(rng.integers(1, 4))]
        net = init_mlp(sizes, rng)
        x = rng.normal(size=(4, sizes[0]))
        y = rng.normal(size=(4, sizes[-1]))

        def mlp_loss():
            return float(np.sum((forward(net, x).output - y) ** 2))

        _, g = backward(net, forward(net, x), 2 * (forward(net, x).output - y))
        b, t = _check_all(net.params(), g.as_list(), mlp_loss, 1e-6, rtol, atol)
        bad, total = bad + b, total + t

        agent = Agent(3, 2, AgentConfig(hidden=5, batch_size=4), seed=k)
        agent.weights.normalized[...] = rng.dirichlet([1.0, 1.0]) * 2
        agent.log_alpha[0] = math.log(rng.uniform(0.1, 1.0))
        for _ in range(8):
            agent.observe(rng.normal(size=3), rng.uniform(-1, 1, 2), rng.normal(), rng.normal(size=3), False)
        batch = agent.buffer.sample(rng, 4)
        noise = rng.normal(size=(4, 2))
        y_t = agent.critic_target(batch, rng.normal(size=(4, 2)))
        _, _, cg = agent.critic_grads(batch, y_t)
        b, t = _check_all(agent.critic1.params(), cg[0].as_list(),
                          lambda: agent.critic_grads(batch, y_t)[0], 1e-6, rtol, atol)
        bad, total = bad + b, total + t
        _, _, ag, _ = agent.actor_grads(batch, noise)
        b, t = _check_all(agent.actor.params(), ag.as_list(),
                          lambda: agent.actor_grads(batch, noise)[0], 1e-6, rtol, atol)
        bad, total = bad + b, total + t
    return SuiteResult("gradients", bad == 0, f"{total - bad}/{total} parameter gradients within {rtol:g} relative",
                       data={"bad": bad, "total": total})


# ----------------------------------------------------------------- dormancy


def stuck_network_dormancy(seed: int, tau: float = 0.025, dead_fraction: float = 0.9) -> tuple[float, float]:
    """Dormancy before and right after one soft reset of a network whose
    hidden units mostly have zero outgoing weights (hence zero gradient)."""
    rng = np.random.default_rng(seed)
    net = init_mlp([8, 64, 64, 1], rng)
    for layer in (1, 2):
        n_in = net.weights[layer].shape[1]
        dead = rng.choice(n_in, size=int(dead_fraction * n_in), replace=False)
        net.weights[layer][:, dead] = 0.0
    x = rng.normal(size=(256, 8))
    y = rng.normal(size=(256, 1))

    def alpha():
        acts = forward(net, x)
        rec, _ = backward(net, acts, 2 * (acts.output - y) / len(x))
        return dormancy_degree(rec, tau).alpha

    before = alpha()
    soft_reset(net, adam_init(net.params()), before, 0.8, init_seed=seed + 1000)
    return before, alpha()


@_timed
def dormancy_suite(n_seeds: int = 20, seed: int = 4) -> SuiteResult:
    checks = {}
    rep = dormancy_degree(GradientRecord([np.array([0.0, 0.0, 4.0, 4.0])]), 0.025)
    checks["fixture [0,0,4,4]"] = rep.layers[0].mean_norm == 2.0 and rep.layers[0].n_dormant == 2 and rep.alpha == 0.5
    checks["equal norms"] = dormancy_degree(GradientRecord([np.full(6, 1.7)]), 0.025).alpha == 0.0
    checks["dead layer"] = dormancy_degree(GradientRecord([np.zeros(3), np.ones(2)]), 0.025).alpha == 0.6

    rng = np.random.default_rng(seed)
    mono = True
    for _ in range(200):
        rec = GradientRecord([rng.exponential(size=16) * (rng.uniform(size=16) > 0.3), rng.exponential(size=5)])
        taus = np.sort(rng.uniform(0, 2, size=5))
        alphas = [dormancy_degree(rec, t).alpha for t in taus]
        mono &= all(0.0 <= a <= b <= 1.0 for a, b in zip(alphas, alphas[1:]))
    checks["monotone in tau"] = mono

    net = init_mlp([4, 8, 2], rng)
    before = [p.copy() for p in net.params()]
    soft_reset(net, adam_init(net.params()), 0.0, 0.8, init_seed=1)
    checks["eta=0 identity"] = all(a.tobytes() == b.tobytes() for a, b in zip(before, net.params()))
    soft_reset(net, adam_init(net.params()), 1.0, 1.0, init_seed=2)
    fresh = init_mlp(net.sizes, np.random.default_rng(2))
    checks["eta=1 replacement"] = all(a.tobytes() == b.tobytes() for a, b in zip(fresh.params(), net.params()))
    old = init_mlp([4, 8, 2], rng)
    soft_reset(cur := old.copy(), adam_init(cur.params()), 0.93, 0.8, init_seed=3)
    fresh = init_mlp(old.sizes, np.random.default_rng(3))
    checks["eta capped at 0.8"] = all(np.allclose(c, 0.2 * o + 0.8 * f, rtol=1e-15, atol=1e-16)
                                      for c, o, f in zip(cur.params(), old.params(), fresh.params()))
    x, y = interpolate(old, fresh, 0.3), interpolate(fresh, old, 0.7)
    checks["interpolation symmetry"] = all(np.allclose(a, b, rtol=1e-14, atol=1e-16)
                                           for a, b in zip(x.params(), y.params()))

    lowered = 0
    for s in range(n_seeds):
        b, a = stuck_network_dormancy(s)
        lowered += a < b
    checks[f"stuck reset lowers dormancy {lowered}/{n_seeds}"] = lowered == n_seeds
    failed = [k for k, v in checks.items() if not v]
    return SuiteResult("dormancy", not failed, "all checks hold" if not failed else f"failed: {failed}",
                       data={"checks": checks, "lowered": lowered})


# ------------------------------------------------------------ SAC reduction


def _param_digest(agent: Agent) -> str:
    h = hashlib.sha256()
    for net in agent.networks().values():
        for p in net.params():
            h.update(p.tobytes())
    h.update(agent.log_alpha.tobytes())
    return h.hexdigest()


@_timed
def sac_reduction_check(n_updates: int = 500, seed: int = 5, env: str = "ChainReach-4D") -> SuiteResult:
    """Seed-matched runs of the full method (uniform weights, reset never due)
    and plain SAC produce bit-identical parameters after every update."""
    kw = dict(hidden=32, batch_size=64, causal_interval=10**9, reset_interval=10**9)
    steps = n_updates + kw["batch_size"] - 1
    traces = {}
    for variant in ("ace", "sac"):
        digests: List[str] = []

        def record(agent, t):
            if agent.n_updates and (not digests or agent.n_updates > len(digests)):
                digests.append(_param_digest(agent))

        train(AgentConfig.for_variant(variant, **kw), make_env(env), steps, seed, callback=record)
        traces[variant] = digests
    same = traces["ace"] == traces["sac"] and len(traces["ace"]) == n_updates
    return SuiteResult("SAC reduction", same,
                       f"{len(traces['ace'])} updates compared, "
                       f"{sum(a == b for a, b in zip(traces['ace'], traces['sac']))} identical",
                       data={"n_updates": len(traces["ace"])})


PROPERTY_SUITES = [contraction_suite, policy_improvement_suite, causal_recovery_suite, gradient_suite,
                   dormancy_suite, sac_reduction_check]


def run_all(echo: Callable[[str], None] = print) -> List[SuiteResult]:
    results = []
    for suite in PROPERTY_SUITES:
        res = suite()
        echo(res.line())
        results.append(res)
    return results


# ------------------------------------------------------ desk-scale training

# Table defaults shrunk to fit a single CPU core (see README).
DESK_AGENT = dict(hidden=64, batch_size=128, update_every=2, causal_interval=2500, local_buffer_size=2500,
                  reset_interval=10000)


def tracking_hits(weight_trace: List[dict]) -> List[bool]:
    """Per refresh: does the majority stage's dimension outweigh the mean of the others?"""
    hits = []
    for row in weight_trace:
        dims = sorted(k for k in row if k.startswith("w_"))
        w = np.array([row[d] for d in dims], dtype=float)
        k = int(row["majority_stage"])
        hits.append(bool(w[k] > np.delete(w, k).mean()))
    return hits


@_timed
def weight_tracking_experiment(seeds=range(6), steps: int = 50000, variant: str = "ace", share: float = 0.7,
                               env: str = "ChainReach-4D", agent_overrides: Dict = None,
                               echo: Callable[[str], None] = lambda s: None) -> SuiteResult:
    """Does the causal weight follow the stage-active dimension on ChainReach?

    Ground truth at each refresh is the stage occupying most of the local
    buffer. A seed passes when at least ``share`` of its refreshes rank that
    dimension above the mean of the rest; the experiment passes on a
    majority of seeds.
    """
    cfg = AgentConfig.for_variant(variant, **{**DESK_AGENT, **(agent_overrides or {})})
    fractions = {}
    for seed in seeds:
        _, log = train(cfg, make_env(env), steps, seed)
        hits = tracking_hits(log.weight_trace)
        fractions[seed] = float(np.mean(hits)) if hits else 0.0
        echo(f"seed {seed}: {sum(hits)}/{len(hits)} refreshes track the active dimension")
    good = sum(f >= share for f in fractions.values())
    ok = good > len(fractions) / 2
    return SuiteResult("weight tracking", ok,
                       f"{good}/{len(fractions)} seeds track in >= {share:.0%} of refreshes "
                       f"(per-seed {', '.join(f'{f:.2f}' for f in fractions.values())})",
                       data={"fractions": fractions})


@_timed
def sample_efficiency_experiment(seeds=range(6), steps: int = 100000, env: str = "PointGrasp-4D",
                                 variants=("ace", "causalsac", "sac"), agent_overrides: Dict = None,
                                 echo: Callable[[str], None] = lambda s: None) -> SuiteResult:
    """Steps to first success under sparse reward for each variant.

    Runs stop at the first success; a run that never succeeds is censored at
    ``steps + 1``. Passes when medians order ACE <= CausalSAC <= SAC and ACE
    is strictly faster than SAC on at least 4 of 6 seeds (two thirds).
    """
    first: Dict[str, Dict[int, int]] = {}
    for variant in variants:
        cfg = AgentConfig.for_variant(variant, **{**DESK_AGENT, **(agent_overrides or {})})
        first[variant] = {}
        for seed in seeds:
            _, log = train(cfg, make_env(env, "sparse"), steps, seed, stop_at_first_success=True)
            first[variant][seed] = log.first_success_step or steps + 1
            echo(f"{variant} seed {seed}: first success at {first[variant][seed]}")
    med = {v: float(np.median(list(first[v].values()))) for v in variants}
    seeds = list(first["ace"])
    wins = sum(first["ace"][s] < first["sac"][s] for s in seeds)
    ordered = med["ace"] <= med["causalsac"] <= med["sac"]
    ok = ordered and wins >= math.ceil(2 * len(seeds) / 3)
    return SuiteResult("sample efficiency", ok,
                       f"median first success ACE {med['ace']:.0f}, CausalSAC {med['causalsac']:.0f}, "
                       f"SAC {med['sac']:.0f}; ACE faster than SAC on {wins}/{len(seeds)} seeds",
                       data={"first_success": first, "medians": med, "wins": wins})
