"""Soft actor-critic with a causally weighted entropy bonus and
dormancy-guided soft resets.

Everything is numpy. The actor is a tanh-squashed diagonal Gaussian; two
critics with Polyak-averaged targets share one temperature. With
``use_causal_entropy`` off the agent runs a separately coded plain-SAC
entropy path, so the weighted path can be checked against it bit for bit.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, List, Optional

import numpy as np

from .causal import CausalWeights, ObservationBatch, discover
from .dormancy import DormancyReport, ResetEvent, dormancy_degree, soft_reset
from .errors import ConfigError, InsufficientDataError, NumericError
from .numerics import adam_init, adam_step, backward, forward, init_mlp, input_gradient

LOG_2PI = math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)

VARIANTS = {
    "sac": (False, False),
    "causalsac": (True, False),
    "sac-reset": (False, True),
    "ace": (True, True),
}


@dataclass
class AgentConfig:
    hidden: int = 512
    gamma: float = 0.99
    tau: float = 0.005
    lr: float = 3e-4
    batch_size: int = 512
    updates_per_step: int = 1
    update_every: int = 1
    target_update_interval: int = 2
    local_buffer_size: int = 10000
    causal_interval: int = 10000
    eta_max: float = 0.8
    reset_interval: int = 200000
    dormancy_tau: float = 0.025
    temperature: str = "auto"
    init_alpha: float = 1.0
    buffer_capacity: int = 1_000_000
    learning_starts: int = 0
    log_std_min: float = -10.0
    log_std_max: float = 2.0
    sign_policy: str = "abs"
    use_causal_entropy: bool = True
    use_reset: bool = True

    def __post_init__(self):
        positive = ["hidden", "gamma", "tau", "lr", "batch_size", "updates_per_step", "update_every",
                    "target_update_interval",
                    "local_buffer_size", "causal_interval", "eta_max", "reset_interval", "dormancy_tau",
                    "init_alpha", "buffer_capacity"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.gamma < 1.0 or not self.tau <= 1.0 or not self.eta_max <= 1.0:
            raise ConfigError("gamma must be < 1, tau and eta_max at most 1")
        if self.temperature not in ("auto", "fixed"):
            raise ConfigError(f"temperature must be 'auto' or 'fixed', got {self.temperature!r}")
        if self.sign_policy not in ("abs", "positive"):
            raise ConfigError(f"unknown sign_policy {self.sign_policy!r}")
        if self.log_std_min >= self.log_std_max:
            raise ConfigError("log_std_min must be below log_std_max")
        if self.learning_starts < 0:
            raise ConfigError("learning_starts must be non-negative")

    @classmethod
    def for_variant(cls, variant: str, **overrides) -> "AgentConfig":
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
        causal, reset = VARIANTS[variant]
        return cls(**{**overrides, "use_causal_entropy": causal, "use_reset": reset})

    @classmethod
    def field_names(cls) -> set:
        return {f.name for f in fields(cls)}


# --------------------------------------------------------------------- buffers


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray  # 1.0 where the episode ended for real (no bootstrap)

    def __len__(self):
        return len(self.rewards)


class ReplayBuffer:
    """Fixed-capacity ring of transitions, plus the stage label for diagnostics."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        self.capacity = int(capacity)
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity)
        self.stages = np.zeros(capacity, dtype=int)
        self.ptr = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, state, action, reward, next_state, done, stage=-1):
        action = np.asarray(action, dtype=float)
        if not (np.all(np.isfinite(state)) and np.all(np.isfinite(action)) and np.isfinite(reward)
                and np.all(np.isfinite(next_state))):
            raise NumericError("refusing to store a non-finite transition")
        if np.any(np.abs(action) > 1.0):
            raise NumericError(f"stored action {action} outside [-1, 1]")
        i = self.ptr
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = float(done)
        self.stages[i] = stage
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, n: int) -> Batch:
        """Uniform without replacement within the batch."""
        if n > self.size:
            raise InsufficientDataError(f"asked for {n} transitions, buffer holds {self.size}")
        idx = rng.choice(self.size, size=n, replace=False)
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.dones[idx])

    def order(self) -> np.ndarray:
        """Storage indices from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.ptr) % self.capacity

    def chronological(self) -> Batch:
        idx = self.order()
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.dones[idx])


# ----------------------------------------------------------------- actor head


def log_one_minus_tanh_sq(u):
    """``log(1 - tanh(u)^2)`` without cancellation for large ``|u|``."""
    return 2.0 * (LOG_2 - u - np.logaddexp(0.0, -2.0 * u))


@dataclass
class ActorOutput:
    mean: np.ndarray
    log_std: np.ndarray
    pre: np.ndarray         # sampled pre-squash value u
    action: np.ndarray      # tanh(u)
    log_prob: np.ndarray    # per-dimension, squash-corrected
    noise: np.ndarray
    std: np.ndarray
    free: np.ndarray        # 1.0 where log-std was not clamped


def actor_head(raw: np.ndarray, noise: Optional[np.ndarray], log_std_min=-10.0, log_std_max=2.0) -> ActorOutput:
    """Split an actor network output into the squashed Gaussian sample.

    ``noise=None`` gives the deterministic action ``tanh(mean)`` (its
    log-density is still evaluated at that point).
    """
    d = raw.shape[-1] // 2
    mean, raw_log_std = raw[..., :d], raw[..., d:]
    log_std = np.clip(raw_log_std, log_std_min, log_std_max)
    free = ((raw_log_std > log_std_min) & (raw_log_std < log_std_max)).astype(float)
    std = np.exp(log_std)
    eps = np.zeros_like(mean) if noise is None else noise
    u = mean + std * eps
    action = np.tanh(u)
    log_prob = -0.5 * eps * eps - log_std - 0.5 * LOG_2PI - log_one_minus_tanh_sq(u)
    return ActorOutput(mean, log_std, u, action, log_prob, eps, std, free)


def _weight_vector(weights) -> Optional[np.ndarray]:
    if weights is None:
        return None
    if isinstance(weights, CausalWeights):
        return weights.normalized
    return np.asarray(weights, dtype=float)


def causal_entropy_term(out: ActorOutput, weights=None):
    """Single-sample weighted entropy estimate ``-sum_i w_i log pi_i(a_i|s)``.

    ``weights=None`` is the plain SAC estimate ``-log pi(a|s)``. Returns one
    value per row (a scalar for a single state).
    """
    w = _weight_vector(weights)
    if w is None:
        return -out.log_prob.sum(axis=-1)
    return -(w * out.log_prob).sum(axis=-1)


# ---------------------------------------------------------------------- agent


@dataclass
class UpdateStats:
    critic_loss: float
    actor_loss: float
    alpha: float
    entropy: float


class Agent:
    def __init__(self, state_dim: int, action_dim: int, config: AgentConfig, seed: int = 0):
        self.state_dim, self.action_dim = state_dim, action_dim
        self.config = config
        self.seed = int(seed)
        init_ss, act_ss, upd_ss, probe_ss = np.random.SeedSequence(self.seed).spawn(4)
        init_rng = np.random.default_rng(init_ss)
        self.act_rng = np.random.default_rng(act_ss)
        self.update_rng = np.random.default_rng(upd_ss)
        self.probe_rng = np.random.default_rng(probe_ss)
        h = config.hidden
        self.actor = init_mlp([state_dim, h, h, 2 * action_dim], init_rng)
        self.critic1 = init_mlp([state_dim + action_dim, h, h, 1], init_rng)
        self.critic2 = init_mlp([state_dim + action_dim, h, h, 1], init_rng)
        self.target1 = self.critic1.copy()
        self.target2 = self.critic2.copy()
        self.opt_actor = adam_init(self.actor.params(), lr=config.lr)
        self.opt_critic1 = adam_init(self.critic1.params(), lr=config.lr)
        self.opt_critic2 = adam_init(self.critic2.params(), lr=config.lr)
        self.log_alpha = np.array([math.log(config.init_alpha)])
        self.opt_alpha = adam_init([self.log_alpha], lr=config.lr)
        self.target_entropy = -float(action_dim)
        self.weights = CausalWeights.uniform(action_dim)
        self.buffer = ReplayBuffer(config.buffer_capacity, state_dim, action_dim)
        self.local = ReplayBuffer(config.local_buffer_size, state_dim, action_dim)
        self.n_updates = 0

    # -- basics

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    def entropy_weights(self) -> Optional[np.ndarray]:
        return self.weights.normalized if self.config.use_causal_entropy else None

    def policy(self, states, noise=None) -> tuple:
        acts = forward(self.actor, states)
        if not np.all(np.isfinite(acts.post[-1])):
            bad = [i for i, p in enumerate(acts.post) if not np.all(np.isfinite(p))]
            raise NumericError(f"actor produced non-finite values (first bad layer {bad[0]})", layer=bad[0])
        out = actor_head(acts.post[-1], noise, self.config.log_std_min, self.config.log_std_max)
        return acts, out

    def select_action(self, state, deterministic: bool = False, rng: Optional[np.random.Generator] = None):
        state = np.asarray(state, dtype=float)
        noise = None if deterministic else (rng or self.act_rng).standard_normal(self.action_dim)
        _, out = self.policy(state[None, :], None if noise is None else noise[None, :])
        return out.action[0]

    def observe(self, state, action, reward, next_state, done, stage=-1):
        self.buffer.add(state, action, reward, next_state, done, stage)
        self.local.add(state, action, reward, next_state, done, stage)

    def ready(self) -> bool:
        return len(self.buffer) >= max(self.config.batch_size, self.config.learning_starts)

    # -- losses and gradients

    def critic_target(self, batch: Batch, noise: np.ndarray) -> np.ndarray:
        _, nxt = self.policy(batch.next_states, noise)
        x = np.concatenate([batch.next_states, nxt.action], axis=1)
        q1 = forward(self.target1, x).post[-1][:, 0]
        q2 = forward(self.target2, x).post[-1][:, 0]
        bonus = self.alpha * causal_entropy_term(nxt, self.entropy_weights())
        y = batch.rewards + self.config.gamma * (1.0 - batch.dones) * (np.minimum(q1, q2) + bonus)
        if not np.all(np.isfinite(y)):
            raise NumericError("non-finite critic target")
        return y

    def critic_grads(self, batch: Batch, y: np.ndarray):
        """Squared-error loss of each critic against ``y``; returns (loss, records, grads)."""
        x = np.concatenate([batch.states, batch.actions], axis=1)
        n = len(batch)
        loss, records, grads = 0.0, [], []
        for critic in (self.critic1, self.critic2):
            acts = forward(critic, x)
            err = acts.post[-1][:, 0] - y
            loss += float(np.mean(err * err))
            rec, g = backward(critic, acts, (2.0 / n) * err[:, None])
            records.append(rec)
            grads.append(g)
        return loss, records, grads

    def actor_grads(self, batch: Batch, noise: np.ndarray):
        """Reparameterised gradient of ``mean(alpha * sum_i w_i log pi_i - min Q)``.

        Returns ``(loss, record, grads, entropy_per_row)``.
        """
        n = len(batch)
        acts, out = self.policy(batch.states, noise)
        x = np.concatenate([batch.states, out.action], axis=1)
        c1 = forward(self.critic1, x)
        c2 = forward(self.critic2, x)
        q1, q2 = c1.post[-1][:, 0], c2.post[-1][:, 0]
        first = q1 <= q2
        min_q = np.where(first, q1, q2)
        g1 = input_gradient(self.critic1, c1, first.astype(float)[:, None])
        g2 = input_gradient(self.critic2, c2, (~first).astype(float)[:, None])
        dq_da = g1[:, self.state_dim:] + g2[:, self.state_dim:]

        w = self.entropy_weights()
        alpha = self.alpha
        coef = alpha if w is None else alpha * w
        entropy = causal_entropy_term(out, w)
        loss = float(np.mean(-alpha * entropy - min_q))
        # d log pi_i / d u_i through the squash correction is 2 tanh(u_i)
        d_u = (coef * 2.0 * out.action - dq_da * (1.0 - out.action ** 2)) / n
        d_log_std = (d_u * out.std * out.noise - coef / n) * out.free
        grad_out = np.concatenate([d_u, d_log_std], axis=1)
        if not (np.isfinite(loss) and np.all(np.isfinite(grad_out))):
            raise NumericError("non-finite actor loss or gradient")
        rec, g = backward(self.actor, acts, grad_out)
        return loss, rec, g, entropy

    # -- updates

    def critic_update(self, batch: Batch, noise: np.ndarray) -> float:
        y = self.critic_target(batch, noise)
        loss, _, grads = self.critic_grads(batch, y)
        adam_step(self.opt_critic1, self.critic1.params(), grads[0].as_list())
        adam_step(self.opt_critic2, self.critic2.params(), grads[1].as_list())
        return loss

    def actor_update(self, batch: Batch, noise: np.ndarray):
        loss, _, g, entropy = self.actor_grads(batch, noise)
        adam_step(self.opt_actor, self.actor.params(), g.as_list())
        return loss, entropy

    def temperature_update(self, entropy) -> float:
        """One Adam step on ``log alpha``; no-op in fixed mode."""
        if self.config.temperature == "fixed":
            return self.alpha
        grad = np.array([np.mean(entropy) - self.target_entropy])
        adam_step(self.opt_alpha, [self.log_alpha], [grad])
        return self.alpha

    def update_targets(self):
        tau = self.config.tau
        for target, online in ((self.target1, self.critic1), (self.target2, self.critic2)):
            for t, p in zip(target.params(), online.params()):
                t *= 1.0 - tau
                t += tau * p

    def update(self) -> UpdateStats:
        n = self.config.batch_size
        batch = self.buffer.sample(self.update_rng, n)
        critic_loss = self.critic_update(batch, self.update_rng.standard_normal((n, self.action_dim)))
        actor_loss, entropy = self.actor_update(batch, self.update_rng.standard_normal((n, self.action_dim)))
        alpha = self.temperature_update(entropy)
        self.n_updates += 1
        if self.n_updates % self.config.target_update_interval == 0:
            self.update_targets()
        return UpdateStats(critic_loss, actor_loss, alpha, float(np.mean(entropy)))

    # -- causal weights, dormancy, reset

    def refresh_weights(self, step: int) -> CausalWeights:
        data = self.local.chronological()
        obs = ObservationBatch(self.state_dim, self.action_dim,
                               np.column_stack([data.states, data.actions, data.rewards]))
        self.weights = discover(obs, timestamp=step, sign_policy=self.config.sign_policy)
        return self.weights

    def gradient_records(self, rng: np.random.Generator) -> list:
        """Per-network gradient norms from one batch: actor, critic1, critic2."""
        n = min(self.config.batch_size, len(self.buffer))
        batch = self.buffer.sample(rng, n)
        y = self.critic_target(batch, rng.standard_normal((n, self.action_dim)))
        _, critic_recs, _ = self.critic_grads(batch, y)
        _, actor_rec, _, _ = self.actor_grads(batch, rng.standard_normal((n, self.action_dim)))
        return [actor_rec] + critic_recs

    def measure_dormancy(self, step: int) -> DormancyReport:
        """Diagnostic measurement on a separate random stream (training is unaffected)."""
        return dormancy_degree(self.gradient_records(self.probe_rng), self.config.dormancy_tau, step)

    def reset_networks(self, step: int):
        """Dormancy-guided soft reset of actor and both critics, then target re-sync."""
        report = dormancy_degree(self.gradient_records(self.update_rng), self.config.dormancy_tau, step)
        seeds = np.random.SeedSequence([self.seed, step]).generate_state(3)
        events = []
        for net, opt, name, s in ((self.actor, self.opt_actor, "actor", seeds[0]),
                                  (self.critic1, self.opt_critic1, "critic1", seeds[1]),
                                  (self.critic2, self.opt_critic2, "critic2", seeds[2])):
            _, _, ev = soft_reset(net, opt, report.alpha, self.config.eta_max, int(s), step, name)
            events.append(ev)
        self.target1.assign(self.critic1)
        self.target2.assign(self.critic2)
        event = ResetEvent(step, events[0].eta, report.alpha,
                           ["actor", "critic1", "critic2", "targets"], int(seeds[0]))
        return report, event

    # -- persistence

    def networks(self) -> dict:
        return {"actor": self.actor, "critic1": self.critic1, "critic2": self.critic2,
                "target1": self.target1, "target2": self.target2}

    def optimizers(self) -> dict:
        return {"actor": self.opt_actor, "critic1": self.opt_critic1, "critic2": self.opt_critic2,
                "alpha": self.opt_alpha}

    def save(self, path) -> None:
        arrays = {}
        for name, net in self.networks().items():
            for i, p in enumerate(net.params()):
                arrays[f"net/{name}/{i}"] = p
        for name, opt in self.optimizers().items():
            for i, (m, v) in enumerate(zip(opt.m, opt.v)):
                arrays[f"opt/{name}/m{i}"] = m
                arrays[f"opt/{name}/v{i}"] = v
            arrays[f"opt/{name}/step"] = np.array(opt.step)
        arrays["log_alpha"] = self.log_alpha
        arrays["weights/raw"] = self.weights.raw
        arrays["weights/normalized"] = self.weights.normalized
        meta = {"state_dim": self.state_dim, "action_dim": self.action_dim, "seed": self.seed,
                "n_updates": self.n_updates, "weights_timestamp": self.weights.timestamp,
                "weights_flagged": self.weights.flagged, "config": asdict(self.config)}
        arrays["meta"] = np.array(json.dumps(meta))
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "Agent":
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            agent = cls(meta["state_dim"], meta["action_dim"], AgentConfig(**meta["config"]), meta["seed"])
            for name, net in agent.networks().items():
                for i, p in enumerate(net.params()):
                    p[...] = z[f"net/{name}/{i}"]
            for name, opt in agent.optimizers().items():
                for i, (m, v) in enumerate(zip(opt.m, opt.v)):
                    m[...] = z[f"opt/{name}/m{i}"]
                    v[...] = z[f"opt/{name}/v{i}"]
                opt.step = int(z[f"opt/{name}/step"])
            agent.log_alpha[...] = z["log_alpha"]
            agent.weights = CausalWeights(z["weights/raw"].copy(), z["weights/normalized"].copy(),
                                          meta["weights_timestamp"], meta["weights_flagged"])
            agent.n_updates = meta["n_updates"]
        return agent


# ---------------------------------------------------------------- train loop


@dataclass
class TrainLog:
    metrics: List[dict] = field(default_factory=list)
    events: List[dict] = field(default_factory=list)
    weight_trace: List[dict] = field(default_factory=list)
    first_success_step: Optional[int] = None
    episodes: int = 0
    steps: int = 0


def episode_seed(seed: int, episode: int) -> int:
    return int(np.random.SeedSequence([seed, episode]).generate_state(1)[0])


def evaluate(agent: Agent, env, episodes: int, seed: int) -> tuple[float, float]:
    """Mean return and success rate of the deterministic policy."""
    returns, successes = [], []
    for k in range(episodes):
        state = env.reset(episode_seed(seed, 10**6 + k))
        total, success = 0.0, False
        while True:
            res = env.step(agent.select_action(state, deterministic=True))
            total += res.reward
            state = res.next_state
            if res.terminal:
                success = res.success
                break
        returns.append(total)
        successes.append(float(success))
    return float(np.mean(returns)), float(np.mean(successes))


def train(config: AgentConfig, env, total_steps: int, seed: int = 0, eval_env=None, eval_interval: int = 0,
          eval_episodes: int = 10, stop_at_first_success: bool = False,
          callback: Optional[Callable[[Agent, int], None]] = None) -> tuple[Agent, TrainLog]:
    """Collect, store, update; refresh causal weights every ``causal_interval``
    steps and soft-reset every ``reset_interval`` steps when enabled.

    Evaluation (deterministic actions on ``eval_env``) runs every
    ``eval_interval`` steps when that is positive.
    """
    agent = Agent(env.spec.state_dim, env.spec.action_dim, config, seed)
    if eval_env is None:
        eval_env = copy.deepcopy(env)
    log = TrainLog()
    episode = 0
    state = env.reset(episode_seed(seed, episode))
    last_eta = 0.0
    for t in range(1, total_steps + 1):
        action = agent.select_action(state)
        res = env.step(action)
        agent.observe(state, action, res.reward, res.next_state, res.terminal and not res.truncated,
                      res.stage_label)
        if res.success and log.first_success_step is None:
            log.first_success_step = t
            log.events.append({"event": "first_success", "step": t})
        if res.terminal:
            episode += 1
            state = env.reset(episode_seed(seed, episode))
        else:
            state = res.next_state
        log.steps = t
        if stop_at_first_success and log.first_success_step is not None:
            break

        if agent.ready() and t % config.update_every == 0:
            for _ in range(config.updates_per_step):
                agent.update()
        if t % config.causal_interval == 0:
            # variants without the causal bonus keep (and log) uniform weights
            w = agent.refresh_weights(t) if config.use_causal_entropy else agent.weights
            stages = agent.local.stages[agent.local.order()]
            majority = int(np.bincount(stages[stages >= 0]).argmax()) if np.any(stages >= 0) else -1
            log.weight_trace.append({"step": t, "majority_stage": majority, "flagged": w.flagged,
                                     **{f"w_{i}": float(v) for i, v in enumerate(w.normalized)}})
            if config.use_causal_entropy:
                log.events.append({"event": "weights", "step": t, "flagged": w.flagged,
                                   "normalized": w.normalized.tolist(), "raw": w.raw.tolist()})
        if config.use_reset and t % config.reset_interval == 0 and agent.ready():
            report, event = agent.reset_networks(t)
            last_eta = event.eta
            log.events += [report.to_dict(), event.to_dict()]
        if eval_interval and t % eval_interval == 0:
            ret, succ = evaluate(agent, eval_env, eval_episodes, seed)
            dormancy = agent.measure_dormancy(t).alpha if agent.ready() else 0.0
            log.metrics.append({"step": t, "seed": seed, "return": ret, "success": succ, "alpha": agent.alpha,
                                "dormancy": dormancy, "reset_eta": last_eta,
                                **{f"w_{i}": float(v) for i, v in enumerate(agent.weights.normalized)}})
            last_eta = 0.0
        if callback is not None:
            callback(agent, t)
    log.episodes = episode
    return agent, log
