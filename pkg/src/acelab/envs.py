"""Small continuous-control tasks whose reward-relevant action dimensions
change from one stage of the task to the next.

All actions live in ``[-1, 1]``; out-of-range actions are clipped and
counted. Dense rewards lie in ``[-1, 0]`` with success worth 0 (so finishing
early is always preferable); sparse rewards are 1 on success and 0 otherwise.
Every episode terminates on success or at the horizon.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .errors import InputError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    horizon: int
    reward_mode: str = "dense"
    r_max: float = 1.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.action_dim < 2:
            raise ValueError("environments need at least two action dimensions")
        if self.reward_mode not in ("dense", "sparse"):
            raise ValueError(f"reward_mode must be 'dense' or 'sparse', got {self.reward_mode!r}")


@dataclass
class StepResult:
    next_state: np.ndarray
    reward: float
    terminal: bool
    success: bool
    stage_label: int  # stage whose reward rule produced this reward; diagnostics only
    truncated: bool = False  # terminal only because the horizon was reached


class Env:
    """Common bookkeeping: seeding, action checks, horizon, reward mode."""

    spec: EnvSpec

    def __init__(self, reward_mode: str = "dense", randomize_start: bool = True):
        self.reward_mode = reward_mode
        self.randomize_start = randomize_start
        self.clip_count = 0
        self._rng = np.random.default_rng(0)
        self._t = 0
        self.state: Optional[np.ndarray] = None

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._t = 0
        self.state = self._initial_state()
        return self.state.copy()

    def step(self, action) -> StepResult:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        a = np.asarray(action, dtype=float).reshape(-1)
        if a.shape != (self.spec.action_dim,):
            raise InputError(f"expected {self.spec.action_dim} action dims, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InputError(f"non-finite action {a}")
        if np.any(np.abs(a) > 1.0):
            if self.clip_count == 0:
                log.warning("%s: action %s outside [-1, 1]; clipping", self.spec.name, a)
            self.clip_count += 1
            a = np.clip(a, -1.0, 1.0)
        self._t += 1
        reward, success, stage = self._transition(a)
        truncated = not success and self._t >= self.spec.horizon
        if self.reward_mode == "sparse":
            reward = 1.0 if success else 0.0
        return StepResult(self.state.copy(), float(reward), success or truncated, success, stage, truncated)

    def ground_truth_active_dims(self, state=None) -> np.ndarray:
        """Indicator of the action dims that move the reward from ``state``."""
        return self._active(self.state if state is None else np.asarray(state, dtype=float))

    def _initial_state(self) -> np.ndarray:
        raise NotImplementedError

    def _transition(self, a: np.ndarray) -> tuple[float, bool, int]:
        raise NotImplementedError

    def _active(self, state: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class PointGrasp(Env):
    """End-effector point with x/y/z motion and a gripper.

    State ``[x, y, z, grip, obj_x, obj_y, obj_z, held]``. Stages: 0 grasp
    (descend and close the gripper on the object), 1 transport (carry it
    over the goal), 2 place (lower and release). Gravity pulls the
    end-effector down by a fixed amount each step.
    """

    MOVE = 0.05
    GRAVITY = 0.005
    GRIP_RATE = 0.2
    GRASP_RADIUS = 0.08
    GRIP_CLOSED = 0.8
    GRIP_OPEN = 0.3
    GOAL = np.array([0.175, 0.175])
    GOAL_TOL = 0.12
    PLACE_HEIGHT = 0.1

    def __init__(self, reward_mode="dense", randomize_start=True, horizon=200):
        super().__init__(reward_mode, randomize_start)
        self.spec = EnvSpec("PointGrasp-4D", 8, 4, horizon, reward_mode, 1.0)

    def _initial_state(self):
        if self.randomize_start:
            obj = np.r_[self._rng.uniform(-0.05, 0.05, 2), 0.0]
            ee = np.r_[obj[:2] + self._rng.uniform(-0.03, 0.03, 2), 0.25 + self._rng.uniform(0.0, 0.05)]
        else:
            obj = np.zeros(3)
            ee = np.array([0.0, 0.0, 0.25])
        return np.r_[ee, 0.0, obj, 0.0]

    @staticmethod
    def stage_of(state) -> int:
        if state[7] < 0.5:
            return 0
        return 2 if np.linalg.norm(state[:2] - PointGrasp.GOAL) <= PointGrasp.GOAL_TOL else 1

    def _transition(self, a):
        s = self.state
        ee = s[:3].copy()
        ee[0] = np.clip(ee[0] + self.MOVE * a[0], -1.0, 1.0)
        ee[1] = np.clip(ee[1] + self.MOVE * a[1], -1.0, 1.0)
        ee[2] = np.clip(ee[2] + self.MOVE * a[2] - self.GRAVITY, 0.0, 1.0)
        grip = float(np.clip(s[3] + self.GRIP_RATE * a[3], 0.0, 1.0))
        obj, held = s[4:7].copy(), s[7] > 0.5
        success = False
        if held:
            if grip < self.GRIP_OPEN:
                held = False
                over_goal = np.linalg.norm(ee[:2] - self.GOAL) <= self.GOAL_TOL
                success = bool(over_goal and ee[2] <= self.PLACE_HEIGHT)
                obj = np.r_[ee[:2], 0.0]
            else:
                obj = ee.copy()
        elif grip >= self.GRIP_CLOSED and np.linalg.norm(ee - obj) < self.GRASP_RADIUS:
            held = True
            obj = ee.copy()
        self.state = np.r_[ee, grip, obj, float(held)]
        stage = self.stage_of(self.state)
        if success:
            return 0.0, True, 2
        if stage == 0:
            d = np.linalg.norm(ee - obj)
            near = d < 2 * self.GRASP_RADIUS
            value = 0.5 * (1.0 - min(d / 0.5, 1.0)) + 0.5 * grip * near
        elif stage == 1:
            value = 1.0 - min(np.linalg.norm(ee[:2] - self.GOAL), 1.0)
        else:
            value = 0.5 * (1.0 - min(ee[2] / 0.3, 1.0)) + 0.5 * (1.0 - grip)
        return (stage + value) / 3.0 - 1.0, False, stage

    def _active(self, state):
        # grasp and place: z and gripper; transport: x, y while the gripper holds
        return np.array([0.0, 0.0, 1.0, 1.0]) if self.stage_of(state) != 1 else np.array([1.0, 1.0, 0.0, 1.0])


class Pendulum(Env):
    """Torque-driven pendulum with a second, damping-control action.

    State ``[cos(theta), sin(theta), theta_dot / 8]`` with ``theta = 0``
    upright. Stage 0 swing-up (more than 45 degrees from upright), stage 1
    stabilise. Success: within 0.1 rad of upright and slower than 0.5 rad/s.
    """

    G, DT, MAX_SPEED, MAX_TORQUE, MAX_DAMPING = 10.0, 0.05, 8.0, 2.0, 0.5

    def __init__(self, reward_mode="dense", randomize_start=True, horizon=200):
        super().__init__(reward_mode, randomize_start)
        self.spec = EnvSpec("Pendulum-2D", 3, 2, horizon, reward_mode, 1.0)
        self.theta = 0.0
        self.theta_dot = 0.0

    def _observe(self):
        return np.array([np.cos(self.theta), np.sin(self.theta), self.theta_dot / self.MAX_SPEED])

    def _initial_state(self):
        if self.randomize_start:
            self.theta = float(np.pi + self._rng.uniform(-0.5, 0.5))
            self.theta_dot = float(self._rng.uniform(-0.5, 0.5))
        else:
            self.theta, self.theta_dot = float(np.pi), 0.0
        return self._observe()

    @staticmethod
    def _wrap(theta):
        return (theta + np.pi) % (2 * np.pi) - np.pi

    def _transition(self, a):
        u = self.MAX_TORQUE * a[0]
        damping = self.MAX_DAMPING * 0.5 * (a[1] + 1.0)
        acc = 1.5 * self.G * np.sin(self.theta) + 3.0 * u - damping * self.theta_dot
        self.theta_dot = float(np.clip(self.theta_dot + acc * self.DT, -self.MAX_SPEED, self.MAX_SPEED))
        self.theta = float(self._wrap(self.theta + self.theta_dot * self.DT))
        self.state = self._observe()
        success = abs(self.theta) < 0.1 and abs(self.theta_dot) < 0.5
        stage = int(abs(self.theta) < np.pi / 4)
        cost = (self.theta**2 + 0.1 * self.theta_dot**2 + 0.001 * u**2) / (np.pi**2 + 6.4 + 0.004)
        return (0.0 if success else -float(cost)), bool(success), stage

    def _active(self, state):
        upright = abs(np.arctan2(state[1], state[0])) < np.pi / 4
        # swing-up exploits both torque and damping; stabilising is torque-dominated
        return np.array([1.0, 0.0]) if upright else np.array([1.0, 1.0])


class ChainReach(Env):
    """K sliders pushed in sequence: stage ``k`` rewards only slider ``k``.

    State ``[p_0..p_{K-1}, done_0..done_{K-1}]``. Slider ``k`` must reach 0.8;
    its completion flag then latches and slider ``k+1`` is reset to -1.
    """

    STEP = 0.1
    TARGET = 0.8

    def __init__(self, k: int = 4, reward_mode="dense", randomize_start=True, horizon=200):
        if k < 4:
            raise ValueError("ChainReach needs at least 4 action dimensions")
        super().__init__(reward_mode, randomize_start)
        self.k = k
        self.spec = EnvSpec(f"ChainReach-{k}D", 2 * k, k, horizon, reward_mode, 1.0)

    def _initial_state(self):
        p = -1.0 + (self._rng.uniform(0.0, 0.2, self.k) if self.randomize_start else np.zeros(self.k))
        return np.r_[p, np.zeros(self.k)]

    def stage_of(self, state) -> int:
        return int(round(float(np.sum(state[self.k:]))))

    def _transition(self, a):
        k = self.k
        stage = self.stage_of(self.state)
        p = np.clip(self.state[:k] + self.STEP * a, -1.0, 1.0)
        done = self.state[k:].copy()
        reward = (stage + (p[stage] + 1.0) / 2.0) / k - 1.0
        success = False
        if p[stage] >= self.TARGET - 1e-9:  # tolerate accumulated rounding of the 0.1 steps
            done[stage] = 1.0
            if stage + 1 == k:
                success = True
                reward = 0.0
            else:
                p[stage + 1] = -1.0
        self.state = np.r_[p, done]
        return float(reward), success, stage

    def _active(self, state):
        out = np.zeros(self.k)
        stage = self.stage_of(state)
        if stage < self.k:
            out[stage] = 1.0
        return out


def make_env(name: str, reward_mode: str = "dense", **kwargs) -> Env:
    """Build an environment from its display name, e.g. ``"ChainReach-6D"``."""
    key = name.lower()
    if key in ("pointgrasp", "pointgrasp-4d"):
        return PointGrasp(reward_mode, **kwargs)
    if key in ("pendulum", "pendulum-2d"):
        return Pendulum(reward_mode, **kwargs)
    m = re.fullmatch(r"chainreach(?:-(\d+)d)?", key)
    if m:
        return ChainReach(int(m.group(1) or 4), reward_mode, **kwargs)
    raise ValueError(f"unknown environment {name!r}")


def rollout(env: Env, policy: Callable[[np.ndarray], np.ndarray], seed: int) -> list[dict]:
    """One episode as a list of step records."""
    state = env.reset(seed)
    records = []
    while True:
        action = np.asarray(policy(state), dtype=float)
        res = env.step(action)
        records.append({"state": state.tolist(), "action": action.tolist(), "reward": res.reward,
                        "stage": res.stage_label, "success": res.success})
        state = res.next_state
        if res.terminal:
            return records


def write_trajectory(path, records: Iterable[dict]) -> None:
    """JSONL, one step per line."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_trajectory(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
