"""Deterministic 2-D pushing arenas.

A point agent moves in ``[-1, 1]^2`` with per-axis steps of at most 0.05.
Objects are discs pushed out of contact along the agent-object center line
by the penetration depth; nothing else moves them. The state is
``agent_pos ⊕ obj1_pos [⊕ obj2_pos]``; goal variants add a per-episode
target ``g_e`` for the first object and a sparse 0/1 task reward.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .mi import StateSplit

ARENA = 1.0
MAX_STEP = 0.05
CONTACT_RADIUS = 0.06
SUCCESS_RADIUS = 0.05
MIN_SEPARATION = 0.2
HORIZON = 50


@dataclass
class EnvState:
    state: np.ndarray
    t: int = 0


@dataclass(frozen=True)
class GoalTask:
    g_e: np.ndarray
    success_radius: float = SUCCESS_RADIUS


class PushEnv:
    """Point agent pushing ``n_objects`` discs.

    ``reset`` and ``step`` follow the usual episodic protocol; the transition
    itself is the pure function :meth:`dynamics`.
    """

    def __init__(self, n_objects=1, goal=False, horizon=HORIZON, name=None):
        if goal and n_objects != 1:
            raise ValueError("goal variants are defined for a single object")
        self.n_objects = int(n_objects)
        self.goal = bool(goal)
        self.horizon = int(horizon)
        self.name = name or ("point-push-goal" if goal else "point-push" if n_objects == 1 else "multi-object-push")
        self.state_dim = 2 + 2 * self.n_objects
        self.goal_dim = 2 if goal else 0
        self.obs_dim = self.state_dim + self.goal_dim
        self.action_dim = 2
        self.max_action = MAX_STEP
        self._state: Optional[EnvState] = None
        self._task: Optional[GoalTask] = None

    # -- structure -------------------------------------------------------------

    def state_split(self) -> StateSplit:
        groups = tuple((2 + 2 * k, 3 + 2 * k) for k in range(self.n_objects))
        return StateSplit((0, 1), groups)

    def state_groups(self) -> dict[str, tuple[int, ...]]:
        """Named index groups of the state vector."""
        if self.n_objects == 1:
            return {"agent_pos": (0, 1), "object_pos": (2, 3)}
        out = {"agent_pos": (0, 1)}
        for k in range(self.n_objects):
            out[f"obj{k + 1}_pos"] = (2 + 2 * k, 3 + 2 * k)
        return out

    # -- dynamics --------------------------------------------------------------

    def dynamics(self, state, action) -> np.ndarray:
        """Next state for ``(state, action)``; pure and deterministic."""
        a = np.nan_to_num(np.asarray(action, dtype=np.float64), nan=0.0)
        return kernels.push_step(
            np.asarray(state, dtype=np.float64), a, self.n_objects, MAX_STEP, CONTACT_RADIUS, -ARENA, ARENA
        )

    def task_reward(self, state, goal) -> float:
        if goal is None:
            return 0.0
        d = state[2:4] - goal
        return 1.0 if np.sqrt(d @ d) < SUCCESS_RADIUS else 0.0

    def reset(self, rng):
        """Uniform positions with pairwise separation >= 0.2; goal uniform.

        Returns ``(EnvState, GoalTask | None)``.
        """
        n = 1 + self.n_objects
        while True:
            pts = rng.uniform(-ARENA, ARENA, size=(n, 2))
            diff = pts[:, None, :] - pts[None, :, :]
            dist = np.sqrt((diff**2).sum(-1)) + np.eye(n) * 10
            if dist.min() >= MIN_SEPARATION:
                break
        self._state = EnvState(pts.ravel().copy(), 0)
        self._task = GoalTask(rng.uniform(-ARENA, ARENA, size=2)) if self.goal else None
        return self._state, self._task

    def step(self, action):
        """Advance one step; returns ``(EnvState, r_task, done)``."""
        if self._state is None:
            raise RuntimeError("call reset() before step()")
        nxt = self.dynamics(self._state.state, action)
        self._state = EnvState(nxt, self._state.t + 1)
        r = self.task_reward(nxt, None if self._task is None else self._task.g_e)
        return self._state, r, self._state.t >= self.horizon

    def observation(self, state=None, task=None) -> np.ndarray:
        """Policy input: state, plus ``g_e`` for goal variants."""
        s = self._state.state if state is None else state
        if not self.goal:
            return s.copy()
        t = self._task if task is None else task
        return np.concatenate([s, t.g_e])

    def success(self, state, task) -> bool:
        return task is not None and self.task_reward(state, task.g_e) > 0.0


_REGISTRY = {
    "point-push": lambda: PushEnv(1, goal=False, name="point-push"),
    "point-push-goal": lambda: PushEnv(1, goal=True, name="point-push-goal"),
    "multi-object-push": lambda: PushEnv(2, goal=False, name="multi-object-push"),
}

ENV_NAMES = tuple(_REGISTRY)


def make_env(name: str) -> PushEnv:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {', '.join(ENV_NAMES)}") from None


def state_split(env: PushEnv) -> StateSplit:
    return env.state_split()
