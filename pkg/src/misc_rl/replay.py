"""Trajectory-structured replay with uniform and MI-prioritized sampling.

Trajectories are stored whole so that every sampled transition carries its
adjacent state pair and prioritization can operate per trajectory. Flat
arrays over all stored transitions are rebuilt lazily after each store.
"""

from __future__ import annotations

import os
import struct
import threading
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .mi import TrajectoryFraction

MAGIC = b"MISCBUF1"


@dataclass(frozen=True)
class Transition:
    s_t: np.ndarray
    a_t: np.ndarray
    r_task: float
    s_tp1: np.ndarray
    done: bool
    g_e: Optional[np.ndarray] = None


class TrajectoryRecord:
    """One episode: ``n + 1`` states, ``n`` actions, rewards and done flags."""

    def __init__(self, states, actions, rewards=None, dones=None, goal=None):
        self.states = np.ascontiguousarray(states, dtype=np.float64)
        self.actions = np.ascontiguousarray(actions, dtype=np.float64)
        if self.states.ndim != 2 or self.actions.ndim != 2:
            raise ValueError("states and actions must be 2-D arrays")
        n = self.actions.shape[0]
        if self.states.shape[0] != n + 1:
            raise ValueError(f"{self.states.shape[0]} states for {n} actions; need one more state than actions")
        self.rewards = np.zeros(n) if rewards is None else np.asarray(rewards, dtype=np.float64).reshape(n)
        self.dones = np.zeros(n, dtype=bool) if dones is None else np.asarray(dones, dtype=bool).reshape(n)
        self.goal = None if goal is None else np.asarray(goal, dtype=np.float64).ravel()
        self.priority = 0.0
        self.priority_age = 0

    def __len__(self) -> int:
        """Number of transitions."""
        return self.actions.shape[0]

    def transition(self, t: int) -> Transition:
        return Transition(
            self.states[t], self.actions[t], float(self.rewards[t]), self.states[t + 1], bool(self.dones[t]), self.goal
        )

    def fraction(self, t: int) -> TrajectoryFraction:
        return TrajectoryFraction(self.states[t], self.states[t + 1])


@dataclass
class Batch:
    """Column arrays for a sampled set of transitions."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    goal: Optional[np.ndarray]
    traj_index: np.ndarray
    t_index: np.ndarray

    def __len__(self) -> int:
        return self.s.shape[0]


class ReplayBuffer:
    """Ring of trajectories bounded by a transition count.

    Parameters
    ----------
    capacity : int
        Maximum number of stored transitions; oldest trajectories are evicted.
    priority_floor : float
        Lower bound on trajectory priorities (also the initial priority).
    priority_exponent : float
        Trajectories are drawn with probability ``p_i**w / sum_j p_j**w``.
    refresh_interval : int
        Priorities older than this many :meth:`tick` calls are recomputed
        before prioritized sampling.
    """

    def __init__(self, capacity=100_000, priority_floor=1e-3, priority_exponent=1.0, refresh_interval=1):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        if priority_floor <= 0:
            raise ValueError("priority_floor must be positive")
        self.capacity = int(capacity)
        self.priority_floor = float(priority_floor)
        self.priority_exponent = float(priority_exponent)
        self.refresh_interval = int(refresh_interval)
        self._records: deque[TrajectoryRecord] = deque()
        self._n_transitions = 0
        self._flat = None
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return self._n_transitions

    @property
    def n_trajectories(self) -> int:
        return len(self._records)

    @property
    def records(self) -> list[TrajectoryRecord]:
        return list(self._records)

    def store(self, traj: TrajectoryRecord) -> None:
        if len(traj) < 1:
            raise ValueError("trajectory needs at least 2 states")
        if len(traj) > self.capacity:
            raise ValueError(f"trajectory of {len(traj)} transitions exceeds capacity {self.capacity}")
        if self._records:
            ref = self._records[0]
            if traj.states.shape[1] != ref.states.shape[1] or traj.actions.shape[1] != ref.actions.shape[1]:
                raise ValueError("trajectory dimensions differ from stored trajectories")
            if (traj.goal is None) != (ref.goal is None):
                raise ValueError("cannot mix goal-conditioned and goal-free trajectories")
        with self._lock:
            traj.priority = self.priority_floor
            traj.priority_age = self.refresh_interval + 1
            self._records.append(traj)
            self._n_transitions += len(traj)
            while self._n_transitions > self.capacity:
                old = self._records.popleft()
                self._n_transitions -= len(old)
            self._flat = None

    # -- flat views -----------------------------------------------------------

    def _build(self):
        recs = self._records
        lens = np.array([len(r) for r in recs], dtype=np.int64)
        state_off = np.concatenate([[0], np.cumsum(lens + 1)[:-1]])
        trans_off = np.concatenate([[0], np.cumsum(lens)])
        rows = np.concatenate([state_off[i] + np.arange(n) for i, n in enumerate(lens)])
        goal = None
        if recs[0].goal is not None:
            goal = np.concatenate([np.repeat(r.goal[None, :], len(r), axis=0) for r in recs])
        self._flat = {
            "S": np.concatenate([r.states for r in recs]),
            "A": np.concatenate([r.actions for r in recs]),
            "R": np.concatenate([r.rewards for r in recs]),
            "D": np.concatenate([r.dones for r in recs]),
            "G": goal,
            "rows": rows,
            "lens": lens,
            "trans_off": trans_off,
            "traj_of": np.repeat(np.arange(len(recs)), lens),
        }
        return self._flat

    def _flat_view(self):
        return self._flat if self._flat is not None else self._build()

    # -- sampling -------------------------------------------------------------

    def sample_indices(self, n: int, rng, prioritized: bool = False, priority_fn: Optional[Callable] = None):
        """Global transition indices; trajectory-first draw when prioritized."""
        if not self._records:
            raise ValueError("cannot sample from an empty buffer")
        with self._lock:
            flat = self._flat_view()
            if n == 0:
                return np.zeros(0, dtype=np.int64)
            if not prioritized:
                return rng.integers(0, self._n_transitions, size=n)
            if priority_fn is not None:
                self._refresh(priority_fn)
            probs = self.trajectory_probabilities()
            cdf = np.cumsum(probs)
            traj = np.minimum(np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right"), len(probs) - 1)
            within = (rng.random(n) * flat["lens"][traj]).astype(np.int64)
            return flat["trans_off"][traj] + within

    def trajectory_probabilities(self) -> np.ndarray:
        p = np.array([r.priority for r in self._records]) ** self.priority_exponent
        return p / p.sum()

    def gather(self, idx) -> Batch:
        flat = self._flat_view()
        rows = flat["rows"][idx]
        traj = flat["traj_of"][idx]
        return Batch(
            s=flat["S"][rows],
            a=flat["A"][idx],
            r=flat["R"][idx],
            s2=flat["S"][rows + 1],
            done=flat["D"][idx],
            goal=None if flat["G"] is None else flat["G"][idx],
            traj_index=traj,
            t_index=idx - flat["trans_off"][traj],
        )

    def sample_batch(self, n: int, rng, prioritized: bool = False, priority_fn=None) -> Batch:
        return self.gather(self.sample_indices(n, rng, prioritized, priority_fn))

    def _as_pairs(self, idx):
        flat = self._flat_view()
        out = []
        for j in idx:
            i = flat["traj_of"][j]
            t = j - flat["trans_off"][i]
            rec = self._records[i]
            out.append((rec.transition(t), rec.fraction(t)))
        return out

    def sample_uniform(self, n: int, rng) -> list[tuple[Transition, TrajectoryFraction]]:
        """``n`` transitions uniform over all stored transitions, with replacement."""
        return self._as_pairs(self.sample_indices(n, rng))

    def sample_prioritized(self, n: int, rng, priority_fn=None) -> list[tuple[Transition, TrajectoryFraction]]:
        """Trajectory drawn by priority, then a transition uniform within it.

        ``priority_fn(records) -> raw MI per record`` recomputes stale priorities.
        """
        return self._as_pairs(self.sample_indices(n, rng, True, priority_fn))

    # -- priorities -------------------------------------------------------------

    def tick(self) -> None:
        """Age every cached priority by one estimator-update cycle."""
        for r in self._records:
            r.priority_age += 1

    def _refresh(self, priority_fn) -> None:
        stale = [r for r in self._records if r.priority_age > self.refresh_interval]
        if not stale:
            return
        raw = np.asarray(priority_fn(stale), dtype=np.float64)
        for r, v in zip(stale, raw):
            r.priority = max(float(v), self.priority_floor) if np.isfinite(v) else self.priority_floor
            r.priority_age = 0

    def refresh_priorities(self, priority_fn) -> None:
        with self._lock:
            self._refresh(priority_fn)

    # -- persistence -------------------------------------------------------------

    def save(self, path) -> None:
        """Binary snapshot: ``MISCBUF1`` header, little-endian u64 counts, f64 payload."""
        recs = list(self._records)
        if not recs:
            raise ValueError("refusing to snapshot an empty buffer")
        sd, ad = recs[0].states.shape[1], recs[0].actions.shape[1]
        gd = 0 if recs[0].goal is None else recs[0].goal.size
        parts = [MAGIC, struct.pack("<5Q", len(recs), sd, ad, gd, self.capacity)]
        parts.append(np.array([len(r) for r in recs], dtype="<u8").tobytes())
        for r in recs:
            payload = [r.states.ravel(), r.actions.ravel(), r.rewards, r.dones.astype(np.float64)]
            if gd:
                payload.append(r.goal)
            payload.append(np.array([r.priority, float(r.priority_age)]))
            parts.append(np.concatenate(payload).astype("<f8").tobytes())
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as fh:
            fh.write(b"".join(parts))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path, **kw) -> "ReplayBuffer":
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:8] != MAGIC:
            raise ValueError(f"{path}: not a MISCBUF1 snapshot")
        n, sd, ad, gd, cap = struct.unpack_from("<5Q", data, 8)
        off = 8 + 40
        lens = np.frombuffer(data, dtype="<u8", count=n, offset=off).astype(np.int64)
        off += 8 * n
        buf = cls(capacity=cap, **kw)
        for t in lens:
            size = (t + 1) * sd + t * ad + 2 * t + gd + 2
            vals = np.frombuffer(data, dtype="<f8", count=size, offset=off).astype(np.float64)
            off += 8 * size
            k = 0
            states = vals[k:k + (t + 1) * sd].reshape(t + 1, sd)
            k += (t + 1) * sd
            actions = vals[k:k + t * ad].reshape(t, ad)
            k += t * ad
            rewards = vals[k:k + t]
            k += t
            dones = vals[k:k + t] != 0.0
            k += t
            goal = vals[k:k + gd] if gd else None
            k += gd
            rec = TrajectoryRecord(states, actions, rewards, dones, goal)
            buf.store(rec)
            rec.priority, rec.priority_age = float(vals[k]), int(vals[k + 1])
        if off != len(data):
            raise ValueError(f"{path}: {len(data) - off} trailing bytes")
        return buf
