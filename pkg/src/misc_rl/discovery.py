"""Find which state groups the agent controls, from random rollouts.

Each named group of state dimensions is scored by the estimated mutual
information between the action ``a_t`` and the group's part of the next
state. Marginal samples pair each state with an action from the same
trajectory, so slow drift shared by a whole episode does not count as
information. Groups the actions move directly score highest.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .envs import PushEnv
from .mi import StateSplit, estimate_mi_pairs

MI_FLOOR = -0.1


@dataclass(frozen=True)
class StateGroupSpec:
    """Named, pairwise-disjoint index groups of the state vector."""

    groups: Mapping[str, tuple]

    def __post_init__(self):
        if not self.groups:
            raise ValueError("no state groups given")
        seen = {}
        clean = {}
        for name, idx in self.groups.items():
            idx = tuple(int(i) for i in idx)
            if not idx:
                raise ValueError(f"group {name!r} is empty")
            if len(set(idx)) != len(idx) or min(idx) < 0:
                raise ValueError(f"group {name!r} has duplicate or negative indices: {idx}")
            for i in idx:
                if i in seen:
                    raise ValueError(f"groups {seen[i]!r} and {name!r} share index {i}")
                seen[i] = name
            clean[name] = idx
        object.__setattr__(self, "groups", clean)

    @classmethod
    def from_env(cls, env: PushEnv) -> "StateGroupSpec":
        return cls(env.state_groups())

    def validate(self, state_dim: int) -> None:
        for name, idx in self.groups.items():
            if max(idx) >= state_dim:
                raise ValueError(f"group {name!r} index {max(idx)} out of range for state dimension {state_dim}")

    @property
    def names(self) -> list[str]:
        return list(self.groups)


@dataclass
class RolloutPairs:
    """``(a_t, s_t, s_{t+1})`` rows with the episode each came from."""

    actions: np.ndarray
    states: np.ndarray
    next_states: np.ndarray
    episode: np.ndarray

    def __len__(self) -> int:
        return self.actions.shape[0]


def collect_random_rollouts(env: PushEnv, n_episodes: int, rng) -> RolloutPairs:
    """Full-horizon episodes under uniform random actions."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    acts, s0, s1, ep = [], [], [], []
    m = env.max_action
    for k in range(n_episodes):
        st, _ = env.reset(rng)
        done = False
        while not done:
            a = rng.uniform(-m, m, size=env.action_dim)
            prev = st.state
            st, _, done = env.step(a)
            acts.append(a)
            s0.append(prev)
            s1.append(st.state)
            ep.append(k)
    return RolloutPairs(np.array(acts), np.array(s0), np.array(s1), np.array(ep))


@dataclass
class DiscoveryReport:
    names: list
    per_seed: np.ndarray  # (n_groups, n_seeds)
    constant: list
    threshold: float = 0.5
    ranking: list = field(init=False)

    def __post_init__(self):
        self.per_seed = np.atleast_2d(np.asarray(self.per_seed, dtype=np.float64))
        means = self.mean
        # constant groups last, then by mean MI descending, ties by name
        order = sorted(range(len(self.names)), key=lambda i: (self.constant[i], -means[i], self.names[i]))
        self.ranking = [self.names[i] for i in order]

    @property
    def mean(self) -> np.ndarray:
        return self.per_seed.mean(axis=1)

    @property
    def std(self) -> np.ndarray:
        return self.per_seed.std(axis=1)

    def estimate(self, name: str) -> float:
        return float(self.mean[self.names.index(name)])

    def rank(self, name: str) -> int:
        return self.ranking.index(name) + 1

    def suggested_controllable(self) -> list[str]:
        """Groups within ``threshold`` of the top group's mean MI (relative)."""
        top = self.estimate(self.ranking[0])
        if top <= 0:
            return [self.ranking[0]]
        return [n for n in self.ranking if not self.constant[self.names.index(n)] and self.estimate(n) >= (1 - self.threshold) * top]

    def suggested_split(self, spec: StateGroupSpec) -> StateSplit:
        ctrl = self.suggested_controllable()
        goal = [n for n in self.ranking if n not in ctrl]
        if not goal:
            raise ValueError("every group looks controllable; no goal groups left")
        return StateSplit(tuple(i for n in ctrl for i in spec.groups[n]), tuple(spec.groups[n] for n in goal))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", "mean_mi", "std_mi", "rank"])
        for name in self.ranking:
            i = self.names.index(name)
            w.writerow([name, repr(float(self.mean[i])), repr(float(self.std[i])), self.rank(name)])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'rank':>4}  {'group':<16} {'MI (nats)':>10} {'std':>8}"]
        for name in self.ranking:
            i = self.names.index(name)
            note = "  (constant)" if self.constant[i] else ""
            lines.append(f"{self.rank(name):>4}  {name:<16} {self.mean[i]:>10.4f} {self.std[i]:>8.4f}{note}")
        lines.append(f"suggested controllable: {', '.join(self.suggested_controllable())}")
        return "\n".join(lines) + "\n"


def rank_controllable(
    pairs: RolloutPairs,
    groups: StateGroupSpec,
    steps: int = 3000,
    seeds: Sequence[int] = (0,),
    delta: bool = True,
    threshold: float = 0.5,
    **fit_kw,
) -> DiscoveryReport:
    """Estimate ``I(A; S^i)`` for every group and rank them.

    ``S^i`` is the group's slice of ``s_{t+1} - s_t`` (default), or of the
    raw ``s_{t+1}`` with ``delta=False``. Raw next states carry the action
    only as a small increment on top of the episode's position, which the
    estimator does not resolve at practical budgets.

    Groups whose values never vary carry no information; they are reported
    as exactly 0 without fitting and always rank last.
    """
    if not seeds:
        raise ValueError("need at least one seed")
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    groups.validate(pairs.next_states.shape[1])
    target = pairs.next_states - pairs.states if delta else pairs.next_states
    names = groups.names
    est = np.zeros((len(names), len(seeds)))
    constant = []
    for i, name in enumerate(names):
        y = target[:, list(groups.groups[name])]
        is_const = bool(np.all(y == y[0]))
        constant.append(is_const)
        if is_const:
            continue
        for j, seed in enumerate(seeds):
            est[i, j] = estimate_mi_pairs(pairs.actions, y, steps=steps, seed=int(seed), groups=pairs.episode, **fit_kw)
    if np.any(est < MI_FLOOR):
        bad = [names[i] for i in np.unique(np.nonzero(est < MI_FLOOR)[0])]
        raise FloatingPointError(f"MI estimates below {MI_FLOOR} for {bad}; estimator failed")
    return DiscoveryReport(names, est, constant, threshold)
