"""MINE-style mutual information between goal and controllable states.

The statistics network ``T(s_goal, s_ctrl)`` scores state pairs; the
Donsker-Varadhan bound ``mean T(joint) - log mean exp T(marginal)`` lower
bounds the mutual information. Marginal samples come from permuting the
controllable states along time within one trajectory, which for a single
adjacent pair ``(s_t, s_t+1)`` is the swap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .ndmath import AdamState, DivergenceError, Mlp, adam_net_step, backward, check_finite, forward, make_rng


@dataclass(frozen=True)
class StateSplit:
    """Index partition of a flat state vector.

    ``goal_groups`` holds one index tuple per goal-state group; the objective
    for several groups is the sum of per-group MI terms.
    """

    controllable: tuple[int, ...]
    goal_groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "controllable", tuple(int(i) for i in self.controllable))
        object.__setattr__(self, "goal_groups", tuple(tuple(int(i) for i in g) for g in self.goal_groups))
        if not self.controllable:
            raise ValueError("controllable index set is empty")
        if not self.goal_groups or any(len(g) == 0 for g in self.goal_groups):
            raise ValueError("every goal group needs at least one index")
        for name, idx in [("controllable", self.controllable), *[(f"goal group {k}", g) for k, g in enumerate(self.goal_groups)]]:
            if len(set(idx)) != len(idx):
                raise ValueError(f"duplicate indices in {name}: {idx}")
            if min(idx) < 0:
                raise ValueError(f"negative index in {name}: {idx}")
        ctrl = set(self.controllable)
        for k, g in enumerate(self.goal_groups):
            if ctrl & set(g):
                raise ValueError(f"goal group {k} overlaps the controllable indices: {sorted(ctrl & set(g))}")

    @classmethod
    def single(cls, controllable, goal) -> "StateSplit":
        return cls(tuple(controllable), (tuple(goal),))

    @property
    def n_groups(self) -> int:
        return len(self.goal_groups)

    def validate(self, state_dim: int) -> None:
        top = max(max(self.controllable), *(max(g) for g in self.goal_groups))
        if top >= state_dim:
            raise ValueError(f"split index {top} out of range for state dimension {state_dim}")


@dataclass(frozen=True)
class TrajectoryFraction:
    """Adjacent state pair ``(s_t, s_t+1)``."""

    s_t: np.ndarray
    s_tp1: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.s_t, dtype=np.float64)
        b = np.asarray(self.s_tp1, dtype=np.float64)
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError(f"fraction states must be equal-length vectors, got {a.shape} and {b.shape}")
        object.__setattr__(self, "s_t", a)
        object.__setattr__(self, "s_tp1", b)


@dataclass(frozen=True)
class MiRewardConfig:
    alpha: float = 5000.0
    clip_lo: float = 0.0
    clip_hi: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.clip_lo < self.clip_hi:
            raise ValueError(f"need clip_lo < clip_hi, got [{self.clip_lo}, {self.clip_hi}]")


class StatisticsNet:
    """Scalar scoring network ``T(s_goal, s_ctrl)`` with its own Adam state."""

    def __init__(self, goal_dim, ctrl_dim, hidden=(64, 64), rng=None, learning_rate=1e-3, net=None):
        self.goal_dim = int(goal_dim)
        self.ctrl_dim = int(ctrl_dim)
        if net is None:
            hidden = tuple(hidden)
            net = Mlp(
                [self.goal_dim + self.ctrl_dim, *hidden, 1],
                ["relu"] * len(hidden) + ["identity"],
                rng if rng is not None else make_rng(0),
            )
        if net.in_dim != self.goal_dim + self.ctrl_dim or net.out_dim != 1:
            raise ValueError(f"statistics net must map {self.goal_dim + self.ctrl_dim} inputs to 1 output, got {net.sizes}")
        self.net = net
        self.opt = AdamState.like(net.params, learning_rate)

    def _inputs(self, g, c):
        g = np.atleast_2d(np.asarray(g, dtype=np.float64))
        c = np.atleast_2d(np.asarray(c, dtype=np.float64))
        return np.concatenate([g, c], axis=1)

    def scores(self, g, c) -> np.ndarray:
        return forward(self.net, self._inputs(g, c))[0][:, 0]

    def score_with_cache(self, g, c):
        y, cache = forward(self.net, self._inputs(g, c))
        return y[:, 0], cache

    def ascend(self, cache, dobj_dscores) -> None:
        """One Adam step increasing an objective with the given score gradient."""
        grads, _ = backward(self.net, cache, -np.asarray(dobj_dscores)[:, None])
        adam_net_step(self.net, grads, self.opt)

    def snapshot(self) -> "StatisticsNet":
        """Independent copy for read-only reward evaluation."""
        snap = StatisticsNet(self.goal_dim, self.ctrl_dim, net=self.net.copy(), learning_rate=self.opt.learning_rate)
        return snap


def _as_nets(net, split: StateSplit) -> list[StatisticsNet]:
    nets = list(net) if isinstance(net, (list, tuple)) else [net]
    if len(nets) != split.n_groups:
        raise ValueError(f"{split.n_groups} goal groups but {len(nets)} statistics networks")
    for k, (n, g) in enumerate(zip(nets, split.goal_groups)):
        if n.goal_dim != len(g) or n.ctrl_dim != len(split.controllable):
            raise ValueError(f"statistics net {k} expects ({n.goal_dim}, {n.ctrl_dim}) inputs, split gives ({len(g)}, {len(split.controllable)})")
    return nets


def make_statistics_nets(split: StateSplit, hidden=(64, 64), rng=None, learning_rate=1e-3) -> list[StatisticsNet]:
    """One statistics network per goal group."""
    rng = rng if rng is not None else make_rng(0)
    return [StatisticsNet(len(g), len(split.controllable), hidden, rng, learning_rate) for g in split.goal_groups]


def dv_lower_bound(joint_scores, marginal_scores) -> float:
    """Donsker-Varadhan bound ``mean(joint) - (logsumexp(marginal) - log n)``."""
    j = np.asarray(joint_scores, dtype=np.float64).ravel()
    m = np.ascontiguousarray(marginal_scores, dtype=np.float64).ravel()
    if j.size == 0 or m.size == 0:
        raise ValueError("dv_lower_bound needs nonempty score vectors")
    if not (np.all(np.isfinite(j)) and np.all(np.isfinite(m))):
        raise ValueError("non-finite statistics score")
    return float(np.mean(j) - (kernels.logsumexp(m) - np.log(m.size)))


def marginal_permutation(n: int, rng) -> np.ndarray:
    """Index permutation used for marginal sampling; never the identity."""
    if n < 2:
        raise ValueError(f"need at least 2 states to shuffle, got {n}")
    if n == 2:
        return np.array([1, 0])
    ident = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.array_equal(perm, ident):
            return perm


def shuffle_marginal(controllable_states, rng):
    """Permute controllable states along time (the swap for two states)."""
    n = len(controllable_states)
    perm = marginal_permutation(n, rng)
    if isinstance(controllable_states, np.ndarray):
        return controllable_states[perm]
    return [controllable_states[i] for i in perm]


def _pair_arrays(fractions):
    if isinstance(fractions, TrajectoryFraction):
        return fractions.s_t[None, :], fractions.s_tp1[None, :]
    if isinstance(fractions, tuple) and len(fractions) == 2 and isinstance(fractions[0], np.ndarray):
        s_t = np.atleast_2d(np.asarray(fractions[0], dtype=np.float64))
        s_tp1 = np.atleast_2d(np.asarray(fractions[1], dtype=np.float64))
    else:
        fractions = list(fractions)
        if not fractions:
            raise ValueError("empty batch of fractions")
        s_t = np.stack([f.s_t for f in fractions])
        s_tp1 = np.stack([f.s_tp1 for f in fractions])
    if s_t.shape != s_tp1.shape or s_t.shape[0] == 0:
        raise ValueError(f"fraction arrays must match and be nonempty, got {s_t.shape} and {s_tp1.shape}")
    return s_t, s_tp1


def _group_pair_scores(stat: StatisticsNet, g0, g1, c0, c1, with_cache=False):
    n = g0.shape[0]
    g = np.concatenate([g0, g1, g0, g1])
    c = np.concatenate([c0, c1, c1, c0])
    if with_cache:
        s, cache = stat.score_with_cache(g, c)
    else:
        s, cache = stat.scores(g, c), None
    return s[:n], s[n:2 * n], s[2 * n:3 * n], s[3 * n:], cache


def transition_mi_raw(s_t, s_tp1, split: StateSplit, net) -> np.ndarray:
    """Unscaled per-fraction MI estimate, summed over goal groups, for a batch."""
    s_t = np.atleast_2d(np.asarray(s_t, dtype=np.float64))
    s_tp1 = np.atleast_2d(np.asarray(s_tp1, dtype=np.float64))
    split.validate(s_t.shape[1])
    nets = _as_nets(net, split)
    ctrl = list(split.controllable)
    c0, c1 = s_t[:, ctrl], s_tp1[:, ctrl]
    total = np.zeros(s_t.shape[0])
    for stat, grp in zip(nets, split.goal_groups):
        g = list(grp)
        tj0, tj1, tm0, tm1, _ = _group_pair_scores(stat, s_t[:, g], s_tp1[:, g], c0, c1)
        raw, _, _ = kernels.pair_dv(tj0, tj1, tm0, tm1)
        total += raw
    return total


def scale_and_clip(raw, cfg: MiRewardConfig):
    return np.clip(cfg.alpha * np.asarray(raw), cfg.clip_lo, cfg.clip_hi)


def transition_rewards(s_t, s_tp1, split: StateSplit, net, cfg: MiRewardConfig) -> np.ndarray:
    """Batched :func:`transition_reward`."""
    return scale_and_clip(transition_mi_raw(s_t, s_tp1, split, net), cfg)


def transition_reward(frac: TrajectoryFraction, split: StateSplit, net, cfg: MiRewardConfig) -> float:
    """Intrinsic reward of one adjacent state pair: ``clip(alpha * raw, lo, hi)``."""
    return float(transition_rewards(frac.s_t, frac.s_tp1, split, net, cfg)[0])


def _states(traj) -> np.ndarray:
    states = getattr(traj, "states", traj)
    return np.atleast_2d(np.asarray(states, dtype=np.float64))


def trajectory_mi(traj, split: StateSplit, net, rng) -> float:
    """DV estimate over a whole trajectory with time-shuffled controllable states.

    Unscaled and unclipped; sums over goal groups.
    """
    states = _states(traj)
    n = states.shape[0]
    if n < 2:
        raise ValueError(f"trajectory needs at least 2 states, got {n}")
    split.validate(states.shape[1])
    perm = marginal_permutation(n, rng)
    ctrl = states[:, list(split.controllable)]
    total = 0.0
    for stat, grp in zip(_as_nets(net, split), split.goal_groups):
        g = states[:, list(grp)]
        s = stat.scores(np.concatenate([g, g]), np.concatenate([ctrl, ctrl[perm]]))
        total += dv_lower_bound(s[:n], s[n:])
    return total


def trajectory_mi_many(trajs: Sequence, split: StateSplit, net, rng) -> np.ndarray:
    """:func:`trajectory_mi` for many trajectories with one network pass per group."""
    states = [_states(t) for t in trajs]
    if not states:
        return np.zeros(0)
    lens = np.array([s.shape[0] for s in states])
    if lens.min() < 2:
        raise ValueError("every trajectory needs at least 2 states")
    perms, off = [], 0
    for n in lens:
        perms.append(marginal_permutation(int(n), rng) + off)
        off += n
    perm = np.concatenate(perms)
    flat = np.concatenate(states)
    split.validate(flat.shape[1])
    ctrl = flat[:, list(split.controllable)]
    bounds = np.concatenate([[0], np.cumsum(lens)])
    out = np.zeros(len(states))
    for stat, grp in zip(_as_nets(net, split), split.goal_groups):
        g = flat[:, list(grp)]
        joint = stat.scores(g, ctrl)
        marg = stat.scores(g, ctrl[perm])
        for k in range(len(states)):
            a, b = bounds[k], bounds[k + 1]
            out[k] += dv_lower_bound(joint[a:b], marg[a:b])
    return out


SURROGATES = ("exp", "log")


def train_estimator(fractions, split: StateSplit, net, rng=None, surrogate: str = "exp") -> float:
    """One ascent step of every goal group's network on a batch of fractions.

    ``fractions`` is a list of :class:`TrajectoryFraction` or a pair of
    ``(n, state_dim)`` arrays. The objective is a mean over fractions of a
    two-state bound whose marginal pairs are the swapped states:

    ``"exp"`` (default)
        ``0.5 * (T00 + T11) - 0.5 * (exp(T01) + exp(T10))``. Bounded above and
        maximised by the log density ratio, so full-trajectory DV estimates
        of the trained network are calibrated.
    ``"log"``
        ``0.5 * (T00 + T11) - log(0.5 * (exp(T01) + exp(T10)))``, the
        per-fraction DV bound itself. Unbounded above whenever swapped pairs
        are separable from joint pairs, so scores grow without limit.

    Returns the loss (negated objective, evaluated before the step). ``rng``
    is accepted for interface symmetry; the two-state marginal is the swap.
    """
    return estimator_step(fractions, split, net, surrogate)[0]


def estimator_step(fractions, split: StateSplit, net, surrogate: str = "exp"):
    """:func:`train_estimator` that also returns the pre-step raw transition MI.

    The raw values equal ``transition_mi_raw`` on the same fractions before
    the update, so a learner can label rewards and train from one pass.
    """
    if surrogate not in SURROGATES:
        raise ValueError(f"surrogate must be one of {SURROGATES}, got {surrogate!r}")
    s_t, s_tp1 = _pair_arrays(fractions)
    split.validate(s_t.shape[1])
    nets = _as_nets(net, split)
    n = s_t.shape[0]
    ctrl = list(split.controllable)
    c0, c1 = s_t[:, ctrl], s_tp1[:, ctrl]
    half = np.full(n, 0.5 / n)
    objective = 0.0
    raw_total = np.zeros(n)
    for stat, grp in zip(nets, split.goal_groups):
        g = list(grp)
        tj0, tj1, tm0, tm1, cache = _group_pair_scores(stat, s_t[:, g], s_tp1[:, g], c0, c1, with_cache=True)
        raw, w0, w1 = kernels.pair_dv(tj0, tj1, tm0, tm1)
        raw_total += raw
        if surrogate == "exp":
            e0, e1 = np.exp(tm0), np.exp(tm1)
            obj = float(np.mean(0.5 * (tj0 + tj1) - 0.5 * (e0 + e1)))
            dm0, dm1 = -0.5 * e0 / n, -0.5 * e1 / n
        else:
            obj = float(np.mean(raw))
            dm0, dm1 = -w0 / n, -w1 / n
        if not np.isfinite(obj):
            raise DivergenceError(f"MI estimator objective diverged ({obj})")
        objective += obj
        stat.ascend(cache, np.concatenate([half, half, dm0, dm1]))
    return -objective, raw_total


# --- generic pairwise estimation -------------------------------------------------


@dataclass
class MiFit:
    """Result of :func:`fit_mi_pairs`."""

    estimate: float
    train_curve: np.ndarray
    net: StatisticsNet


def _standardize(a, idx):
    mu = a[idx].mean(axis=0)
    sd = a[idx].std(axis=0)
    sd[sd < 1e-12] = 1.0
    return (a - mu) / sd


def _group_index(groups, n):
    if groups is None:
        return np.zeros(n, dtype=np.int64)
    groups = np.asarray(groups)
    if groups.shape != (n,):
        raise ValueError(f"groups must have one label per sample ({n}), got shape {groups.shape}")
    _, inv = np.unique(groups, return_inverse=True)
    return inv.astype(np.int64)


def _heldout_dv(stat, x, y, gid, max_pairs_side=1024, rng=None):
    """DV bound on held-out data; the marginal term uses all within-group pairs ``i != j``.

    Diagonal pairs are joint samples; for near-deterministic relations a few
    of them would dominate the log-mean-exp.
    """
    joint = stat.scores(y, x)
    marg = []
    for k in np.unique(gid):
        members = np.flatnonzero(gid == k)
        if members.size > max_pairs_side:
            members = np.sort(rng.choice(members, max_pairs_side, replace=False))
        xi = np.repeat(members, members.size)
        yi = np.tile(members, members.size)
        off = xi != yi
        marg.append(stat.scores(y[yi[off]], x[xi[off]]))
    marg = np.concatenate(marg)
    if marg.size == 0:
        raise ValueError("held-out groups have one sample each; no marginal pairs")
    return dv_lower_bound(joint, marg)


def fit_mi_pairs(
    xs,
    ys,
    steps: int = 3000,
    seed: int = 0,
    groups=None,
    hidden=(64, 64),
    batch_size: int = 512,
    learning_rate: float = 1e-3,
    holdout: float = 0.1,
) -> MiFit:
    """Train a fresh statistics network on ``(x, y)`` pairs and report a held-out bound.

    Marginal pairs are formed by drawing the ``x`` partner uniformly from the
    same group (the whole training set when ``groups`` is None). With groups,
    whole groups are held out. Inputs are z-scored with training statistics.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.ndim == 1:
        xs = xs[:, None]
    if ys.ndim == 1:
        ys = ys[:, None]
    if xs.shape[0] != ys.shape[0]:
        raise ValueError(f"length mismatch: {xs.shape[0]} xs vs {ys.shape[0]} ys")
    n = xs.shape[0]
    if n < 100:
        raise ValueError(f"need at least 100 pairs, got {n}")
    check_finite("xs", xs)
    check_finite("ys", ys)
    rng = make_rng(seed)
    gid = _group_index(groups, n)
    n_groups = gid.max() + 1
    if n_groups == 1:
        order = rng.permutation(n)
        n_test = max(int(round(holdout * n)), 10)
        test = np.sort(order[:n_test])
        train = np.sort(order[n_test:])
    else:
        gorder = rng.permutation(n_groups)
        n_test_groups = max(int(round(holdout * n_groups)), 1)
        test_mask = np.isin(gid, gorder[:n_test_groups])
        test, train = np.flatnonzero(test_mask), np.flatnonzero(~test_mask)
    xz = _standardize(xs, train)
    yz = _standardize(ys, train)

    # within-group partner lookup for the training set
    tr_gid = gid[train]
    sort = np.argsort(tr_gid, kind="stable")
    sorted_members = train[sort]
    starts = np.searchsorted(tr_gid[sort], np.arange(n_groups), side="left")
    ends = np.searchsorted(tr_gid[sort], np.arange(n_groups), side="right")

    stat = StatisticsNet(ys.shape[1], xs.shape[1], hidden, rng, learning_rate)
    b = min(batch_size, train.size)
    curve = np.empty(steps)
    for step in range(steps):
        idx = train[rng.integers(0, train.size, size=b)]
        g = gid[idx]
        lo, hi = starts[g], ends[g]
        partner = sorted_members[lo + (rng.random(b) * (hi - lo)).astype(np.int64)]
        s, cache = stat.score_with_cache(np.concatenate([yz[idx], yz[idx]]), np.concatenate([xz[idx], xz[partner]]))
        tj, tm = s[:b], s[b:]
        hi_m = tm.max()
        e = np.exp(tm - hi_m)
        obj = tj.mean() - (hi_m + np.log(e.mean()))
        if not np.isfinite(obj):
            raise DivergenceError(f"MI estimator diverged at step {step}")
        curve[step] = obj
        stat.ascend(cache, np.concatenate([np.full(b, 1.0 / b), -e / e.sum()]))
    est = _heldout_dv(stat, xz[test], yz[test], gid[test], rng=rng)
    return MiFit(est, curve, stat)


def estimate_mi_pairs(xs, ys, steps: int = 3000, seed: int = 0, groups=None, **kw) -> float:
    """Held-out DV estimate (nats) of I(X; Y) from paired samples."""
    return fit_mi_pairs(xs, ys, steps=steps, seed=seed, groups=groups, **kw).estimate

