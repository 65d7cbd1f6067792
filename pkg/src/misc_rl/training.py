"""The training loop: rollouts, reward resolution per variant, updates, metrics.

Random streams are split by purpose (network init, estimator init, one per
rollout worker, minibatch sampling, SAC noise, evaluation, metric
shuffles), so switching a component on or off never shifts the draws of
the others. With one worker the run is a pure function of the config.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import agents as ag
from .config import RunConfig
from .envs import PushEnv, make_env
from .mi import (
    StateSplit,
    StatisticsNet,
    estimator_step,
    make_statistics_nets,
    scale_and_clip,
    trajectory_mi_many,
    transition_mi_raw,
)
from .ndmath import AdamState, DivergenceError, Mlp, spawn_rngs
from .replay import Batch, ReplayBuffer, TrajectoryRecord

METRICS_VERSION = 1
METRICS_COLUMNS = (
    "epoch",
    "episodes",
    "mean_intrinsic_return",
    "mean_task_success",
    "mi_estimate",
    "actor_loss",
    "critic_loss",
    "mean_displacement",
    "wall_ms",
)
CHECKPOINT_VERSION = 1

# stream indices for spawn_rngs
_INIT, _ESTIMATOR, _SAMPLE, _NOISE, _EVAL, _METRIC, _PRIORITY, _WORKER0 = range(8)


class TrainingDiverged(RuntimeError):
    """Non-finite loss or target; ``checkpoint`` is the last good state."""

    def __init__(self, message, checkpoint, epoch):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.epoch = epoch


@dataclass
class EpochMetrics:
    epoch: int
    episodes: int
    mean_intrinsic_return: float
    mean_task_success: float
    mi_estimate: float
    actor_loss: float
    critic_loss: float
    mean_displacement: float
    wall_ms: int = 0

    def row(self) -> str:
        vals = [getattr(self, c) for c in METRICS_COLUMNS]
        return ",".join(str(v) if isinstance(v, int) else repr(float(v)) for v in vals)


@dataclass
class MetricsLog:
    rows: list = field(default_factory=list)

    @staticmethod
    def header() -> str:
        return ",".join(METRICS_COLUMNS)

    def append(self, m: EpochMetrics) -> None:
        if self.rows and m.epoch <= self.rows[-1].epoch:
            raise ValueError("metrics epochs must strictly increase")
        self.rows.append(m)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=np.float64)

    def to_csv(self) -> str:
        return "\n".join([self.header()] + [r.row() for r in self.rows]) + "\n"

    def __len__(self) -> int:
        return len(self.rows)


@dataclass
class TrainResult:
    metrics: MetricsLog
    checkpoint: dict
    actor: ag.Actor
    critics: list
    estimators: list
    buffer: ReplayBuffer


# -- rollouts ---------------------------------------------------------------------


@dataclass
class Episode:
    record: TrajectoryRecord
    success: bool
    displacement: float


def object_displacement(env: PushEnv, s0, s1) -> float:
    """Summed Euclidean displacement of every object between two states."""
    d = (np.asarray(s1) - np.asarray(s0))[2:].reshape(env.n_objects, 2)
    return float(np.sqrt((d * d).sum(axis=1)).sum())


def run_episode(env: PushEnv, policy: Callable, rng) -> Episode:
    """One full-horizon episode; ``policy(obs) -> action``.

    Horizon truncation is not a terminal transition, so stored done flags
    are all false.
    """
    st, task = env.reset(rng)
    states = [st.state]
    actions, rewards = [], []
    done = False
    while not done:
        a = np.clip(policy(env.observation()), -env.max_action, env.max_action)
        st, r, done = env.step(a)
        states.append(st.state)
        actions.append(a)
        rewards.append(r)
    goal = None if task is None else task.g_e
    rec = TrajectoryRecord(np.array(states), np.array(actions), np.array(rewards), None, goal)
    return Episode(rec, env.success(states[-1], task), object_displacement(env, states[0], states[-1]))


def random_policy_displacement(env: PushEnv, n_episodes: int, rng) -> float:
    """Mean per-episode object displacement under uniform random actions."""
    m = env.max_action
    eps = [run_episode(env, lambda obs: rng.uniform(-m, m, size=env.action_dim), rng) for _ in range(n_episodes)]
    return float(np.mean([e.displacement for e in eps]))


def evaluate_policy(env: PushEnv, actor: ag.Actor, vcfg: ag.VariantConfig, n_episodes: int, rng):
    """Deterministic-policy episodes: ``(successes, displacements)`` arrays."""
    eps = [run_episode(env, lambda obs: ag.select_action(actor, obs, False, None, vcfg), rng) for _ in range(n_episodes)]
    return np.array([e.success for e in eps], dtype=np.float64), np.array([e.displacement for e in eps])


# -- learner ------------------------------------------------------------------------


class Learner:
    """Owns networks, buffer and random streams for one run."""

    def __init__(self, env: PushEnv, cfg: RunConfig, split: Optional[StateSplit] = None):
        cfg.validate()
        self.env = env
        self.cfg = cfg
        self.vcfg = cfg.variant_config()
        self.rcfg = cfg.reward_config()
        self.split = split if split is not None else env.state_split()
        self.split.validate(env.state_dim)
        n_workers = cfg.workers
        streams = spawn_rngs(cfg.seed, _WORKER0 + n_workers)
        self.rng_init, self.rng_est, self.rng_sample, self.rng_noise = streams[:4]
        self.rng_eval, self.rng_metric, self.rng_priority = streams[4:7]
        self.rng_workers = streams[_WORKER0:]
        self.worker_envs = [env] + [make_env(env.name) for _ in range(n_workers - 1)]
        self.actor, self.critics = ag.make_agent(env.obs_dim, env.action_dim, env.max_action, self.vcfg, self.rng_init)
        self.estimators = make_statistics_nets(self.split, tuple(cfg.mi_hidden), self.rng_est, cfg.mi_lr)
        self.buffer = ReplayBuffer(cfg.buffer_size, cfg.priority_floor, cfg.priority_exponent, cfg.priority_refresh)
        self.episodes = 0
        self.epoch = 0
        self._pool = ThreadPoolExecutor(n_workers) if n_workers > 1 else None

    # phases ----------------------------------------------------------------

    def phase(self, epoch: int) -> str:
        """Effective variant for an epoch (``misc_f`` switches after pretraining)."""
        v = self.vcfg.variant
        if v == "misc_f":
            return "intrinsic_only" if epoch < self.vcfg.pretrain_epochs else "task_only"
        return v

    def trains_estimator(self, phase: str) -> bool:
        return self.cfg.update_estimator and phase != "task_only"

    def reward_bounds(self, phase: str):
        if phase == "intrinsic_only":
            return (self.rcfg.clip_lo, self.rcfg.clip_hi)
        if phase == "misc_r":
            return (min(0.0, self.vcfg.beta * self.rcfg.clip_lo), 1.0 + self.vcfg.beta * self.rcfg.clip_hi)
        return (0.0, 1.0)

    # acting -----------------------------------------------------------------

    def _collect(self) -> list[Episode]:
        per = self.cfg.rollouts_per_worker

        def work(k, actor):
            env, rng = self.worker_envs[k], self.rng_workers[k]
            policy = lambda obs: ag.select_action(actor, obs, True, rng, self.vcfg)  # noqa: E731
            return [run_episode(env, policy, rng) for _ in range(per)]

        if self._pool is None:
            batches = [work(0, self.actor)]
        else:
            snapshot = ag.Actor.__new__(ag.Actor)
            snapshot.__dict__.update(self.actor.__dict__)
            snapshot.net = self.actor.net.copy()
            futures = [self._pool.submit(work, k, snapshot) for k in range(len(self.worker_envs))]
            batches = [f.result() for f in futures]
        return [e for b in batches for e in b]

    # learning ---------------------------------------------------------------

    def _obs(self, s, goal):
        obs = s if goal is None else np.concatenate([s, goal], axis=1)
        return np.clip(obs, -self.cfg.clip_obs, self.cfg.clip_obs)

    def resolve_rewards(self, batch: Batch, phase: str, raw=None) -> np.ndarray:
        """Per-variant reward, with the intrinsic part from the current estimator.

        ``raw`` may carry precomputed ``transition_mi_raw`` values for the batch.
        """
        if phase == "task_only" or phase == "misc_p":
            return batch.r.copy()
        if raw is None:
            raw = transition_mi_raw(batch.s, batch.s2, self.split, self.estimators)
        r_mi = scale_and_clip(raw, self.rcfg)
        if phase == "intrinsic_only":
            return r_mi
        return batch.r + self.vcfg.beta * r_mi

    def _priority_fn(self, records):
        return trajectory_mi_many(records, self.split, self.estimators, self.rng_priority)

    def update(self, phase: str) -> dict:
        cfg = self.cfg
        prioritized = phase == "misc_p"
        batch = self.buffer.sample_batch(
            cfg.batch_size, self.rng_sample, prioritized, self._priority_fn if prioritized else None
        )
        # one estimator pass labels rewards (pre-step values) and trains
        raw, mi_loss = None, None
        if self.trains_estimator(phase):
            mi_loss, raw = estimator_step((batch.s, batch.s2), self.split, self.estimators, cfg.mi_surrogate)
        rew = self.resolve_rewards(batch, phase, raw)
        ub = ag.UpdateBatch(
            self._obs(batch.s, batch.goal),
            batch.a / self.env.max_action,
            rew,
            self._obs(batch.s2, batch.goal),
            batch.done.astype(np.float64),
        )
        if self.vcfg.algo == "ddpg":
            bounds = self.reward_bounds(phase)
            out = ag.ddpg_update(ub, self.critics, self.actor, self.vcfg, bounds)
            limit = max(abs(bounds[0]), abs(bounds[1])) / (1.0 - self.vcfg.gamma) + 1e-9
            if out["target_max"] > limit:
                raise DivergenceError(f"critic target {out['target_max']} exceeds bound {limit}")
        else:
            out = ag.sac_update(ub, self.critics, self.actor, self.vcfg, self.rng_noise)
        if mi_loss is not None:
            out["mi_loss"] = mi_loss
        return out

    def run_epoch(self) -> EpochMetrics:
        cfg = self.cfg
        phase = self.phase(self.epoch)
        t0 = time.perf_counter()
        episodes, a_losses, c_losses = [], [], []
        for _ in range(cfg.n_cycles):
            new = self._collect()
            for e in new:
                self.buffer.store(e.record)
            episodes.extend(new)
            self.episodes += len(new)
            if len(self.buffer) >= 1:
                for _ in range(cfg.n_batches):
                    out = self.update(phase)
                    a_losses.append(out["actor_loss"])
                    c_losses.append(out["critic_loss"])
            self.buffer.tick()
        # training-rollout intrinsic statistics under the current estimator
        if episodes:
            recs = [e.record for e in episodes]
            r_in = [
                float(scale_and_clip(transition_mi_raw(r.states[:-1], r.states[1:], self.split, self.estimators), self.rcfg).sum())
                for r in recs
            ]
            mi_est = float(np.mean(trajectory_mi_many(recs, self.split, self.estimators, self.rng_metric)))
        else:
            r_in, mi_est = [0.0], 0.0
        success, disp = evaluate_policy(self.env, self.actor, self.vcfg, cfg.n_test_rollouts, self.rng_eval)
        wall = int(round((time.perf_counter() - t0) * 1000)) if cfg.record_wall_time else 0
        m = EpochMetrics(
            epoch=self.epoch,
            episodes=self.episodes,
            mean_intrinsic_return=float(np.mean(r_in)),
            mean_task_success=float(success.mean()) if success.size else 0.0,
            mi_estimate=mi_est,
            actor_loss=float(np.mean(a_losses)) if a_losses else 0.0,
            critic_loss=float(np.mean(c_losses)) if c_losses else 0.0,
            mean_displacement=float(disp.mean()) if disp.size else 0.0,
            wall_ms=wall,
        )
        for name in ("mean_intrinsic_return", "mi_estimate", "actor_loss", "critic_loss"):
            if not np.isfinite(getattr(m, name)):
                raise DivergenceError(f"{name} is not finite")
        self.epoch += 1
        return m

    # persistence -------------------------------------------------------------

    def checkpoint(self) -> dict:
        nets = ag.agent_networks(self.actor, self.critics)
        opts = ag.agent_optimizers(self.actor, self.critics)
        for k, stat in enumerate(self.estimators):
            nets[f"statistics{k}"] = stat.net
            opts[f"statistics{k}"] = stat.opt
        return {
            "format_version": CHECKPOINT_VERSION,
            "env": self.env.name,
            "obs_dim": self.env.obs_dim,
            "action_dim": self.env.action_dim,
            "max_action": self.env.max_action,
            "algo": self.vcfg.algo,
            "variant": self.vcfg.variant,
            "epoch": self.epoch,
            "episodes": self.episodes,
            "rng_seed": int(self.cfg.seed),
            "networks": {k: v.to_layers() for k, v in nets.items()},
            "optimizer": {k: v.to_dict() for k, v in opts.items()},
        }

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()


def run_training(env, cfg: RunConfig, split=None, on_epoch: Optional[Callable] = None) -> TrainResult:
    """Run ``cfg.epochs`` epochs and return metrics plus final state.

    ``on_epoch(metrics, checkpoint)`` is called after every epoch. A
    :class:`TrainingDiverged` carries the checkpoint of the last completed
    epoch (the initial state if none completed).
    """
    if isinstance(env, str):
        env = make_env(env)
    learner = Learner(env, cfg, split)
    log = MetricsLog()
    last_good = learner.checkpoint()
    try:
        for _ in range(cfg.epochs):
            try:
                m = learner.run_epoch()
            except (DivergenceError, FloatingPointError) as exc:
                raise TrainingDiverged(str(exc), last_good, learner.epoch) from exc
            log.append(m)
            last_good = learner.checkpoint()
            if on_epoch is not None:
                on_epoch(m, last_good)
    finally:
        learner.close()
    return TrainResult(log, last_good, learner.actor, learner.critics, learner.estimators, learner.buffer)


# -- checkpoint loading -----------------------------------------------------------


def actor_from_checkpoint(ckpt: dict) -> ag.Actor:
    """Rebuild the policy network of a checkpoint."""
    if ckpt.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format {ckpt.get('format_version')!r}")
    net = Mlp.from_layers(ckpt["networks"]["actor"])
    actor = ag.Actor.__new__(ag.Actor)
    actor.obs_dim = net.in_dim
    actor.stochastic = ckpt["algo"] == "sac"
    actor.act_dim = net.out_dim // 2 if actor.stochastic else net.out_dim
    actor.max_action = float(ckpt["max_action"])
    actor.net = net
    actor.target = Mlp.from_layers(ckpt["networks"]["actor_target"])
    actor.opt = AdamState.from_dict(ckpt["optimizer"]["actor"])
    return actor


def estimators_from_checkpoint(ckpt: dict, split: StateSplit) -> list:
    nets = []
    for k, grp in enumerate(split.goal_groups):
        net = Mlp.from_layers(ckpt["networks"][f"statistics{k}"])
        nets.append(StatisticsNet(len(grp), len(split.controllable), net=net))
    return nets
