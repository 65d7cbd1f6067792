"""DDPG and SAC learners over :mod:`misc_rl.ndmath` networks.

Critics see the action normalised to ``[-1, 1]`` (``a / max_action``).
DDPG actors end in ``tanh``; SAC actors emit a mean and log-std and squash a
reparameterised Gaussian sample through ``tanh``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .ndmath import AdamState, DivergenceError, Mlp, adam_net_step, backward, forward, polyak_update

VARIANTS = ("intrinsic_only", "misc_f", "misc_r", "misc_p", "task_only")
ALGOS = ("ddpg", "sac")
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass
class VariantConfig:
    """Learner hyperparameters. Published defaults where one exists."""

    variant: str = "intrinsic_only"
    algo: str = "ddpg"
    beta: float = 1.0
    pretrain_epochs: int = 50
    random_eps: float = 0.3
    noise_eps: float = 0.2
    action_l2: float = 1.0
    batch_size: int = 256
    gamma: float = 0.98
    polyak: float = 0.95
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    sac_temperature: float = 0.2
    clip_obs: float = 200.0
    hidden: tuple = (64, 64)

    def __post_init__(self):
        self.variant = self.variant.replace("-", "_")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.algo not in ALGOS:
            raise ValueError(f"unknown algorithm {self.algo!r}; choose from {ALGOS}")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        for name in ("random_eps", "noise_eps", "polyak"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.sac_temperature < 0:
            raise ValueError("sac_temperature must be non-negative")
        self.hidden = tuple(int(h) for h in self.hidden)


class UpdateBatch(NamedTuple):
    obs: np.ndarray
    act: np.ndarray  # normalised to [-1, 1]
    rew: np.ndarray
    obs2: np.ndarray
    done: np.ndarray


class Actor:
    def __init__(self, obs_dim, act_dim, max_action, hidden=(64, 64), rng=None, stochastic=False, learning_rate=1e-3):
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.max_action = float(max_action)
        self.stochastic = bool(stochastic)
        hidden = tuple(hidden)
        out = 2 * act_dim if stochastic else act_dim
        last = "identity" if stochastic else "tanh"
        self.net = Mlp([obs_dim, *hidden, out], ["relu"] * len(hidden) + [last], rng, last_scale=0.1)
        self.target = self.net.copy()
        self.opt = AdamState.like(self.net.params, learning_rate)

    def mean_action(self, obs) -> np.ndarray:
        """Deterministic normalised action in ``[-1, 1]``."""
        y = self.net(obs)
        return np.tanh(y[..., : self.act_dim]) if self.stochastic else y

    def heads(self, y):
        mu = y[:, : self.act_dim]
        log_std = np.clip(y[:, self.act_dim:], LOG_STD_MIN, LOG_STD_MAX)
        return mu, log_std


class Critic:
    def __init__(self, obs_dim, act_dim, hidden=(64, 64), rng=None, learning_rate=1e-3):
        hidden = tuple(hidden)
        self.net = Mlp([obs_dim + act_dim, *hidden, 1], ["relu"] * len(hidden) + ["identity"], rng)
        self.target = self.net.copy()
        self.opt = AdamState.like(self.net.params, learning_rate)
        self.obs_dim = int(obs_dim)

    def q(self, obs, act, target=False):
        net = self.target if target else self.net
        return net(np.concatenate([obs, act], axis=1))[:, 0]


def make_agent(obs_dim, act_dim, max_action, cfg: VariantConfig, rng):
    """Actor and critic list for ``cfg.algo`` (one critic for DDPG, twin for SAC)."""
    sac = cfg.algo == "sac"
    actor = Actor(obs_dim, act_dim, max_action, cfg.hidden, rng, stochastic=sac, learning_rate=cfg.lr_actor)
    critics = [Critic(obs_dim, act_dim, cfg.hidden, rng, cfg.lr_critic) for _ in range(2 if sac else 1)]
    return actor, critics


# -- acting ---------------------------------------------------------------------


def select_action(actor: Actor, s, explore: bool, rng, cfg: VariantConfig) -> np.ndarray:
    """Action in ``[-max_action, max_action]^d`` for one observation.

    Exploring: with probability ``random_eps`` a uniform random action;
    otherwise the policy action (DDPG: plus Gaussian noise of scale
    ``noise_eps * max_action``; SAC: a sample from the policy), clipped to
    the box. Not exploring: the deterministic policy mean.
    """
    obs = np.clip(np.asarray(s, dtype=np.float64), -cfg.clip_obs, cfg.clip_obs)[None, :]
    m = actor.max_action
    if not explore:
        return actor.mean_action(obs)[0] * m
    if rng.random() < cfg.random_eps:
        return rng.uniform(-m, m, size=actor.act_dim)
    if actor.stochastic:
        mu, log_std = actor.heads(actor.net(obs))
        u = mu + np.exp(log_std) * rng.standard_normal(mu.shape)
        return np.tanh(u[0]) * m
    a = actor.mean_action(obs)[0] * m + cfg.noise_eps * m * rng.standard_normal(actor.act_dim)
    return np.clip(a, -m, m)


# -- shared pieces ----------------------------------------------------------------


def _check(name, value):
    if not np.isfinite(value):
        raise DivergenceError(f"{name} diverged ({value})")


def critic_step(critic: Critic, obs, act, y):
    """One Adam step on ``mean((Q(obs, act) - y)**2)``; returns the loss."""
    x = np.concatenate([obs, act], axis=1)
    q, cache = forward(critic.net, x)
    err = q[:, 0] - y
    loss = float(np.mean(err * err))
    _check("critic loss", loss)
    grads, _ = backward(critic.net, cache, (2.0 / len(y)) * err[:, None])
    adam_net_step(critic.net, grads, critic.opt)
    return loss


def q_and_action_grad(critic: Critic, obs, act):
    """``Q(obs, act)`` and ``dQ/dact`` per row."""
    q, cache = forward(critic.net, np.concatenate([obs, act], axis=1))
    _, gin = backward(critic.net, cache, np.ones_like(q))
    return q[:, 0], gin[:, critic.obs_dim:]


def ddpg_targets(batch: UpdateBatch, critic: Critic, actor: Actor, cfg: VariantConfig, r_bounds=None):
    a2 = actor.target(batch.obs2)
    q2 = critic.q(batch.obs2, a2, target=True)
    y = batch.rew + cfg.gamma * (1.0 - batch.done) * q2
    if r_bounds is not None:
        lo, hi = r_bounds
        y = np.clip(y, min(lo, 0.0) / (1.0 - cfg.gamma), max(hi, 0.0) / (1.0 - cfg.gamma))
    return y


def ddpg_actor_loss_and_grad(actor: Actor, critic: Critic, obs, cfg: VariantConfig):
    """``-mean Q(s, pi(s)) + action_l2 * mean(pi(s)**2)`` and its actor gradient.

    The penalty averages over batch and action dimensions of the normalised
    action.
    """
    a, cache = forward(actor.net, obs)
    q, dq_da = q_and_action_grad(critic, obs, a)
    n, d = a.shape
    loss = float(-np.mean(q) + cfg.action_l2 * np.mean(a * a))
    grads, _ = backward(actor.net, cache, (-dq_da + (2.0 * cfg.action_l2 / d) * a) / n)
    return loss, grads


def ddpg_update(batch: UpdateBatch, critics, actor: Actor, cfg: VariantConfig, r_bounds=None) -> dict:
    """Critic regression to the one-step target, actor ascent, Polyak targets.

    ``r_bounds=(r_min, r_max)`` clips targets to the feasible discounted-return
    range.
    """
    critic = critics[0]
    y = ddpg_targets(batch, critic, actor, cfg, r_bounds)
    critic_loss = critic_step(critic, batch.obs, batch.act, y)
    actor_loss, grads = ddpg_actor_loss_and_grad(actor, critic, batch.obs, cfg)
    _check("actor loss", actor_loss)
    adam_net_step(actor.net, grads, actor.opt)
    polyak_update(critic.target, critic.net, cfg.polyak)
    polyak_update(actor.target, actor.net, cfg.polyak)
    return {"critic_loss": critic_loss, "actor_loss": actor_loss, "target_max": float(np.max(np.abs(y)))}


# -- SAC ----------------------------------------------------------------------------


def _log1m_tanh2(u):
    # log(1 - tanh(u)^2), stable for large |u|
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def squashed_gaussian_logprob(u, mu, log_std, max_action=1.0):
    """Log-density of ``a = max_action * tanh(u)`` with ``u ~ N(mu, exp(log_std)^2)``."""
    std = np.exp(log_std)
    eps = (u - mu) / std
    per_dim = -0.5 * eps * eps - log_std - _HALF_LOG_2PI - _log1m_tanh2(u) - np.log(max_action)
    return np.sum(per_dim, axis=-1)


def sac_sample(actor: Actor, obs, eps, net=None):
    """Reparameterised sample: normalised action, log-prob and the pieces for gradients."""
    y, cache = forward(net if net is not None else actor.net, obs)
    mu, log_std = actor.heads(y)
    std = np.exp(log_std)
    u = mu + std * eps
    a = np.tanh(u)
    # entropy is measured in the normalised action space
    logp = squashed_gaussian_logprob(u, mu, log_std)
    return a, logp, (y, cache, mu, log_std, std, u)


def sac_targets(batch: UpdateBatch, critics, actor: Actor, cfg: VariantConfig, eps):
    a2, logp2, _ = sac_sample(actor, batch.obs2, eps)
    qmin = np.minimum(critics[0].q(batch.obs2, a2, target=True), critics[1].q(batch.obs2, a2, target=True))
    return batch.rew + cfg.gamma * (1.0 - batch.done) * (qmin - cfg.sac_temperature * logp2)


def sac_actor_loss_and_grad(actor: Actor, critics, obs, eps, temperature):
    """``mean(alpha * log pi(a|s) - min_k Q_k(s, a))`` with ``a`` reparameterised by ``eps``."""
    a, logp, (y, cache, mu, log_std, std, u) = sac_sample(actor, obs, eps)
    q0, g0 = q_and_action_grad(critics[0], obs, a)
    q1, g1 = q_and_action_grad(critics[1], obs, a)
    use0 = (q0 <= q1)[:, None]
    qmin = np.where(use0[:, 0], q0, q1)
    dq_da = np.where(use0, g0, g1)
    n = obs.shape[0]
    loss = float(np.mean(temperature * logp - qmin))
    t = np.tanh(u)
    dq_du = dq_da * (1.0 - t * t)
    # d logp / du (with eps held fixed) is 2 tanh(u); d u / d log_std = std * eps
    dl_du = temperature * 2.0 * t - dq_du
    d_mu = dl_du
    d_log_std = temperature * (-1.0) + dl_du * std * eps
    raw_ls = y[:, actor.act_dim:]
    d_log_std = d_log_std * ((raw_ls > LOG_STD_MIN) & (raw_ls < LOG_STD_MAX))
    grads, _ = backward(actor.net, cache, np.concatenate([d_mu, d_log_std], axis=1) / n)
    return loss, grads, logp


def sac_update(batch: UpdateBatch, critics, actor: Actor, cfg: VariantConfig, rng) -> dict:
    """Twin-critic soft update with fixed temperature, then actor and targets."""
    n = batch.obs.shape[0]
    eps2 = rng.standard_normal((n, actor.act_dim))
    y = sac_targets(batch, critics, actor, cfg, eps2)
    if not np.all(np.isfinite(y)):
        raise DivergenceError("non-finite SAC targets")
    critic_loss = sum(critic_step(c, batch.obs, batch.act, y) for c in critics) / 2.0
    eps = rng.standard_normal((n, actor.act_dim))
    actor_loss, grads, logp = sac_actor_loss_and_grad(actor, critics, batch.obs, eps, cfg.sac_temperature)
    _check("actor loss", actor_loss)
    adam_net_step(actor.net, grads, actor.opt)
    for c in critics:
        polyak_update(c.target, c.net, cfg.polyak)
    return {
        "critic_loss": critic_loss,
        "actor_loss": actor_loss,
        "entropy": float(-np.mean(logp)),
        "target_max": float(np.max(np.abs(y))),
    }


def policy_entropy(actor: Actor, obs, rng, n_samples=4096) -> float:
    """Monte-Carlo entropy of the squashed policy at one observation."""
    obs = np.repeat(np.atleast_2d(obs), n_samples, axis=0)
    _, logp, _ = sac_sample(actor, obs, rng.standard_normal((n_samples, actor.act_dim)))
    return float(-np.mean(logp))


@dataclass
class AgentState:
    """Named networks and optimizer states for checkpointing."""

    networks: dict = field(default_factory=dict)
    optimizers: dict = field(default_factory=dict)


def agent_networks(actor: Actor, critics) -> dict:
    nets = {"actor": actor.net, "actor_target": actor.target}
    for k, c in enumerate(critics):
        nets[f"critic{k}"] = c.net
        nets[f"critic{k}_target"] = c.target
    return nets


def agent_optimizers(actor: Actor, critics) -> dict:
    opts = {"actor": actor.opt}
    for k, c in enumerate(critics):
        opts[f"critic{k}"] = c.opt
    return opts
