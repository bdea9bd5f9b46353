"""Deterministic models, Dyna-style planning and k-step value-expansion losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .agents import (
    Batch, DdpgAgent, NonFiniteError, StepInfo, Transition, UpdateInfo,
    _apply_critic, actor_update, critic_direction, learn, sync_targets,
)
from .envs import ContinuousEnv
from .nn import Mlp, Optimizer, huber

UPDATE_KINDS = ("semi_gradient", "residual")
METHODS = ("dyna", "mve")


class OracleModel:
    """Exact model backed by a private copy of the environment's dynamics."""

    kind = "oracle"

    def __init__(self, env: ContinuousEnv):
        self.env = env.clone()

    def predict(self, s, a):
        return self.env.transition(s, a)


class LearnedModel:
    """MLP predicting reward and state change from standardised ``(s, a)``."""

    kind = "learned"

    def __init__(self, state_dim: int, action_dim: int, rng: np.random.Generator,
                 hidden=(64, 64), activation: str = "relu", lr: float = 1e-3):
        self.state_dim, self.action_dim = state_dim, action_dim
        self.rng = rng
        self.net = Mlp([state_dim + action_dim, *hidden, 1 + state_dim], activation).init(rng)
        self.opt = Optimizer(self.net, lr)
        self.in_mean = np.zeros(state_dim + action_dim)
        self.in_std = np.ones(state_dim + action_dim)
        self.out_mean = np.zeros(1 + state_dim)
        self.out_std = np.ones(1 + state_dim)

    @staticmethod
    def _targets(r, s, s_next):
        return np.concatenate([np.asarray(r)[:, None], s_next - s], axis=1)

    def refresh_statistics(self, buffer) -> None:
        n = len(buffer)
        x = np.concatenate([buffer.s[:n], buffer.a[:n]], axis=1)
        y = self._targets(buffer.r[:n], buffer.s[:n], buffer.s_next[:n])
        self.in_mean, self.in_std = x.mean(axis=0), np.maximum(x.std(axis=0), 1e-6)
        self.out_mean, self.out_std = y.mean(axis=0), np.maximum(y.std(axis=0), 1e-6)

    def loss_and_grad(self, batch: Batch):
        x = (np.concatenate([batch.s, batch.a], axis=1) - self.in_mean) / self.in_std
        y = (self._targets(batch.r, batch.s, batch.s_next) - self.out_mean) / self.out_std
        err = self.net.forward(x) - y
        n = err.shape[0]
        loss = float(np.mean(np.sum(err * err, axis=1)))
        grad, _ = self.net.backward(x, 2.0 * err / n)
        return loss, grad

    def predict(self, s, a):
        s = np.asarray(s, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        x = (np.concatenate([s, a], axis=1) - self.in_mean) / self.in_std
        y = self.net.forward(x) * self.out_std + self.out_mean
        return y[:, 0], s + y[:, 1:]


def model_fit_step(model, buffer, batch_size: int, grad_steps: int = 1,
                   rng: Optional[np.random.Generator] = None) -> float:
    """Refresh normalisation and run ``grad_steps`` minibatch regression steps.

    Minibatches are drawn with the model's own generator unless ``rng`` is
    given, never with the buffer's.  Returns the last minibatch loss (NaN when ``grad_steps`` is 0).
    """
    if getattr(model, "kind", None) != "learned":
        raise TypeError("only learned models can be fitted; oracle models are exact")
    if len(buffer) == 0:
        raise ValueError("cannot fit a model on an empty buffer")
    if grad_steps == 0:
        return float("nan")
    model.refresh_statistics(buffer)
    rng = model.rng if rng is None else rng
    loss = float("nan")
    for _ in range(grad_steps):
        loss, grad = model.loss_and_grad(buffer.sample(batch_size, rng))
        if not np.isfinite(loss):
            raise NonFiniteError("non-finite model loss")
        model.opt.step(grad)
    return loss


def imagine(model, s, a):
    """One deterministic model step; accepts a single pair or a batch."""
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if s.ndim == 1:
        r, s_next = model.predict(s[None, :], a[None, :])
        return float(r[0]), s_next[0]
    return model.predict(s, a)


def model_rmse(model, batch: Batch) -> float:
    _, s_next = model.predict(batch.s, batch.a)
    return float(np.sqrt(np.mean((s_next - batch.s_next) ** 2)))


@dataclass
class PlanningConfig:
    """Planning settings.

    ``method`` selects Dyna planning (``update_kind`` picks the planning
    critic update) or the k-step value expansion critic loss.
    """

    planning_steps: int = 1
    noise_sigma: float = 0.1      # fraction of the action half-range
    eta: float = 0.2
    update_kind: str = "residual"
    unroll_k: int = 3
    method: str = "dyna"
    stabilized: bool = True
    use_huber: bool = True
    huber_delta: float = 1.0
    fit_steps: int = 1
    fit_batch_size: int = 64

    def __post_init__(self):
        if self.planning_steps < 0:
            raise ValueError("planning_steps must be non-negative")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must be in [0, 1], got {self.eta}")
        if self.update_kind not in UPDATE_KINDS:
            raise ValueError(f"unknown planning update {self.update_kind!r}")
        if self.unroll_k < 1:
            raise ValueError("unroll_k must be at least 1")
        if self.method not in METHODS:
            raise ValueError(f"unknown planning method {self.method!r}")


def planning_update_semi(agent: DdpgAgent, imaginary) -> UpdateInfo:
    """Semi-gradient critic update on imaginary transitions (target bootstrap)."""
    return _apply_critic(agent, critic_direction(agent, imaginary, "vanilla"))


def planning_update_residual(agent: DdpgAgent, imaginary, eta: float) -> UpdateInfo:
    """Residual-algorithm critic update on imaginary transitions, online networks only."""
    return _apply_critic(agent, critic_direction(agent, imaginary, "res", eta))


def imaginary_batch(model, agent: DdpgAgent, batch: Batch, sigma: float,
                    rng: np.random.Generator) -> Batch:
    noise = sigma * agent.action_scale * rng.standard_normal(batch.a.shape)
    a_hat = np.clip(batch.a + noise, agent.action_low, agent.action_high)
    r_hat, s_hat = model.predict(batch.s, a_hat)
    return Batch(batch.s, a_hat, r_hat, s_hat, np.zeros(batch.size, dtype=bool))


def _fit_if_learned(model, agent, cfg, fit_rng) -> Optional[float]:
    if model.kind != "learned":
        return None
    return model_fit_step(model, agent.buffer, cfg.fit_batch_size, cfg.fit_steps, fit_rng)


def dyna_train_step(agent: DdpgAgent, transition: Transition, model, cfg: PlanningConfig,
                    plan_rng: np.random.Generator, fit_rng: Optional[np.random.Generator] = None
                    ) -> StepInfo:
    """One step of Dyna-DDPG.

    The real minibatch gets the agent's usual critic and actor update, then
    ``planning_steps`` critic-only updates on perturbed-action model
    transitions built from the same minibatch, then the targets are synced.
    """
    agent.buffer.add(transition)
    fit_loss = _fit_if_learned(model, agent, cfg, fit_rng)
    if not agent.warm:
        return StepInfo(extra={"model_loss": fit_loss})
    batch = agent.buffer.sample(agent.config.batch_size)
    info = learn(agent, batch)
    plan_deltas = []
    for _ in range(cfg.planning_steps):
        imag = imaginary_batch(model, agent, batch, cfg.noise_sigma, plan_rng)
        if cfg.update_kind == "residual":
            plan = planning_update_residual(agent, imag, cfg.eta)
        else:
            plan = planning_update_semi(agent, imag)
        plan_deltas.append(float(np.mean(np.abs(plan.delta_backward))))
    sync_targets(agent)
    info.extra = {"model_loss": fit_loss, "plan_delta": float(np.mean(plan_deltas)) if plan_deltas else None}
    return info


# -- k-step value expansion ---------------------------------------------------

@dataclass
class Rollout:
    """Batched trajectories ``(s_-1, a_-1, r_0, s_0, a_0, r_1, ..., r_k, s_k)``.

    ``states`` has shape ``(k + 2, n, state_dim)``, ``actions`` ``(k + 1, n,
    action_dim)`` and ``rewards`` ``(k + 1, n)``; index ``j`` holds time ``j - 1``
    for states and actions and time ``j`` for rewards.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    @property
    def k(self) -> int:
        return self.rewards.shape[0] - 1

    def check(self, k: int) -> None:
        if (self.states.shape[0] != k + 2 or self.actions.shape[0] != k + 1
                or self.rewards.shape[0] != k + 1):
            raise ValueError(
                f"rollout lengths (states {self.states.shape[0]}, actions {self.actions.shape[0]}, "
                f"rewards {self.rewards.shape[0]}) do not match k={k}"
            )


def unroll(model, batch: Batch, policy: Callable, k: int) -> Rollout:
    """Extend real transitions by ``k`` model steps taken with ``policy``."""
    states, actions, rewards = [batch.s, batch.s_next], [batch.a], [batch.r]
    s = batch.s_next
    for _ in range(k):
        a = policy(s)
        r, s = model.predict(s, a)
        actions.append(a)
        rewards.append(r)
        states.append(s)
    return Rollout(np.stack(states), np.stack(actions), np.stack(rewards))


def _q(net: Mlp, s, a):
    x = np.concatenate([s, a], axis=-1)
    return net.forward(x.reshape(-1, x.shape[-1]))[:, 0].reshape(x.shape[:-1])


def _bootstrapped_targets(rollout: Rollout, target_q: Mlp, target_policy: Callable, gamma: float):
    """``targets[j]`` is the return from time ``j - 1`` bootstrapped at ``s_k``."""
    k = rollout.k
    s_k = rollout.states[-1]
    g = _q(target_q, s_k, target_policy(s_k))
    targets = np.empty_like(rollout.rewards)
    for j in range(k, -1, -1):
        g = rollout.rewards[j] + gamma * g
        targets[j] = g
    return targets


def _critic_grad(q: Mlp, states, actions, coef):
    """Parameter gradient of ``sum coef * Q(states, actions)`` over all rows."""
    x = np.concatenate([states, actions], axis=-1).reshape(-1, q.in_dim)
    grad, _ = q.backward(x, coef.reshape(-1, 1))
    return grad


def value_expansion_residuals(rollout: Rollout, q: Mlp, target_q: Mlp, target_policy: Callable,
                              k: int, gamma: float, stabilized: bool = False) -> np.ndarray:
    """Residuals ``Q(s_t, a_t) - target_t`` for ``t = -1 .. k-1``, shape ``(k + 1, n)``.

    Every target is the discounted model return bootstrapped with the target
    critic at ``s_k``.  With ``stabilized`` the real transition instead gets
    the one-step target ``r_0 + gamma * Qt(s_0, a_0)``.
    """
    rollout.check(k)
    targets = _bootstrapped_targets(rollout, target_q, target_policy, gamma)
    if stabilized:
        targets[0] = rollout.rewards[0] + gamma * _q(target_q, rollout.states[1], rollout.actions[1])
    return _q(q, rollout.states[:-1], rollout.actions) - targets


def mve_loss(rollout: Rollout, q: Mlp, target_q: Mlp, target_policy: Callable, k: int, gamma: float):
    """k-step value expansion loss, averaged over the batch.

    Every state ``s_-1 .. s_{k-1}`` is regressed onto its discounted model
    return bootstrapped with the target critic at ``s_k``.  Targets carry no
    gradient.
    """
    err = value_expansion_residuals(rollout, q, target_q, target_policy, k, gamma)
    n = err.shape[1]
    loss = float(np.sum(err * err) / ((k + 1) * n))
    grad = _critic_grad(q, rollout.states[:-1], rollout.actions, 2.0 * err / ((k + 1) * n))
    return loss, grad


def mve_loss_stabilized(rollout: Rollout, q: Mlp, target_q: Mlp, target_policy: Callable,
                        k: int, gamma: float, use_huber: bool = False, delta: float = 1.0):
    """Value expansion loss that weights the real transition separately.

    The real transition is regressed on its one-step target
    ``r_0 + gamma * Qt(s_0, a_0)`` with weight 1; the imaginary states share
    the k-step targets with weight ``1/k``.  With ``use_huber`` every squared
    residual is replaced by the Huber loss.
    """
    err = value_expansion_residuals(rollout, q, target_q, target_policy, k, gamma, stabilized=True)
    n = err.shape[1]
    weight = np.full((k + 1, 1), 1.0 / k)
    weight[0] = 1.0
    if use_huber:
        rho, drho = huber(err, delta)
    else:
        rho, drho = err * err, 2.0 * err
    loss = float(np.sum(weight * rho) / n)
    grad = _critic_grad(q, rollout.states[:-1], rollout.actions, weight * drho / n)
    return loss, grad


def mve_train_step(agent: DdpgAgent, transition: Transition, model, cfg: PlanningConfig,
                   fit_rng: Optional[np.random.Generator] = None) -> StepInfo:
    """DDPG whose critic minimises the value expansion loss on model rollouts."""
    agent.buffer.add(transition)
    fit_loss = _fit_if_learned(model, agent, cfg, fit_rng)
    if not agent.warm:
        return StepInfo(extra={"model_loss": fit_loss})
    batch = agent.buffer.sample(agent.config.batch_size)
    target_policy = lambda s: agent.policy(s, target=True)  # noqa: E731
    rollout = unroll(model, batch, target_policy, cfg.unroll_k)
    args = (rollout, agent.critic.online, agent.critic.target, target_policy, cfg.unroll_k, agent.config.gamma)
    if cfg.stabilized:
        loss, grad = mve_loss_stabilized(*args, use_huber=cfg.use_huber, delta=cfg.huber_delta)
    else:
        loss, grad = mve_loss(*args)
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite value expansion loss")
    agent.critic_opt.step(grad)
    actor_grad = actor_update(agent, batch)
    agent.updates += 1
    sync_targets(agent)
    return StepInfo(True, None, actor_grad, {"model_loss": fit_loss, "mve_loss": loss})
