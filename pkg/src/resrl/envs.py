"""Deterministic desk-scale environments.

Continuous tasks keep their full state in the observation vector and step it
through a pure function ``transition(state, action)``; this is what lets an
oracle model reproduce environment steps bit for bit.
"""

from __future__ import annotations

import copy
import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mdp import FiniteMdp, PolicyTable
from .objectives import FeatureMap


class ContinuousEnv:
    state_dim: int
    action_dim: int
    horizon: int
    action_low: np.ndarray
    action_high: np.ndarray

    def __init__(self, rng: Optional[np.random.Generator] = None):
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.state: Optional[np.ndarray] = None
        self.t = 0

    def clip_action(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=np.float64).reshape(-1, self.action_dim)
        a = np.clip(a, self.action_low, self.action_high)
        return a[0] if np.ndim(action) <= 1 else a

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def transition(self, state, action) -> tuple[np.ndarray, np.ndarray]:
        """Batched pure dynamics: ``(states, actions) -> (rewards, next_states)``."""
        raise NotImplementedError

    def reset(self, state=None) -> np.ndarray:
        self.state = self.initial_state(self.rng) if state is None else np.array(state, dtype=np.float64)
        self.t = 0
        return self.state.copy()

    def step(self, action) -> tuple[np.ndarray, float, bool, bool]:
        """Advance one step; returns ``(next_state, reward, terminal, truncated)``."""
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        a = self.clip_action(action)
        r, s_next = self.transition(self.state[None, :], a[None, :])
        self.state = s_next[0]
        self.t += 1
        return self.state.copy(), float(r[0]), False, self.t >= self.horizon

    def clone(self) -> "ContinuousEnv":
        return copy.deepcopy(self)


def _angle_normalize(x):
    return ((x + np.pi) % (2 * np.pi)) - np.pi


class Pendulum(ContinuousEnv):
    """Torque-limited pendulum swing-up.

    The angle is measured from the hanging position, so ``(cos, sin, omega) =
    (1, 0, 0)`` is the stable rest state.  Cost penalises the angle from
    upright, angular speed and torque.  Semi-implicit Euler with speed clipping.
    """

    state_dim, action_dim, horizon = 3, 1, 200
    action_low, action_high = np.array([-2.0]), np.array([2.0])
    gravity, mass, length, dt, max_speed = 10.0, 1.0, 1.0, 0.05, 8.0

    def initial_state(self, rng):
        theta = rng.uniform(-np.pi, np.pi)
        omega = rng.uniform(-1.0, 1.0)
        return np.array([np.cos(theta), np.sin(theta), omega])

    def transition(self, state, action):
        state = np.asarray(state, dtype=np.float64)
        u = np.clip(np.asarray(action, dtype=np.float64), self.action_low, self.action_high)[:, 0]
        cos_th, sin_th, omega = state[:, 0], state[:, 1], state[:, 2]
        theta = np.arctan2(sin_th, cos_th)
        from_top = np.arctan2(-sin_th, -cos_th)
        reward = -(from_top ** 2 + 0.1 * omega ** 2 + 0.001 * u ** 2)
        accel = (-3.0 * self.gravity / (2.0 * self.length) * np.sin(theta)
                 + 3.0 / (self.mass * self.length ** 2) * u)
        omega = np.clip(omega + accel * self.dt, -self.max_speed, self.max_speed)
        theta = theta + omega * self.dt
        return reward, np.stack([np.cos(theta), np.sin(theta), omega], axis=1)


class PointMass(ContinuousEnv):
    """2-d point mass with bounded acceleration and explicit Euler dynamics.

    State is ``(x, y, vx, vy)``; the goal is the origin at rest.
    """

    state_dim, action_dim, horizon = 4, 2, 100
    action_low, action_high = np.array([-1.0, -1.0]), np.array([1.0, 1.0])
    dt = 0.1
    goal = np.zeros(2)
    velocity_cost, action_cost = 0.1, 0.01

    def initial_state(self, rng):
        return np.concatenate([rng.uniform(-1.0, 1.0, size=2), np.zeros(2)])

    def transition(self, state, action):
        state = np.asarray(state, dtype=np.float64)
        a = np.clip(np.asarray(action, dtype=np.float64), self.action_low, self.action_high)
        pos, vel = state[:, :2], state[:, 2:]
        offset = pos - self.goal
        reward = -(np.sum(offset * offset, axis=1) + self.velocity_cost * np.sum(vel * vel, axis=1)
                   + self.action_cost * np.sum(a * a, axis=1))
        return reward, np.concatenate([pos + self.dt * vel, vel + self.dt * a], axis=1)


def pendulum_env(rng=None) -> Pendulum:
    return Pendulum(rng)


def point_mass_env(rng=None) -> PointMass:
    return PointMass(rng)


ENVIRONMENTS = {"pendulum": pendulum_env, "point_mass": point_mass_env}


def make_env(env_id: str, rng=None) -> ContinuousEnv:
    try:
        return ENVIRONMENTS[env_id](rng)
    except KeyError:
        raise ValueError(f"unknown environment {env_id!r}; choose from {sorted(ENVIRONMENTS)}") from None


def dump_trajectory(path, states, actions, rewards) -> None:
    """Write a trajectory as CSV with columns ``t, s0.., a0.., r``."""
    states, actions = np.atleast_2d(states), np.atleast_2d(actions)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["t", *(f"s{i}" for i in range(states.shape[1])),
                      *(f"a{i}" for i in range(actions.shape[1])), "r"])
        for t, (s, a, r) in enumerate(zip(states, actions, rewards)):
            out.writerow([t, *map(repr, map(float, s)), *map(repr, map(float, a)), repr(float(r))])


@dataclass(frozen=True)
class DiagnosticMdp:
    mdp: FiniteMdp
    features: FeatureMap
    target: PolicyTable
    behavior: PolicyTable
    initial_weights: Optional[np.ndarray] = None


def star_counterexample(gamma: float = 0.99) -> DiagnosticMdp:
    """Seven-state star MDP with eight linear features (Baird-style).

    States 0-5 are the outer states, state 6 the centre.  Action 0 ("dashed")
    jumps uniformly to an outer state, action 1 ("solid") jumps to the centre.
    All rewards are zero, so the true values are zero.  The target policy
    always takes action 1; the behaviour policy takes action 0 with
    probability 6/7, which makes every state equally likely under behaviour.
    Outer state i has features ``2 e_i + e_7``; the centre has ``e_6 + 2 e_7``.
    Linear TD under the behaviour state distribution diverges from the
    customary start ``(1, 1, 1, 1, 1, 1, 10, 1)``.
    """
    n = 7
    p = np.zeros((n, 2, n))
    p[:, 0, :6] = 1.0 / 6.0
    p[:, 1, 6] = 1.0
    mdp = FiniteMdp(p, np.zeros((n, 2)), gamma)
    x = np.zeros((n, 8))
    for i in range(6):
        x[i, i], x[i, 7] = 2.0, 1.0
    x[6, 6], x[6, 7] = 1.0, 2.0
    target = PolicyTable.deterministic([1] * n, 2)
    behavior = PolicyTable(np.tile([6.0 / 7.0, 1.0 / 7.0], (n, 1)))
    w0 = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 10.0, 1.0])
    return DiagnosticMdp(mdp, FeatureMap(x), target, behavior, w0)


def random_chain(n: int, seed, n_actions: int = 2, n_features: Optional[int] = None,
                 rank: Optional[int] = None, gamma: float = 0.9,
                 off_policy: bool = False) -> DiagnosticMdp:
    """Seeded random MDP whose kernel is strictly positive, hence ergodic.

    Features are ``n x n_features`` with the requested column rank.  The
    behaviour policy equals the target unless ``off_policy`` is set.
    """
    rng = np.random.default_rng(seed)
    d = n if n_features is None else n_features
    k = min(d, n) if rank is None else rank
    if not 1 <= k <= min(n, d):
        raise ValueError(f"rank must be in [1, {min(n, d)}], got {k}")
    p = rng.dirichlet(np.ones(n), size=(n, n_actions))
    r = rng.normal(size=(n, n_actions))
    mdp = FiniteMdp(p, r, gamma)
    x = rng.normal(size=(n, k)) @ rng.normal(size=(k, d))
    target = PolicyTable(rng.dirichlet(np.ones(n_actions), size=n))
    behavior = PolicyTable(rng.dirichlet(np.ones(n_actions), size=n)) if off_policy else target
    return DiagnosticMdp(mdp, FeatureMap(x), target, behavior)
