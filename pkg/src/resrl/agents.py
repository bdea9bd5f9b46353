"""DDPG and its residual variants.

Every critic update is expressed as an ascent direction

    d = sum_i c1_i grad Q(x1_i) - eta * gamma * sum_i c2_i grad Q(x2_i)

averaged over the batch, with ``x1 = (s, a)`` and ``x2 = (s', mu(s'))``.  The
variants only differ in how the scalar errors ``c1`` and ``c2`` bootstrap:

=========  ==========================  ==========================
variant    c1                          c2
=========  ==========================  ==========================
vanilla    r + g Qt(s', mut(s')) - Q   (no forward term)
bi_res     r + g Qt(s', mut(s')) - Q   r + g Q(s', mu(s')) - Qt
res        r + g Q(s', mu(s')) - Q     same as c1
to_res     r + g Qt(s', mut(s')) - Q   same as c1
ot_res     r + g Q(s', mu(s')) - Qt    same as c1
tt_res     r + g Qt(s', mut(s')) - Qt  same as c1
=========  ==========================  ==========================

where ``Qt`` and ``mut`` are target networks and ``Q`` without arguments
means the value at ``(s, a)``.  The direction is handed to the optimizer as
``-d``, so with plain SGD the critic moves by ``alpha1 * d``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .nn import Mlp, Optimizer, TargetPair, soft_sync

VARIANTS = ("vanilla", "bi_res", "res", "to_res", "ot_res", "tt_res")
RESIDUAL_VARIANTS = ("res", "to_res", "ot_res", "tt_res")

# (bootstrap from target?, current value from target?) for the shared error
_VARIANT_ERRORS = {
    "vanilla": (True, False),
    "bi_res": (True, False),
    "res": (False, False),
    "to_res": (True, False),
    "ot_res": (False, True),
    "tt_res": (True, True),
}


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    terminal: bool = False


class Batch(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    terminal: np.ndarray

    @property
    def size(self) -> int:
        return self.r.shape[0]


class ReplayBuffer:
    """Ring buffer with uniform sampling and oldest-first eviction."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int, rng: np.random.Generator):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.rng = rng
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, state_dim))
        self.terminal = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.head = 0

    def __len__(self):
        return self.size

    def add(self, t: Transition) -> None:
        i = self.head
        self.s[i], self.a[i], self.r[i] = t.s, t.a, t.r
        self.s_next[i], self.terminal[i] = t.s_next, t.terminal
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def indices(self, batch_size: int, rng=None) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return (self.rng if rng is None else rng).integers(0, self.size, size=batch_size)

    def gather(self, idx) -> Batch:
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.terminal[idx])

    def sample(self, batch_size: int, rng=None) -> Batch:
        return self.gather(self.indices(batch_size, rng))

    def all(self) -> Batch:
        return self.gather(np.arange(self.size))


class GaussianNoise:
    def __init__(self, sigma, rng: np.random.Generator):
        self.sigma = np.asarray(sigma, dtype=np.float64)
        self.rng = rng

    def __call__(self) -> np.ndarray:
        return self.sigma * self.rng.standard_normal(self.sigma.shape)

    def reset(self) -> None:
        pass


class OrnsteinUhlenbeckNoise:
    """Temporally correlated exploration noise."""

    def __init__(self, sigma, rng: np.random.Generator, theta: float = 0.15, dt: float = 1e-2):
        self.sigma = np.asarray(sigma, dtype=np.float64)
        self.rng, self.theta, self.dt = rng, theta, dt
        self.x = np.zeros_like(self.sigma)

    def __call__(self) -> np.ndarray:
        self.x = (self.x - self.theta * self.x * self.dt
                  + self.sigma * np.sqrt(self.dt) * self.rng.standard_normal(self.x.shape))
        return self.x

    def reset(self) -> None:
        self.x = np.zeros_like(self.sigma)


@dataclass
class DdpgConfig:
    variant: str = "vanilla"
    eta: float = 0.0
    gamma: float = 0.99
    tau: float = 1e-3
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    optimizer: str = "adam"
    batch_size: int = 64
    warmup: int = 1000
    buffer_capacity: int = 10**6
    critic_hidden: tuple = (64, 64)
    actor_hidden: tuple = (64, 64)
    activation: str = "relu"
    noise: str = "gaussian"
    noise_sigma: float = 0.2      # fraction of the action half-range

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must be in [0, 1], got {self.eta}")
        if self.noise not in ("gaussian", "ou"):
            raise ValueError(f"unknown noise process {self.noise!r}")
        if self.batch_size < 1 or self.warmup < 0:
            raise ValueError("batch_size must be positive and warmup non-negative")


@dataclass
class UpdateInfo:
    direction: np.ndarray
    delta_backward: np.ndarray
    delta_forward: Optional[np.ndarray] = None


class DdpgAgent:
    """Actor and critic with target copies, a replay buffer and exploration.

    ``rngs`` maps stream names to generators; ``agent-init``, ``noise`` and
    ``replay-sampling`` are used.
    """

    def __init__(self, state_dim: int, action_dim: int, action_low, action_high,
                 config: DdpgConfig, rngs: dict, critic: Mlp = None, actor: Mlp = None):
        self.config = config
        self.state_dim, self.action_dim = state_dim, action_dim
        self.action_low = np.asarray(action_low, dtype=np.float64)
        self.action_high = np.asarray(action_high, dtype=np.float64)
        self.action_scale = 0.5 * (self.action_high - self.action_low)
        self.action_center = 0.5 * (self.action_high + self.action_low)
        init_rng = rngs["agent-init"]
        if critic is None:
            critic = Mlp([state_dim + action_dim, *config.critic_hidden, 1], config.activation).init(init_rng)
        if actor is None:
            actor = Mlp([state_dim, *config.actor_hidden, action_dim], config.activation, "tanh").init(init_rng)
        self.critic = TargetPair.of(critic, config.tau)
        self.actor = TargetPair.of(actor, config.tau)
        self.critic_opt = Optimizer(self.critic.online, config.critic_lr, config.optimizer)
        self.actor_opt = Optimizer(self.actor.online, config.actor_lr, config.optimizer)
        self.buffer = ReplayBuffer(config.buffer_capacity, state_dim, action_dim, rngs["replay-sampling"])
        sigma = config.noise_sigma * self.action_scale
        noise_cls = GaussianNoise if config.noise == "gaussian" else OrnsteinUhlenbeckNoise
        self.noise = noise_cls(sigma, rngs["noise"])
        self.updates = 0

    # -- network helpers ---------------------------------------------------

    def policy(self, s, target: bool = False) -> np.ndarray:
        net = self.actor.target if target else self.actor.online
        return self.action_center + self.action_scale * net.forward(s)

    def q(self, s, a, target: bool = False) -> np.ndarray:
        net = self.critic.target if target else self.critic.online
        return net.forward(np.concatenate([s, a], axis=-1))[..., 0]

    @property
    def warm(self) -> bool:
        return len(self.buffer) >= max(self.config.warmup, self.config.batch_size, 1)


def _as_batch(batch) -> Batch:
    if isinstance(batch, Batch):
        return batch
    if isinstance(batch, Transition):
        batch = [batch]
    return Batch(np.array([t.s for t in batch], dtype=np.float64),
                 np.array([t.a for t in batch], dtype=np.float64),
                 np.array([t.r for t in batch], dtype=np.float64),
                 np.array([t.s_next for t in batch], dtype=np.float64),
                 np.array([t.terminal for t in batch], dtype=bool))


def _check_finite(name, x) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite {name} in critic update")


def critic_direction(agent: DdpgAgent, batch, variant: Optional[str] = None,
                     eta: Optional[float] = None) -> UpdateInfo:
    """Batch-mean ascent direction for the critic, without applying it."""
    b = _as_batch(batch)
    variant = agent.config.variant if variant is None else variant
    eta = agent.config.eta if eta is None else eta
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    gamma = agent.config.gamma
    n = b.size
    live = ~b.terminal
    # terminal rows never evaluate their successor
    s_next = np.where(live[:, None], b.s_next, 0.0)
    x1 = np.concatenate([b.s, b.a], axis=1)

    q_sa = agent.q(b.s, b.a)
    x2 = None
    if variant != "vanilla":
        x2 = np.concatenate([s_next, agent.policy(s_next)], axis=1)
    boot_target_first, current_target = _VARIANT_ERRORS[variant]
    need_target_boot = boot_target_first or variant == "bi_res"
    need_online_boot = not boot_target_first or variant == "bi_res"
    need_target_cur = current_target or variant == "bi_res"

    def masked(v):
        return np.where(live, v, 0.0)

    boot_t = masked(agent.q(s_next, agent.policy(s_next, target=True), target=True)) if need_target_boot else None
    boot_o = masked(agent.critic.online.forward(x2)[:, 0]) if need_online_boot else None
    tq_sa = agent.q(b.s, b.a, target=True) if need_target_cur else None

    boot = boot_t if boot_target_first else boot_o
    cur = tq_sa if current_target else q_sa
    delta = (b.r + gamma * boot) - cur
    _check_finite("TD error", delta)

    if variant == "vanilla":
        grad1, _ = agent.critic.online.backward(x1, (delta / n)[:, None])
        return UpdateInfo(grad1, delta)
    if variant == "bi_res":
        delta_f = (b.r + gamma * boot_o) - tq_sa
    else:
        delta_f = delta
    _check_finite("forward TD error", delta_f)
    grad1, _ = agent.critic.online.backward(x1, (delta / n)[:, None])
    grad2, _ = agent.critic.online.backward(x2, (masked(delta_f) / n)[:, None])
    return UpdateInfo(grad1 - (eta * gamma) * grad2, delta, delta_f)


def _apply_critic(agent: DdpgAgent, info: UpdateInfo) -> UpdateInfo:
    _check_finite("critic direction", info.direction)
    agent.critic_opt.step(-info.direction)
    return info


def critic_update_vanilla(agent: DdpgAgent, batch) -> UpdateInfo:
    return _apply_critic(agent, critic_direction(agent, batch, "vanilla"))


def critic_update_bi_res(agent: DdpgAgent, batch) -> UpdateInfo:
    """Bidirectional-target residual update; backward and forward errors each
    compare an online value against a target value."""
    return _apply_critic(agent, critic_direction(agent, batch, "bi_res"))


def critic_update_variant(agent: DdpgAgent, batch, variant: Optional[str] = None) -> UpdateInfo:
    variant = agent.config.variant if variant is None else variant
    if variant not in RESIDUAL_VARIANTS:
        raise ValueError(f"{variant!r} is not one of the residual variants {RESIDUAL_VARIANTS}")
    return _apply_critic(agent, critic_direction(agent, batch, variant))


def critic_update(agent: DdpgAgent, batch) -> UpdateInfo:
    return _apply_critic(agent, critic_direction(agent, batch))


def actor_direction(agent: DdpgAgent, batch) -> np.ndarray:
    """Batch-mean deterministic policy gradient through the online critic."""
    s = _as_batch(batch).s
    n = s.shape[0]
    raw = agent.actor.online.forward(s)
    a = agent.action_center + agent.action_scale * raw
    x = np.concatenate([s, a], axis=1)
    _, dx = agent.critic.online.backward(x, np.full((n, 1), 1.0 / n))
    dq_da = dx[:, agent.state_dim:]
    grad, _ = agent.actor.online.backward(s, dq_da * agent.action_scale)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite actor gradient")
    return grad


def actor_update(agent: DdpgAgent, batch) -> np.ndarray:
    grad = actor_direction(agent, batch)
    agent.actor_opt.step(-grad)
    return grad


def act(agent: DdpgAgent, s, explore: bool = True) -> np.ndarray:
    a = agent.policy(np.asarray(s, dtype=np.float64))
    if explore:
        a = a + agent.noise()
    return np.clip(a, agent.action_low, agent.action_high)


def sync_targets(agent: DdpgAgent) -> None:
    soft_sync(agent.critic)
    soft_sync(agent.actor)


@dataclass
class StepInfo:
    learned: bool = False
    critic: Optional[UpdateInfo] = None
    actor_grad: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)


def learn(agent: DdpgAgent, batch: Batch) -> StepInfo:
    critic_info = critic_update(agent, batch)
    actor_grad = actor_update(agent, batch)
    agent.updates += 1
    return StepInfo(True, critic_info, actor_grad)


def train_step(agent: DdpgAgent, transition: Transition) -> StepInfo:
    """Store one transition; once warm, run one critic/actor update and soft-sync targets."""
    agent.buffer.add(transition)
    if not agent.warm:
        return StepInfo()
    info = learn(agent, agent.buffer.sample(agent.config.batch_size))
    sync_targets(agent)
    return info
