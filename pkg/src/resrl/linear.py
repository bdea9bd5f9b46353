"""Incremental linear policy evaluation: semi-gradient TD, residual gradient
and the residual algorithm that mixes the two with coefficient ``eta``."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .mdp import FiniteMdp, PolicyTable, induced_dynamics, stationary_distribution
from .objectives import LinearObjectives, _features

MODES = ("semi_gradient", "residual_gradient", "residual_algorithm")
DIVERGENCE_BOUND = 1e12
CONVERGED, DIVERGED = "CONVERGED", "DIVERGED"


class DoubleSamplingError(RuntimeError):
    """A residual-gradient update needs an independent second successor sample."""


@dataclass(frozen=True)
class LearnerConfig:
    alpha: float
    eta: float = 0.0
    mode: str = "semi_gradient"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must be in [0, 1], got {self.eta}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")


@dataclass(frozen=True)
class SampledTransition:
    s: int
    r: float
    s_next: int
    s_next_prime: Optional[int] = None


def _td_error(w, x, t: SampledTransition, gamma):
    return t.r + gamma * (x[t.s_next] @ w) - x[t.s] @ w


def _second_successor(t: SampledTransition, deterministic: bool) -> int:
    if t.s_next_prime is not None:
        return t.s_next_prime
    if deterministic:
        return t.s_next
    raise DoubleSamplingError(
        "residual gradient needs an independent successor sample (s_next_prime) "
        "unless the transition is deterministic"
    )


def td_update(w, features, t: SampledTransition, cfg: LearnerConfig, gamma: float) -> np.ndarray:
    """``w + alpha * delta * x(s)``.  ``t.s_next_prime`` is never read."""
    x = _features(features)
    delta = _td_error(w, x, t, gamma)
    return w + (cfg.alpha * delta) * x[t.s]


def rg_update(w, features, t: SampledTransition, cfg: LearnerConfig, gamma: float,
              deterministic: bool = False) -> np.ndarray:
    """Residual-gradient step ``w - alpha * delta * (gamma x(s'') - x(s))``.

    The TD error bootstraps on ``s_next``; the successor gradient uses the
    independent sample ``s_next_prime``.
    """
    x = _features(features)
    s2 = _second_successor(t, deterministic)
    step = cfg.alpha * _td_error(w, x, t, gamma)
    return w + step * x[t.s] - (step * gamma) * x[s2]


def ra_update(w, features, t: SampledTransition, cfg: LearnerConfig, gamma: float,
              deterministic: bool = False) -> np.ndarray:
    x = _features(features)
    step = cfg.alpha * _td_error(w, x, t, gamma)
    if cfg.eta == 0.0:
        s2 = t.s_next if t.s_next_prime is None else t.s_next_prime
    else:
        s2 = _second_successor(t, deterministic)
    return w + step * x[t.s] - (step * gamma * cfg.eta) * x[s2]


def apply_update(w, features, t, cfg: LearnerConfig, gamma: float, deterministic: bool = False):
    if cfg.mode == "semi_gradient":
        return td_update(w, features, t, cfg, gamma)
    if cfg.mode == "residual_gradient":
        return rg_update(w, features, t, cfg, gamma, deterministic)
    return ra_update(w, features, t, cfg, gamma, deterministic)


class ChainSampler:
    """Simulates a behaviour chain and draws target-policy transitions from it.

    At every visited state ``s`` the learner receives ``(s, r, s', s'')`` with
    ``a ~ pi(s)``, ``s' ~ p(.|s, a)`` and an independent ``s''`` drawn the same
    way, which is possible because the simulator owns the kernel.  The chain
    then moves on by following the behaviour policy.  When behaviour and
    target coincide the chain moves to ``s'`` itself.
    """

    def __init__(self, mdp: FiniteMdp, target: PolicyTable, behavior: PolicyTable,
                 rng: np.random.Generator, reward_noise: float = 0.0):
        self.mdp = mdp
        self.on_policy = np.array_equal(target.probs, behavior.probs)
        self.rng = rng
        self.reward_noise = reward_noise
        self._pi_cdf = np.cumsum(target.probs, axis=1)
        self._mu_cdf = np.cumsum(behavior.probs, axis=1)
        self._p_cdf = np.cumsum(mdp.transition, axis=2)
        self.state = int(rng.integers(mdp.n_states))

    @staticmethod
    def _draw(cdf_row, u) -> int:
        return min(int(np.searchsorted(cdf_row, u, side="right")), len(cdf_row) - 1)

    def _successor(self, s, u_action, u_state):
        a = self._draw(self._pi_cdf[s], u_action)
        return a, self._draw(self._p_cdf[s, a], u_state)

    def sample(self) -> SampledTransition:
        s = self.state
        u = self.rng.random(6)
        a, s1 = self._successor(s, u[0], u[1])
        _, s2 = self._successor(s, u[2], u[3])
        r = float(self.mdp.reward[s, a])
        if self.reward_noise:
            r += self.reward_noise * float(self.rng.standard_normal())
        if self.on_policy:
            self.state = s1
        else:
            b = self._draw(self._mu_cdf[s], u[4])
            self.state = self._draw(self._p_cdf[s, b], u[5])
        return SampledTransition(s, r, s1, s2)


@dataclass
class PolicyEvalResult:
    status: str
    steps: list = field(default_factory=list)
    msve: list = field(default_factory=list)
    msbe: list = field(default_factory=list)
    mspbe: list = field(default_factory=list)
    w_norm: list = field(default_factory=list)
    weights: np.ndarray = None
    diverged_at: Optional[int] = None

    def rows(self):
        n = len(self.steps)
        for i in range(n):
            status = self.status if i == n - 1 else "RUNNING"
            yield (self.steps[i], self.msve[i], self.msbe[i], self.mspbe[i], self.w_norm[i], status)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["step", "msve", "msbe", "mspbe", "w_norm", "status"])
            for row in self.rows():
                out.writerow([row[0], *(repr(float(v)) for v in row[1:5]), row[5]])


def run_policy_evaluation(mdp: FiniteMdp, policy: PolicyTable, behavior_policy: PolicyTable,
                          features, cfg: LearnerConfig, steps: int, seed,
                          w0=None, log_interval: int = 100, reward_noise: float = 0.0
                          ) -> PolicyEvalResult:
    """Run one learner on a single simulated chain.

    Objectives are weighted by the behaviour chain's stationary distribution,
    which is the state distribution the updates are taken under.  The run is
    halted and marked DIVERGED once any weight exceeds 1e12 in magnitude.
    """
    x = _features(features)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p_mu, _ = induced_dynamics(mdp, behavior_policy)
    objectives = LinearObjectives(mdp, policy, x, weights=stationary_distribution(p_mu))
    sampler = ChainSampler(mdp, policy, behavior_policy, rng, reward_noise)
    w = np.zeros(x.shape[1]) if w0 is None else np.array(w0, dtype=np.float64)
    result = PolicyEvalResult(status=CONVERGED)

    def log(step):
        result.steps.append(step)
        result.msve.append(objectives.msve(w))
        result.msbe.append(objectives.msbe(w))
        result.mspbe.append(objectives.mspbe(w))
        result.w_norm.append(float(np.linalg.norm(w)))

    log(0)
    for step in range(1, steps + 1):
        w = apply_update(w, x, sampler.sample(), cfg, mdp.gamma)
        if not np.all(np.abs(w) <= DIVERGENCE_BOUND):
            result.status, result.diverged_at = DIVERGED, step
            log(step)
            break
        if step % log_interval == 0 or step == steps:
            log(step)
    result.weights = w
    return result
