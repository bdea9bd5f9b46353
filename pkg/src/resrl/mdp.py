"""Finite MDPs: induced dynamics, stationary distributions and exact values."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

STOCHASTIC_ATOL = 1e-12
POWER_TOL = 1e-12
POWER_MAX_ITER = 10**6
EIGEN_FALLBACK_MAX_STATES = 64


class NonErgodicError(RuntimeError):
    """The induced chain has no unique stationary distribution."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FiniteMdp:
    """Tabular MDP with ``transition[s, a, s']`` and mean rewards ``reward[s, a]``."""

    transition: np.ndarray
    reward: np.ndarray
    gamma: float

    def __post_init__(self):
        p = _frozen(self.transition)
        r = _frozen(self.reward)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {p.shape}")
        if r.shape != p.shape[:2]:
            raise ValueError(f"reward shape {r.shape} does not match (S, A) = {p.shape[:2]}")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("transition probabilities must lie in [0, 1]")
        if not np.allclose(p.sum(axis=2), 1.0, rtol=0, atol=STOCHASTIC_ATOL):
            raise ValueError("transition rows must sum to 1")
        if not np.all(np.isfinite(r)):
            raise ValueError("rewards must be finite")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


@dataclass(frozen=True)
class PolicyTable:
    probs: np.ndarray

    def __post_init__(self):
        pi = _frozen(self.probs)
        if pi.ndim != 2:
            raise ValueError("policy must be a (S, A) matrix")
        if np.any(pi < 0) or np.any(pi > 1):
            raise ValueError("policy probabilities must lie in [0, 1]")
        if not np.allclose(pi.sum(axis=1), 1.0, rtol=0, atol=STOCHASTIC_ATOL):
            raise ValueError("policy rows must sum to 1")
        object.__setattr__(self, "probs", pi)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "PolicyTable":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "PolicyTable":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((len(actions), n_actions))
        probs[np.arange(len(actions)), actions] = 1.0
        return cls(probs)


@dataclass(frozen=True)
class ExactSolution:
    v: np.ndarray
    q: np.ndarray
    d: np.ndarray


def _check_policy(mdp: FiniteMdp, policy: PolicyTable) -> None:
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(
            f"policy shape {policy.probs.shape} does not match MDP "
            f"({mdp.n_states}, {mdp.n_actions})"
        )


def induced_dynamics(mdp: FiniteMdp, policy: PolicyTable) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(P_pi, r_pi)`` for the chain obtained by following ``policy``."""
    _check_policy(mdp, policy)
    p_pi = np.einsum("sa,sat->st", policy.probs, mdp.transition)
    r_pi = np.einsum("sa,sa->s", policy.probs, mdp.reward)
    return p_pi, r_pi


def _eigen_stationary(p: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eig(p.T)
    ones = np.flatnonzero(np.abs(vals - 1.0) < 1e-9)
    if len(ones) != 1:
        raise NonErgodicError(
            f"transition matrix has {len(ones)} unit eigenvalues; stationary distribution is not unique"
        )
    d = np.real(vecs[:, ones[0]])
    d = d / d.sum()
    if np.any(d < -1e-10):
        raise NonErgodicError("left unit eigenvector is not a probability vector")
    return np.clip(d, 0.0, None) / np.clip(d, 0.0, None).sum()


def stationary_distribution(transition_matrix, tol: float = POWER_TOL,
                            max_iter: int = POWER_MAX_ITER) -> np.ndarray:
    """Stationary distribution of a row-stochastic matrix.

    Runs power iteration on the lazy chain ``(I + P) / 2``, which has the same
    stationary distribution but is aperiodic.  When iteration stalls, small
    chains fall back to a dense left-eigenvector solve.  For small chains the
    unit eigenvalue is also required to be simple, so reducible chains are
    rejected instead of silently returning one of many fixed points.
    """
    p = np.asarray(transition_matrix, dtype=np.float64)
    n = p.shape[0]
    if p.ndim != 2 or p.shape[1] != n:
        raise ValueError(f"transition matrix must be square, got {p.shape}")
    if not np.allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-10):
        raise ValueError("transition matrix is not row-stochastic")
    lazy = 0.5 * (np.eye(n) + p)
    d = np.full(n, 1.0 / n)
    converged = False
    for _ in range(max_iter):
        d_next = d @ lazy
        d_next /= d_next.sum()
        if np.abs(d_next - d).sum() < tol:
            d = d_next
            converged = True
            break
        d = d_next
    if n <= EIGEN_FALLBACK_MAX_STATES:
        if not converged:
            return _eigen_stationary(p)
        # reject reducible chains with several closed classes
        vals = np.linalg.eigvals(p)
        if np.count_nonzero(np.abs(vals - 1.0) < 1e-9) > 1:
            raise NonErgodicError("chain has more than one closed class")
    elif not converged:
        raise NonErgodicError(f"power iteration did not converge in {max_iter} iterations")
    d = np.clip(d, 0.0, None)
    return d / d.sum()


def bellman_apply(mdp: FiniteMdp, policy: PolicyTable, v) -> np.ndarray:
    """The policy Bellman operator ``r_pi + gamma * P_pi v``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (mdp.n_states,):
        raise ValueError(f"value vector must have shape ({mdp.n_states},), got {v.shape}")
    p_pi, r_pi = induced_dynamics(mdp, policy)
    return r_pi + mdp.gamma * (p_pi @ v)


def solve_values(mdp: FiniteMdp, policy: PolicyTable) -> np.ndarray:
    p_pi, r_pi = induced_dynamics(mdp, policy)
    a = np.eye(mdp.n_states) - mdp.gamma * p_pi
    try:
        return np.linalg.solve(a, r_pi)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("I - gamma * P_pi is singular") from exc


def solve_exact(mdp: FiniteMdp, policy: PolicyTable) -> ExactSolution:
    """State values, action values and the stationary distribution of ``policy``."""
    p_pi, _ = induced_dynamics(mdp, policy)
    v = solve_values(mdp, policy)
    q = mdp.reward + mdp.gamma * np.einsum("sat,t->sa", mdp.transition, v)
    d = stationary_distribution(p_pi)
    return ExactSolution(v=v, q=q, d=d)


# ---------------------------------------------------------------------------
# plain-text format
#
#   states=N actions=M gamma=G
#   s a reward p(0|s,a) p(1|s,a) ... p(N-1|s,a)     one line per (s, a)
#
# Lines starting with '#' and blank lines are ignored.  Numbers are written
# with 17 significant digits so a write/read cycle is lossless.

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dumps_mdp(mdp: FiniteMdp) -> str:
    lines = [f"states={mdp.n_states} actions={mdp.n_actions} gamma={_fmt(mdp.gamma)}"]
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            row = " ".join(_fmt(x) for x in mdp.transition[s, a])
            lines.append(f"{s} {a} {_fmt(mdp.reward[s, a])} {row}")
    return "\n".join(lines) + "\n"


def loads_mdp(text: str) -> FiniteMdp:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise ValueError("empty MDP file")
    header = dict(tok.split("=", 1) for tok in lines[0].split())
    try:
        n, m, gamma = int(header["states"]), int(header["actions"]), float(header["gamma"])
    except KeyError as exc:
        raise ValueError(f"MDP header missing field {exc}") from None
    p = np.full((n, m, n), np.nan)
    r = np.full((n, m), np.nan)
    for ln in lines[1:]:
        tok = ln.split()
        if len(tok) != n + 3:
            raise ValueError(f"expected {n + 3} fields per line, got {len(tok)}: {ln!r}")
        s, a = int(tok[0]), int(tok[1])
        r[s, a] = float(tok[2])
        p[s, a] = [float(x) for x in tok[3:]]
    if np.isnan(r).any():
        raise ValueError("MDP file does not define every (state, action) pair")
    return FiniteMdp(p, r, gamma)


def save_mdp(mdp: FiniteMdp, path) -> None:
    Path(path).write_text(dumps_mdp(mdp))


def load_mdp(path) -> FiniteMdp:
    return loads_mdp(Path(path).read_text())
