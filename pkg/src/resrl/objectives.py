"""Closed-form value-error objectives under linear function approximation.

All quantities are weighted by a state distribution, by default the exact
stationary distribution of the evaluated policy.  Off-policy callers pass the
behaviour distribution through ``weights``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .mdp import FiniteMdp, PolicyTable, induced_dynamics, solve_values, stationary_distribution


class SingularMatrixError(np.linalg.LinAlgError):
    pass


class RankDeficiencyWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FeatureMap:
    features: np.ndarray
    rank: int = field(init=False)
    full_rank: bool = field(init=False)

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[1] < 1:
            raise ValueError(f"feature matrix must be (n_states, d) with d >= 1, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("features must be finite")
        x.setflags(write=False)
        rank = int(np.linalg.matrix_rank(x))
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "rank", rank)
        object.__setattr__(self, "full_rank", rank == x.shape[1])

    @property
    def n_states(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @classmethod
    def tabular(cls, n_states: int) -> "FeatureMap":
        return cls(np.eye(n_states))


@dataclass(frozen=True)
class LinearValueFn:
    weights: np.ndarray
    rank_deficient: bool = False

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


def _features(x) -> np.ndarray:
    return x.features if isinstance(x, FeatureMap) else np.atleast_2d(np.asarray(x, dtype=np.float64).T).T


def _weights(w) -> np.ndarray:
    return w.weights if isinstance(w, LinearValueFn) else np.asarray(w, dtype=np.float64).reshape(-1)


def _weighted_lstsq(a: np.ndarray, b: np.ndarray, d: np.ndarray):
    """Minimum-norm solution of ``min_w ||a w - b||^2_d``."""
    sqrt_d = np.sqrt(d)
    sol, _, rank, _ = np.linalg.lstsq(sqrt_d[:, None] * a, sqrt_d * b, rcond=None)
    return sol, rank


class LinearObjectives:
    """Cached matrices for repeated objective evaluation on one problem.

    ``weights`` overrides the state distribution used by every weighted norm.
    """

    def __init__(self, mdp: FiniteMdp, policy: PolicyTable, features, weights=None):
        x = _features(features)
        if x.shape[0] != mdp.n_states:
            raise ValueError(f"feature matrix has {x.shape[0]} rows, MDP has {mdp.n_states} states")
        self.mdp, self.policy, self.x = mdp, policy, x
        self.p, self.r = induced_dynamics(mdp, policy)
        self.v_true = solve_values(mdp, policy)
        self.d = stationary_distribution(self.p) if weights is None else np.asarray(weights, dtype=np.float64)
        if self.d.shape != (mdp.n_states,):
            raise ValueError("weights must have one entry per state")
        n = mdp.n_states
        self.m = (np.eye(n) - mdp.gamma * self.p) @ x      # Bellman residual is m w - r
        dx = self.d[:, None] * x
        self.a = dx.T @ self.m                              # X^T D (I - gamma P) X
        self.b = dx.T @ self.r                              # X^T D r
        self.c = dx.T @ x                                   # X^T D X
        self.c_pinv = np.linalg.pinv(self.c)
        # features spanning every state make the projection the identity
        self.spans_all = np.linalg.matrix_rank(x) == n

    def _check(self, w) -> np.ndarray:
        w = _weights(w)
        if w.shape != (self.x.shape[1],):
            raise ValueError(f"weights must have length {self.x.shape[1]}, got {w.shape}")
        return w

    def norm2(self, v) -> float:
        v = np.asarray(v, dtype=np.float64)
        return float(np.sum(self.d * v * v))

    def bellman(self, v) -> np.ndarray:
        return self.r + self.mdp.gamma * (self.p @ v)

    def project(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.x.shape[0],):
            raise ValueError(f"vector must have length {self.x.shape[0]}")
        if self.spans_all:
            return v.copy()
        w_bar, _ = _weighted_lstsq(self.x, v, self.d)
        return self.x @ w_bar

    def msve(self, w) -> float:
        return self.norm2(self.x @ self._check(w) - self.v_true)

    def msbe(self, w) -> float:
        return self.norm2(self.m @ self._check(w) - self.r)

    def mspbe(self, w) -> float:
        # v lies in the feature span, so v - P T v = P (v - T v)
        return self.norm2(self.project(self.m @ self._check(w) - self.r))

    def msbe_grad(self, w) -> np.ndarray:
        w = self._check(w)
        return 2.0 * self.m.T @ (self.d * (self.m @ w - self.r))

    def mspbe_quadratic(self, w) -> float:
        """MSPBE through ``(b - A w)^T C^+ (b - A w)``; equals :meth:`mspbe`."""
        e = self.b - self.a @ self._check(w)
        return float(e @ self.c_pinv @ e)

    def mspbe_grad(self, w) -> np.ndarray:
        e = self.b - self.a @ self._check(w)
        return -2.0 * self.a.T @ self.c_pinv @ e

    def td_fixed_point(self) -> LinearValueFn:
        if np.linalg.matrix_rank(self.a) < self.a.shape[0]:
            raise SingularMatrixError("A = X^T D (I - gamma P_pi) X is singular; TD fixed point undefined")
        return LinearValueFn(np.linalg.solve(self.a, self.b))

    def msbe_minimizer(self) -> LinearValueFn:
        w, rank = _weighted_lstsq(self.m, self.r, self.d)
        deficient = rank < self.m.shape[1]
        if deficient:
            warnings.warn("(I - gamma P_pi) X is rank deficient; returning the minimum-norm minimizer",
                          RankDeficiencyWarning, stacklevel=2)
        return LinearValueFn(w, rank_deficient=deficient)


def msve(mdp, policy, features, w, weights=None) -> float:
    """d-weighted squared distance between ``X w`` and the true values."""
    return LinearObjectives(mdp, policy, features, weights).msve(w)


def project(mdp, policy, features, v, weights=None) -> np.ndarray:
    """Weighted least-squares projection of ``v`` onto the span of the features."""
    return LinearObjectives(mdp, policy, features, weights).project(v)


def msbe(mdp, policy, features, w, weights=None) -> float:
    return LinearObjectives(mdp, policy, features, weights).msbe(w)


def mspbe(mdp, policy, features, w, weights=None) -> float:
    return LinearObjectives(mdp, policy, features, weights).mspbe(w)


def msbe_grad(mdp, policy, features, w, weights=None) -> np.ndarray:
    return LinearObjectives(mdp, policy, features, weights).msbe_grad(w)


def mspbe_grad(mdp, policy, features, w, weights=None) -> np.ndarray:
    return LinearObjectives(mdp, policy, features, weights).mspbe_grad(w)


def td_fixed_point(mdp, policy, features, weights=None) -> LinearValueFn:
    """Solve ``A w = b``, the point where linear TD's expected update vanishes."""
    return LinearObjectives(mdp, policy, features, weights).td_fixed_point()


def msbe_minimizer(mdp, policy, features, weights=None) -> LinearValueFn:
    return LinearObjectives(mdp, policy, features, weights).msbe_minimizer()
