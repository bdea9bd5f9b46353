import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from resrl.mdp import (
    FiniteMdp, NonErgodicError, PolicyTable, bellman_apply, dumps_mdp, induced_dynamics,
    load_mdp, loads_mdp, save_mdp, solve_exact, stationary_distribution,
)

from conftest import random_mdp, two_cycle


class TestConstruction:
    def test_rejects_non_stochastic_rows(self):
        p = np.full((2, 1, 2), 0.6)
        with pytest.raises(ValueError):
            FiniteMdp(p, np.zeros((2, 1)), 0.5)

    def test_rejects_gamma_one(self):
        mdp, _ = two_cycle()
        with pytest.raises(ValueError):
            FiniteMdp(mdp.transition, mdp.reward, 1.0)

    def test_arrays_are_read_only(self):
        mdp, _ = two_cycle()
        with pytest.raises(ValueError):
            mdp.transition[0, 0, 0] = 0.5

    def test_policy_rows_must_sum_to_one(self):
        with pytest.raises(ValueError):
            PolicyTable(np.array([[0.5, 0.6]]))


class TestInducedDynamics:
    def test_single_action_cycle(self):
        mdp, pi = two_cycle()
        p, r = induced_dynamics(mdp, pi)
        np.testing.assert_array_equal(p, [[0, 1], [1, 0]])
        np.testing.assert_array_equal(r, [1, 1])

    def test_uniform_mix_of_stay_and_move(self):
        p = np.zeros((2, 2, 2))
        p[0, 0, 0] = p[1, 0, 1] = 1.0      # action 0 self-loops
        p[0, 1, 1] = p[1, 1, 0] = 1.0      # action 1 moves on
        mdp = FiniteMdp(p, np.zeros((2, 2)), 0.9)
        p_pi, _ = induced_dynamics(mdp, PolicyTable.uniform(2, 2))
        np.testing.assert_array_equal(p_pi, [[0.5, 0.5], [0.5, 0.5]])

    def test_matches_elementwise_sum(self, rng):
        mdp, pi = random_mdp(rng, 5, 3)
        p_pi, r_pi = induced_dynamics(mdp, pi)
        for s in range(5):
            assert r_pi[s] == pytest.approx(sum(pi.probs[s, a] * mdp.reward[s, a] for a in range(3)), abs=1e-14)
            for t in range(5):
                expect = sum(pi.probs[s, a] * mdp.transition[s, a, t] for a in range(3))
                assert p_pi[s, t] == pytest.approx(expect, abs=1e-14)
        np.testing.assert_allclose(p_pi.sum(axis=1), 1.0, atol=1e-12)

    def test_dimension_mismatch(self, rng):
        mdp, _ = random_mdp(rng, 4, 2)
        with pytest.raises(ValueError):
            induced_dynamics(mdp, PolicyTable.uniform(3, 2))


class TestStationaryDistribution:
    def test_two_cycle(self):
        np.testing.assert_allclose(stationary_distribution([[0, 1], [1, 0]]), [0.5, 0.5], atol=1e-12)

    def test_lazy_doubly_stochastic(self):
        np.testing.assert_allclose(stationary_distribution([[0.9, 0.1], [0.1, 0.9]]), [0.5, 0.5], atol=1e-12)

    def test_matches_dense_left_eigenvector(self, rng):
        p = rng.dirichlet(np.ones(6), size=6)
        d = stationary_distribution(p)
        vals, vecs = np.linalg.eig(p.T)
        oracle = np.real(vecs[:, np.argmin(np.abs(vals - 1))])
        oracle /= oracle.sum()
        np.testing.assert_allclose(d, oracle, atol=1e-10)
        np.testing.assert_allclose(d @ p, d, atol=1e-10)
        assert d.min() >= 0 and d.sum() == pytest.approx(1.0, abs=1e-12)

    def test_reducible_chain_is_rejected(self):
        with pytest.raises(NonErgodicError):
            stationary_distribution(np.eye(3))

    def test_falls_back_to_eigen_solve(self, rng):
        p = rng.dirichlet(np.ones(4), size=4)
        d = stationary_distribution(p, max_iter=1)
        np.testing.assert_allclose(d @ p, d, atol=1e-10)

    def test_depends_only_on_transition(self, rng):
        mdp, pi = random_mdp(rng, 5, 2)
        other = FiniteMdp(mdp.transition, rng.normal(size=(5, 2)) * 10, mdp.gamma)
        np.testing.assert_array_equal(solve_exact(mdp, pi).d, solve_exact(other, pi).d)


class TestBellman:
    def test_zero_vector_gives_rewards(self, rng):
        mdp, pi = random_mdp(rng, 4, 2)
        _, r_pi = induced_dynamics(mdp, pi)
        np.testing.assert_array_equal(bellman_apply(mdp, pi, np.zeros(4)), r_pi)

    def test_hand_evaluation(self):
        mdp, pi = two_cycle(gamma=0.5)
        np.testing.assert_allclose(bellman_apply(mdp, pi, [1.0, 2.0]), [2.0, 1.5])

    def test_fixed_point(self, rng):
        mdp, pi = random_mdp(rng, 5, 3)
        v = solve_exact(mdp, pi).v
        assert np.max(np.abs(bellman_apply(mdp, pi, v) - v)) < 1e-10

    def test_dimension_mismatch(self):
        mdp, pi = two_cycle()
        with pytest.raises(ValueError):
            bellman_apply(mdp, pi, np.zeros(3))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_contraction(self, seed):
        r = np.random.default_rng(seed)
        mdp, pi = random_mdp(r, 6, 2, gamma=float(r.uniform(0, 0.99)))
        v, u = r.normal(size=6) * 10, r.normal(size=6) * 10
        lhs = np.max(np.abs(bellman_apply(mdp, pi, v) - bellman_apply(mdp, pi, u)))
        assert lhs <= mdp.gamma * np.max(np.abs(v - u)) + 1e-12


class TestSolveExact:
    def test_two_cycle_geometric_series(self):
        mdp, pi = two_cycle(gamma=0.5)
        sol = solve_exact(mdp, pi)
        np.testing.assert_allclose(sol.v, [2.0, 2.0], atol=1e-14)
        np.testing.assert_allclose(sol.d, [0.5, 0.5], atol=1e-12)

    def test_zero_rewards(self, rng):
        mdp, pi = random_mdp(rng, 4, 2)
        sol = solve_exact(FiniteMdp(mdp.transition, np.zeros((4, 2)), 0.9), pi)
        np.testing.assert_array_equal(sol.v, 0.0)
        np.testing.assert_array_equal(sol.q, 0.0)

    def test_matches_value_iteration(self, rng):
        mdp, pi = random_mdp(rng, 5, 3)
        p_pi, r_pi = induced_dynamics(mdp, pi)
        v = np.zeros(5)
        while True:
            v_next = r_pi + mdp.gamma * p_pi @ v
            if np.max(np.abs(v_next - v)) < 1e-12:
                break
            v = v_next
        sol = solve_exact(mdp, pi)
        np.testing.assert_allclose(sol.v, v_next, atol=1e-10)
        q = mdp.reward + mdp.gamma * np.einsum("sat,t->sa", mdp.transition, sol.v)
        np.testing.assert_allclose(sol.q, q, atol=1e-12)
        # v is the policy-average of q
        np.testing.assert_allclose((pi.probs * sol.q).sum(axis=1), sol.v, atol=1e-10)


class TestTextFormat:
    def test_round_trip_is_lossless(self, rng, tmp_path):
        mdp, _ = random_mdp(rng, 4, 3, gamma=0.987654321)
        path = tmp_path / "mdp.txt"
        save_mdp(mdp, path)
        back = load_mdp(path)
        np.testing.assert_array_equal(back.transition, mdp.transition)
        np.testing.assert_array_equal(back.reward, mdp.reward)
        assert back.gamma == mdp.gamma

    def test_header_and_rows(self):
        mdp, _ = two_cycle()
        text = dumps_mdp(mdp)
        assert text.splitlines()[0] == "states=2 actions=1 gamma=0.5"
        assert text.splitlines()[1] == "0 0 1 0 1"

    def test_comments_ignored_and_missing_rows_rejected(self):
        text = "# two states\nstates=2 actions=1 gamma=0.5\n0 0 1 0 1\n"
        with pytest.raises(ValueError):
            loads_mdp(text)
        mdp = loads_mdp(text + "1 0 1 1 0\n")
        assert mdp.n_states == 2
