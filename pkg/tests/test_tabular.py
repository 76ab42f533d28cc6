import itertools
import math

import numpy as np
import pytest

from acelab import tabular
from acelab.errors import ConvergenceError
from acelab.tabular import (
    FactoredPolicy,
    TabularMdp,
    apply_causal_bellman,
    causal_entropy,
    joint_causal_entropy,
    policy_evaluation_fixed_point,
    policy_improvement,
    policy_iteration,
    random_mdp,
)


def brute_causal_entropy(probs_at_state, weights):
    """-sum over every joint action of p(a) * sum_i w_i log p_i(a_i)."""
    total = 0.0
    for combo in itertools.product(*[range(len(p)) for p in probs_at_state]):
        pa = math.prod(p[k] for p, k in zip(probs_at_state, combo))
        if pa == 0:
            continue
        total -= pa * sum(w * math.log(p[k]) for w, p, k in zip(weights, probs_at_state, combo) if p[k] > 0)
    return total


def brute_joint(policy, s):
    dims = policy.action_dims
    out = np.zeros(math.prod(dims))
    for flat, combo in enumerate(itertools.product(*[range(k) for k in dims])):
        out[flat] = math.prod(policy.probs[i][s, k] for i, k in enumerate(combo))
    return out


def exact_evaluation(mdp, policy, weights, alpha):
    """Solve Q = R + gamma P (Pi Q + alpha H) as a linear system."""
    S, A = mdp.rewards.shape
    pi = np.stack([brute_joint(policy, s) for s in range(S)])
    h = np.array([brute_causal_entropy([p[s] for p in policy.probs], weights) for s in range(S)])
    # map Q (S*A) -> sum_a' pi(a'|s') Q(s', a')
    avg = np.zeros((S, S * A))
    for s in range(S):
        avg[s, s * A:(s + 1) * A] = pi[s]
    P = mdp.transitions.reshape(S * A, S)
    lhs = np.eye(S * A) - mdp.gamma * P @ avg
    rhs = mdp.rewards.reshape(-1) + mdp.gamma * alpha * P @ h
    return np.linalg.solve(lhs, rhs).reshape(S, A)


def binary_policy(ps):
    """Policy over one state from per-dimension P(a_i = 0)."""
    return FactoredPolicy([np.array([[p, 1 - p]]) for p in ps])


class TestCausalEntropy:
    def test_uniform(self):
        pol = binary_policy([0.5, 0.5])
        assert causal_entropy(pol, 0, [1, 1]) == pytest.approx(2 * math.log(2), rel=1e-14)

    def test_zero_weight_dimension_ignored(self):
        pol = binary_policy([0.5, 0.97])
        assert causal_entropy(pol, 0, [2, 0]) == pytest.approx(2 * math.log(2), rel=1e-14)

    def test_weighted_against_joint_sum(self):
        pol = binary_policy([0.9, 0.5])
        h9 = -(0.9 * math.log(0.9) + 0.1 * math.log(0.1))
        want = 1.5 * h9 + 0.5 * math.log(2)
        assert causal_entropy(pol, 0, [1.5, 0.5]) == pytest.approx(want, rel=1e-13)
        assert brute_causal_entropy([p[0] for p in pol.probs], [1.5, 0.5]) == pytest.approx(want, rel=1e-13)

    @pytest.mark.parametrize("seed", range(5))
    def test_literal_form_agrees_for_factored(self, seed):
        rng = np.random.default_rng(seed)
        dims = (2, 3, 2)
        pol = FactoredPolicy.random(rng, 3, dims)
        w = rng.uniform(0, 2, 3)
        joint = pol.joint()
        for s in range(3):
            np.testing.assert_allclose(joint[s], brute_joint(pol, s), rtol=1e-14)
            assert joint_causal_entropy(joint[s], dims, w) == pytest.approx(causal_entropy(pol, s, w), rel=1e-12)

    def test_literal_form_differs_for_correlated_joint(self):
        joint = np.array([0.5, 0.0, 0.0, 0.5])  # perfectly correlated binary pair
        literal = joint_causal_entropy(joint, (2, 2), [1, 1])
        assert literal == pytest.approx(2 * math.log(2))
        assert literal != pytest.approx(math.log(2))  # true joint entropy


class TestBellman:
    def test_geometric_series(self):
        mdp = TabularMdp(np.ones((1, 1, 1)), np.ones((1, 1)), (1,), 0.9)
        pol = FactoredPolicy.uniform(1, (1,))
        q = np.zeros((1, 1))
        for _ in range(2000):
            q = apply_causal_bellman(mdp, pol, [1.0], q, alpha=0.0)
        assert q[0, 0] == pytest.approx(10.0, abs=1e-10)
        fp = policy_evaluation_fixed_point(mdp, pol, [1.0], 0.0, tol=1e-12)
        assert fp[0, 0] == pytest.approx(10.0, abs=1e-9)

    @pytest.mark.parametrize("seed", range(3))
    def test_reduces_to_policy_evaluation(self, seed):
        rng = np.random.default_rng(seed)
        mdp = random_mdp(rng, 4, (2, 3))
        pol = FactoredPolicy.random(rng, 4, (2, 3))
        q = rng.normal(size=(4, 6))
        got = apply_causal_bellman(mdp, pol, [1, 1], q, alpha=0.0)
        want = np.zeros_like(q)
        for s, a in np.ndindex(*q.shape):
            want[s, a] = mdp.rewards[s, a] + mdp.gamma * sum(
                mdp.transitions[s, a, s2] * np.dot(brute_joint(pol, s2), q[s2]) for s2 in range(4))
        np.testing.assert_allclose(got, want, rtol=1e-13, atol=1e-13)

    @pytest.mark.parametrize("seed", range(3))
    def test_uniform_weights_is_standard_soft_operator(self, seed):
        rng = np.random.default_rng(10 + seed)
        mdp = random_mdp(rng, 3, (2, 2))
        pol = FactoredPolicy.random(rng, 3, (2, 2))
        q = rng.normal(size=(3, 4))
        alpha = 0.3
        joint = np.stack([brute_joint(pol, s) for s in range(3)])
        joint_entropy = -np.sum(joint * np.log(joint), axis=1)
        want = mdp.rewards + mdp.gamma * mdp.transitions @ (np.sum(joint * q, axis=1) + alpha * joint_entropy)
        np.testing.assert_allclose(apply_causal_bellman(mdp, pol, [1, 1], q, alpha), want, rtol=1e-12)

    def test_fixed_point_matches_long_iteration(self):
        rng = np.random.default_rng(3)
        mdp = random_mdp(rng, 5, (2, 2))
        pol = FactoredPolicy.random(rng, 5, (2, 2))
        w, alpha = np.array([1.4, 0.6]), 0.2
        # 10000 sweeps of an independently written update
        joint = np.stack([brute_joint(pol, s) for s in range(5)])
        h = np.array([brute_causal_entropy([p[s] for p in pol.probs], w) for s in range(5)])
        q = np.zeros((5, 4))
        for _ in range(10_000):
            q = mdp.rewards + mdp.gamma * np.einsum("sat,t->sa", mdp.transitions, (joint * q).sum(axis=1) + alpha * h)
        got = policy_evaluation_fixed_point(mdp, pol, w, alpha, tol=1e-12)
        np.testing.assert_allclose(got, q, atol=1e-8)
        np.testing.assert_allclose(got, exact_evaluation(mdp, pol, w, alpha), atol=1e-8)

    def test_contraction(self):
        rng = np.random.default_rng(2024)
        for _ in range(200):
            dims = tuple(rng.integers(1, 4, size=rng.integers(1, 4)))
            mdp = random_mdp(rng, int(rng.integers(1, 7)), dims, gamma=float(rng.uniform(0.1, 0.99)))
            pol = FactoredPolicy.random(rng, mdp.n_states, dims)
            w = rng.uniform(0, 3, len(dims))
            alpha = float(rng.uniform(0, 2))
            q1 = rng.normal(scale=10, size=mdp.rewards.shape)
            q2 = rng.normal(scale=10, size=mdp.rewards.shape)
            lhs = np.max(np.abs(apply_causal_bellman(mdp, pol, w, q1, alpha) - apply_causal_bellman(mdp, pol, w, q2, alpha)))
            assert lhs <= mdp.gamma * np.max(np.abs(q1 - q2)) + 1e-12

    def test_unique_fixed_point(self):
        rng = np.random.default_rng(8)
        mdp = random_mdp(rng, 6, (2, 2))
        pol = FactoredPolicy.random(rng, 6, (2, 2))
        tol = 1e-10
        a = policy_evaluation_fixed_point(mdp, pol, [0.5, 1.5], 0.7, tol=tol)
        b = policy_evaluation_fixed_point(mdp, pol, [0.5, 1.5], 0.7, tol=tol, q0=rng.normal(scale=50, size=(6, 4)))
        # stopping at step < tol leaves each result within gamma/(1-gamma) * tol of the fixed point
        assert np.max(np.abs(a - b)) <= 2 * tol * mdp.gamma / (1 - mdp.gamma)

    def test_iteration_count_within_budget(self, monkeypatch):
        rng = np.random.default_rng(1)
        mdp = random_mdp(rng, 3, (2, 2), gamma=0.95)
        pol = FactoredPolicy.uniform(3, (2, 2))
        calls = []
        real = tabular.apply_causal_bellman

        def counting(*args):
            calls.append(1)
            return real(*args)

        monkeypatch.setattr(tabular, "apply_causal_bellman", counting)
        policy_evaluation_fixed_point(mdp, pol, [1, 1], 0.5, tol=1e-9, margin=0)
        bound = (mdp.r_max + 0.5 * 2 * math.log(2)) / (1 - mdp.gamma)
        assert len(calls) <= math.ceil(math.log(1e-9 * (1 - mdp.gamma) / bound) / math.log(mdp.gamma))

    def test_non_contraction_is_reported(self, monkeypatch):
        mdp = TabularMdp(np.ones((1, 1, 1)), np.ones((1, 1)), (1,), 0.9)
        monkeypatch.setattr(tabular, "apply_causal_bellman", lambda m, p, w, q, a: 2.0 * q + 1.0)
        with pytest.raises(ConvergenceError):
            policy_evaluation_fixed_point(mdp, FactoredPolicy.uniform(1, (1,)), [1.0], 0.0)


class TestImprovement:
    def test_greedy_limit_with_ties(self):
        mdp = random_mdp(np.random.default_rng(0), 2, (2, 2))
        q = np.array([[0.0, 3.0, 3.0, 1.0], [5.0, 5.0, 5.0, 5.0]])
        pol = policy_improvement(mdp, q, [1, 1], alpha=0.0)
        # state 0: joint index 1 = (0, 1); state 1: all tied -> index 0 = (0, 0)
        np.testing.assert_array_equal(pol.probs[0], [[1, 0], [1, 0]])
        np.testing.assert_array_equal(pol.probs[1], [[0, 1], [1, 0]])

    def test_constant_q_gives_uniform(self):
        mdp = random_mdp(np.random.default_rng(0), 3, (2, 3))
        pol = policy_improvement(mdp, np.full((3, 6), 2.5), [0.7, 1.3], alpha=0.4)
        np.testing.assert_allclose(pol.probs[0], 0.5, atol=1e-9)
        np.testing.assert_allclose(pol.probs[1], 1 / 3, atol=1e-9)

    @pytest.mark.parametrize("seed", range(3))
    def test_grid_search_oracle(self, seed):
        rng = np.random.default_rng(seed)
        mdp = random_mdp(rng, 2, (2, 2))
        q = rng.normal(size=(2, 4))
        alpha = 0.5
        pol = policy_improvement(mdp, q, [1, 1], alpha)
        grid = np.linspace(0, 1, 1001)
        p, r = np.meshgrid(grid, grid, indexing="ij")

        def h(x):
            with np.errstate(divide="ignore", invalid="ignore"):
                return -np.nan_to_num(x * np.log(x)) - np.nan_to_num((1 - x) * np.log(1 - x))

        for s in range(2):
            qq = q[s]
            obj = (p * r * qq[0] + p * (1 - r) * qq[1] + (1 - p) * r * qq[2] + (1 - p) * (1 - r) * qq[3]
                   + alpha * (h(p) + h(r)))
            i, j = np.unravel_index(np.argmax(obj), obj.shape)
            assert pol.probs[0][s, 0] == pytest.approx(grid[i], abs=2e-3)
            assert pol.probs[1][s, 0] == pytest.approx(grid[j], abs=2e-3)
            got = tabular._objective(qq.reshape(2, 2), np.array([alpha, alpha]), [pol.probs[0][s], pol.probs[1][s]])
            assert got >= obj.max() - 1e-9

    def test_never_worse_than_init(self):
        rng = np.random.default_rng(4)
        mdp = random_mdp(rng, 4, (3, 2))
        for _ in range(20):
            q = rng.normal(size=(4, 6))
            init = FactoredPolicy.random(rng, 4, (3, 2))
            w = rng.uniform(0, 2, 2)
            new = policy_improvement(mdp, q, w, 0.3, init=init)
            temps = 0.3 * w
            for s in range(4):
                before = tabular._objective(q[s].reshape(3, 2), temps, [p[s] for p in init.probs])
                after = tabular._objective(q[s].reshape(3, 2), temps, [p[s] for p in new.probs])
                assert after >= before - 1e-12


class TestPolicyIteration:
    def test_deterministic_chain_enumeration(self):
        # two states, 2x2 actions; joint action 3 moves state 0 -> 1, state 1 pays off
        P = np.zeros((2, 4, 2))
        P[0, :, 0] = 1.0
        P[0, 3] = [0.0, 1.0]
        P[1, :, 1] = 1.0
        P[1, 0] = [1.0, 0.0]
        R = np.array([[0.1, 0.0, 0.2, -0.1], [1.0, 0.5, 0.3, 0.4]])
        mdp = TabularMdp(P, R, (2, 2), 0.9)
        pol, q = policy_iteration(mdp, [1, 1], alpha=0.0)
        best, best_v = None, None
        for choice in itertools.product(range(4), repeat=2):
            det = FactoredPolicy([np.eye(2)[[np.unravel_index(c, (2, 2))[i] for c in choice]] for i in range(2)])
            v = exact_evaluation(mdp, det, [1, 1], 0.0)
            if best_v is None or np.all(v >= best_v - 1e-12) and np.any(v > best_v + 1e-12):
                best, best_v = choice, v
        np.testing.assert_allclose(q, best_v, atol=1e-9)
        assert np.argmax(pol.joint()[0]) == best[0] and np.argmax(pol.joint()[1]) == best[1]

    def test_large_alpha_near_uniform(self):
        mdp = random_mdp(np.random.default_rng(6), 4, (2, 2))
        pol, _ = policy_iteration(mdp, [1, 1], alpha=100.0)
        for p in pol.probs:
            np.testing.assert_allclose(p, 0.5, atol=0.01)

    @pytest.mark.parametrize("seed", range(3))
    def test_monotone_and_dominant(self, seed):
        rng = np.random.default_rng(seed)
        mdp = random_mdp(rng, 5, (2, 2))
        w = np.array([1.3, 0.7])
        trace = []
        pol, q = policy_iteration(mdp, w, alpha=0.2, history=trace)
        assert len(trace) >= 2
        for a, b in zip(trace, trace[1:]):
            assert np.all(b >= a - 1e-9)
        for qk in trace:
            assert np.all(q >= qk - 1e-9)
        for _ in range(100):
            other = FactoredPolicy.random(rng, 5, (2, 2))
            assert np.all(q >= exact_evaluation(mdp, other, w, 0.2) - 1e-6)


def test_json_round_trip():
    mdp = random_mdp(np.random.default_rng(0), 3, (2, 2), gamma=0.8, r_max=2.0)
    back = TabularMdp.from_json(mdp.to_json())
    np.testing.assert_array_equal(back.transitions, mdp.transitions)
    np.testing.assert_array_equal(back.rewards, mdp.rewards)
    assert back.action_dims == (2, 2) and back.gamma == 0.8 and back.r_max == 2.0


def test_invalid_mdp_rejected():
    with pytest.raises(ValueError):
        TabularMdp(np.full((1, 1, 1), 0.5), np.zeros((1, 1)), (1,), 0.9)
    with pytest.raises(ValueError):
        TabularMdp(np.ones((1, 1, 1)), np.zeros((1, 1)), (1,), 1.0)
