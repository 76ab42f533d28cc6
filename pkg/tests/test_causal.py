import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from acelab.causal import (
    CausalWeights,
    ObservationBatch,
    discover,
    estimate_effects,
    estimate_ordering,
    extract_action_reward_weights,
    normalize_weights,
)
from acelab.errors import DegenerateVariableError, InsufficientDataError, ShapeError

N = 10_000


def uniform(rng, n=N, scale=1.0):
    return rng.uniform(-scale, scale, n)


def action_reward_sem(seed):
    """s -> a1, s -> r, a1 -> r with uniform noise; a2 independent with no edge."""
    rng = np.random.default_rng(seed)
    s = uniform(rng)
    a1 = 0.5 * s + uniform(rng)
    a2 = uniform(rng)
    r = 1.5 * a1 + 0.0 * a2 + 0.5 * s + uniform(rng)
    return ObservationBatch.from_arrays(s[:, None], np.c_[a1, a2], r)


class TestOrdering:
    def test_two_variable(self):
        rng = np.random.default_rng(0)
        x = uniform(rng)
        y = 0.8 * x + uniform(rng)
        assert estimate_ordering(np.c_[y, x]) == [1, 0]
        assert estimate_ordering(np.c_[x, y]) == [0, 1]

    def test_single_variable(self):
        x = np.random.default_rng(0).uniform(size=200)
        assert estimate_ordering(x[:, None]) == [0]

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_chain_without_prior(self, seed):
        rng = np.random.default_rng(seed)
        s = uniform(rng)
        a = 0.9 * s + uniform(rng)
        r = -1.2 * a + uniform(rng)
        # shuffle column positions so index order gives nothing away
        cols = np.c_[r, s, a]
        assert estimate_ordering(cols) == [1, 2, 0]

    def test_reward_pinned_last(self):
        batch = action_reward_sem(3)
        order = estimate_ordering(batch)
        assert order[-1] == batch.reward_index
        assert sorted(order) == list(range(4))

    def test_constant_column(self):
        rng = np.random.default_rng(0)
        x = np.c_[uniform(rng, 500), np.full(500, 5.0), uniform(rng, 500)]
        with pytest.raises(DegenerateVariableError) as err:
            estimate_ordering(x)
        assert err.value.column == 1

    def test_deterministic_copy_is_handled(self):
        rng = np.random.default_rng(0)
        x = uniform(rng, 2000)
        order = estimate_ordering(np.c_[x, 2 * x, uniform(rng, 2000)])
        assert sorted(order) == [0, 1, 2]


class TestEffects:
    def test_deterministic_linear(self):
        x = np.random.default_rng(0).uniform(size=500)
        adj = estimate_effects(np.c_[x, 2 * x], [0, 1])
        assert adj[1, 0] == pytest.approx(2.0, abs=1e-6)
        assert adj[0, 1] == 0.0

    def test_independent(self):
        rng = np.random.default_rng(1)
        adj = estimate_effects(np.c_[uniform(rng), uniform(rng)], [0, 1])
        assert abs(adj[1, 0]) < 0.05

    @pytest.mark.parametrize("seed", range(3))
    def test_action_reward_sem(self, seed):
        batch = action_reward_sem(seed)
        adj = estimate_effects(batch, estimate_ordering(batch))
        r = batch.reward_index
        np.testing.assert_allclose(adj[r, [1, 2, 0]], [1.5, 0.0, 0.5], atol=0.1)

    def test_lower_triangular_under_ordering(self):
        batch = action_reward_sem(4)
        order = estimate_ordering(batch)
        adj = estimate_effects(batch, order)
        permuted = adj[np.ix_(order, order)]
        assert np.all(np.triu(permuted) == 0.0)

    def test_collinear_ridge_fallback(self):
        rng = np.random.default_rng(0)
        x = uniform(rng, 1000)
        data = np.c_[x, 2 * x, 3 * x]
        with pytest.warns(RuntimeWarning):
            adj = estimate_effects(data, [0, 1, 2])
        # combined effect through the collinear pair is still 3
        assert adj[2, 0] + 2 * adj[2, 1] == pytest.approx(3.0, abs=1e-4)

    def test_bad_ordering(self):
        with pytest.raises(ShapeError):
            estimate_effects(np.zeros((10, 3)), [0, 1])


class TestExtraction:
    def test_field_extraction(self):
        adj = np.zeros((4, 4))
        adj[3, 1] = 1.5
        adj[3, 0] = 0.7  # state -> reward, not returned
        w = extract_action_reward_weights(adj, state_dim=1, action_dim=2)
        np.testing.assert_array_equal(w.raw, [1.5, 0.0])
        np.testing.assert_array_equal(w.normalized, [2.0, 0.0])
        assert not w.flagged

    def test_no_edge_flagged(self):
        w = extract_action_reward_weights(np.zeros((4, 4)), 1, 2)
        np.testing.assert_array_equal(w.raw, [0.0, 0.0])
        np.testing.assert_array_equal(w.normalized, [1.0, 1.0])
        assert w.flagged

    def test_constant_reward_gives_flagged_uniform(self):
        rng = np.random.default_rng(0)
        batch = ObservationBatch.from_arrays(rng.normal(size=(300, 2)), rng.uniform(size=(300, 3)), np.zeros(300))
        w = discover(batch)
        assert w.flagged and w.is_uniform

    @pytest.mark.parametrize("seed", range(3))
    def test_chain_sem_raw(self, seed):
        batch = action_reward_sem(seed)
        adj = estimate_effects(batch, estimate_ordering(batch))
        w = extract_action_reward_weights(adj, 1, 2)
        np.testing.assert_allclose(w.raw, [1.5, 0.0], atol=0.1)

    def test_discover_drops_constant_state(self):
        rng = np.random.default_rng(5)
        s = np.c_[uniform(rng, 2000), np.ones(2000)]
        a = np.c_[uniform(rng, 2000), uniform(rng, 2000)]
        r = 2.0 * a[:, 1] + 0.3 * uniform(rng, 2000)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            w = discover(ObservationBatch.from_arrays(s, a, r), timestamp=7)
        assert w.timestamp == 7
        assert w.normalized[1] > 1.9 and w.normalized[0] < 0.1


class TestNormalize:
    def test_symmetric(self):
        np.testing.assert_array_equal(normalize_weights([2, 2]), [1, 1])

    def test_single_support(self):
        np.testing.assert_array_equal(normalize_weights([3, 0, 0]), [3, 0, 0])

    def test_uniform_fallback(self):
        np.testing.assert_array_equal(normalize_weights([0, 0]), [1, 1])

    def test_negative_uses_magnitude(self):
        np.testing.assert_allclose(normalize_weights([-1.0, 3.0]), [0.5, 1.5])
        np.testing.assert_allclose(normalize_weights([-1.0, 3.0], "positive"), [0.0, 2.0])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8), st.floats(1e-3, 1e3))
    def test_sum_sign_and_scale(self, raw, c):
        w = normalize_weights(raw)
        assert np.all(w >= 0)
        assert w.sum() == pytest.approx(len(raw), abs=1e-9)
        if np.sum(np.abs(raw)) * min(c, 1.0) >= 1e-8:
            np.testing.assert_allclose(normalize_weights(np.array(raw) * c), w, rtol=1e-9, atol=1e-12)


class TestBatch:
    def test_csv_round_trip(self, tmp_path):
        batch = action_reward_sem(0)
        path = tmp_path / "batch.csv"
        batch.to_csv(path)
        assert path.read_text().splitlines()[0] == "s0,a0,a1,r"
        back = ObservationBatch.from_csv(path)
        assert (back.state_dim, back.action_dim) == (1, 2)
        np.testing.assert_array_equal(back.data, batch.data)

    def test_too_small(self):
        with pytest.raises(InsufficientDataError):
            ObservationBatch(1, 1, np.zeros((50, 3)))

    def test_wrong_width(self):
        with pytest.raises(ShapeError):
            ObservationBatch(1, 1, np.zeros((200, 4)))

    def test_uniform_weights(self):
        w = CausalWeights.uniform(3)
        assert w.is_uniform and w.normalized.sum() == 3
