import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import spearmanr

from bss import scheduler as sched
from bss.errors import InputError
from bss.numkit import make_rng
from bss.scheduler import (
    ALL_PACINGS,
    HeuristicState,
    LearningState,
    Pacing,
    ema_update,
    heuristic_epoch_plan,
    learning_epoch_plan,
    pacing_lambda,
    sampling_probabilities,
)


class TestPacingParse:
    @pytest.mark.parametrize("text, label", [
        ("root", "root"), ("root-3", "root-3"), ("ROOT_5", "root-5"), ("linear", "linear"),
        ("geometric", "geometric"), ("baby-step", "baby-step"), ("baby-step-4", "baby-step-4"),
    ])
    def test_labels_round_trip(self, text, label):
        assert Pacing.parse(text).label == label
        assert Pacing.parse(label) == Pacing.parse(text)

    @pytest.mark.parametrize("text", ["root-2", "cubic", "baby-step-0", "baby-step-x"])
    def test_rejects(self, text):
        with pytest.raises(InputError):
            Pacing.parse(text)


class TestPacingLambda:
    def test_root_endpoints(self):
        assert pacing_lambda("root", 0, 0.1, 40) == pytest.approx(0.1, abs=1e-15)
        assert pacing_lambda("root", 40, 0.1, 40) == 1.0

    def test_root_midway(self):
        # sqrt(0.99 * 10 / 40 + 0.01) = sqrt(0.2575)
        assert pacing_lambda("root", 10, 0.1, 40) == pytest.approx(math.sqrt(0.2575), abs=1e-15)
        assert pacing_lambda("root", 10, 0.1, 40) == pytest.approx(0.50745, abs=1e-5)

    def test_closed_forms(self):
        assert pacing_lambda("linear", 20, 0.1, 40) == pytest.approx(0.55)
        assert pacing_lambda("geometric", 20, 0.1, 40) == pytest.approx(math.sqrt(0.1))
        assert pacing_lambda("root-3", 20, 0.1, 40) == pytest.approx((0.999 * 0.5 + 0.001) ** (1 / 3))
        assert pacing_lambda("baby-step", 0, 0.1, 40) == pytest.approx(0.2)
        assert pacing_lambda("baby-step", 7.9, 0.1, 40) == pytest.approx(0.2)
        assert pacing_lambda("baby-step", 8, 0.1, 40) == pytest.approx(0.4)
        assert pacing_lambda("baby-step", 39, 0.1, 40) == pytest.approx(1.0)

    @pytest.mark.parametrize("pacing", ALL_PACINGS, ids=lambda p: p.label)
    @given(lambda0=st.floats(0.01, 1.0), t_grow=st.integers(1, 80))
    def test_shape(self, pacing, lambda0, t_grow):
        vals = [pacing_lambda(pacing, t, lambda0, t_grow) for t in range(2 * t_grow + 1)]
        assert all(0 < v <= 1 for v in vals)
        assert all(b >= a for a, b in zip(vals, vals[1:]))
        assert vals[t_grow] == 1.0
        assert all(v == 1.0 for v in vals[t_grow:])
        if pacing.name != "baby-step":
            assert abs(vals[0] - lambda0) < 1e-12

    @given(lambda0=st.floats(0.01, 0.99), t_grow=st.integers(2, 80), data=st.data())
    def test_family_ordering(self, lambda0, t_grow, data):
        t = data.draw(st.floats(0.01, t_grow - 0.01))
        g = pacing_lambda("geometric", t, lambda0, t_grow)
        lin = pacing_lambda("linear", t, lambda0, t_grow)
        r = pacing_lambda("root", t, lambda0, t_grow)
        assert g <= lin + 1e-12 <= r + 2e-12

    @pytest.mark.parametrize("kwargs", [
        dict(lambda0=0.0, t_grow=40), dict(lambda0=1.2, t_grow=40), dict(lambda0=0.1, t_grow=0),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(InputError):
            pacing_lambda("root", 1, **kwargs)

    def test_full_data_epoch(self):
        assert sched.full_data_epoch("root", 0.1, 40) == 40
        assert sched.full_data_epoch("baby-step", 0.1, 40) == 32


class TestHeuristicPlan:
    def ranked(self, n=100, seed=0):
        return np.random.default_rng(seed).permutation(n)

    def test_initial_prefix(self):
        r = self.ranked()
        plan = heuristic_epoch_plan(HeuristicState(r, 0.1, 40), 0, make_rng(0))
        assert len(plan) == 10
        assert set(plan.indices.tolist()) == set(r[:10].tolist())

    def test_anti_uses_bottom(self):
        r = self.ranked()
        plan = heuristic_epoch_plan(HeuristicState(r, 0.1, 40), 0, make_rng(0), anti=True)
        assert set(plan.indices.tolist()) == set(r[-10:].tolist())
        assert plan.scheduler == "anti"

    def test_full_data_is_shuffle(self):
        r = self.ranked()
        plan = heuristic_epoch_plan(HeuristicState(r, 0.1, 40), 45, make_rng(1))
        assert sorted(plan.indices.tolist()) == list(range(100))
        assert plan.indices.tolist() != r.tolist()

    @given(st.integers(0, 90), st.integers(1, 200), st.integers(0, 1000))
    def test_only_prefix_members(self, t, n, seed):
        r = np.random.default_rng(seed).permutation(n)
        state = HeuristicState(r, 0.1, 40)
        plan = heuristic_epoch_plan(state, t, make_rng(seed))
        pos = np.empty(n, dtype=int)
        pos[r] = np.arange(n)
        k = math.ceil(pacing_lambda("root", t, 0.1, 40) * n - 1e-9)
        assert len(set(plan.indices.tolist())) == len(plan) == max(1, k)
        assert np.all(pos[plan.indices] < max(1, k))

    def test_rejects_non_permutation(self):
        with pytest.raises(InputError):
            HeuristicState(np.array([0, 0, 1]))

    def test_prefix_size_float_guard(self):
        assert sched.prefix_size(0.1, 30) == 3
        assert sched.prefix_size(0.101, 30) == 4


class TestEMA:
    def test_first_update_copies(self):
        s = ema_update(LearningState(5, 0.6), [0.3, -0.2], 0)
        np.testing.assert_array_equal(s.s_upd, [0.3, -0.2])
        assert s.k == 1

    def test_blend(self):
        s = ema_update(LearningState(5, 0.6), [0.5], 0)
        s = ema_update(s, [1.0], 5)
        assert s.s_upd[0] == pytest.approx(0.8)
        assert s.k == 2

    def test_beta_one_replaces(self):
        s = ema_update(LearningState(5, 1.0), [0.5], 0)
        np.testing.assert_array_equal(ema_update(s, [0.1], 5).s_upd, [0.1])

    def test_skips_off_interval(self):
        s = ema_update(LearningState(5, 0.6), [0.5], 0)
        assert ema_update(s, [1.0], 3) is s

    def test_length_mismatch(self):
        s = ema_update(LearningState(5, 0.6), [0.5, 0.1], 0)
        with pytest.raises(InputError):
            ema_update(s, [1.0], 5)

    @given(st.floats(0, 1), st.floats(-1, 1), st.floats(-1, 1))
    def test_contraction(self, beta, prev, cur):
        s = ema_update(LearningState(1, beta), [prev], 0)
        s2 = ema_update(s, [cur], 1)
        assert abs(s2.s_upd[0] - cur) == pytest.approx((1 - beta) * abs(prev - cur), abs=1e-12)


class TestProbabilities:
    def test_uniform(self):
        s = ema_update(LearningState(), np.zeros(4), 0)
        np.testing.assert_allclose(sampling_probabilities(s), 0.25)

    def test_log2(self):
        s = ema_update(LearningState(), [math.log(2), 0], 0)
        np.testing.assert_allclose(sampling_probabilities(s), [2 / 3, 1 / 3], atol=1e-15)

    def test_shift_invariant(self):
        base = np.array([0.3, -0.7, 0.1])
        p = sampling_probabilities(ema_update(LearningState(), base, 0))
        q = sampling_probabilities(ema_update(LearningState(), base + 4.2, 0))
        np.testing.assert_allclose(p, q, atol=1e-12)

    def test_requires_scores(self):
        with pytest.raises(InputError):
            sampling_probabilities(LearningState())


class TestLearningPlan:
    def test_permutation(self):
        plan = learning_epoch_plan(np.full(10, 0.1), make_rng(0), t=3)
        assert sorted(plan.indices.tolist()) == list(range(10))
        assert plan.epoch == 3 and plan.scheduler == "learning"

    def test_two_sample_law(self):
        rng = make_rng(99)
        n = 100_000
        hits = sum(learning_epoch_plan([0.75, 0.25], rng).indices[0] == 0 for _ in range(n))
        assert abs(hits / n - 0.75) < 0.01

    def test_subset(self):
        plan = learning_epoch_plan(np.full(10, 0.1), make_rng(0), subset_size=4)
        assert len(plan) == 4
        with pytest.raises(InputError):
            learning_epoch_plan(np.full(10, 0.1), make_rng(0), subset_size=11)

    def test_higher_score_comes_earlier(self):
        scores = np.linspace(-1, 1, 12)
        probs = sampling_probabilities(ema_update(LearningState(), scores, 0))
        rng = make_rng(7)
        pos = np.zeros(12)
        for _ in range(1000):
            order = learning_epoch_plan(probs, rng).indices
            pos[order] += np.arange(12)
        rho = spearmanr(scores, pos / 1000).statistic
        assert rho < 0


def test_scheduler_aliases():
    assert sched.canonical_scheduler("bss-h") == "heuristic"
    assert sched.canonical_scheduler("BSS-L") == "learning"
    assert sched.canonical_scheduler("vanilla") == "vanilla"
    with pytest.raises(InputError):
        sched.canonical_scheduler("greedy")
