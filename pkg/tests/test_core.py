import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from looprl.core import DiscountSpec, ReplayBuffer, Transition, discounted_return


def make_t(i, obs_dim=2, act_dim=1, r=None, done=False):
    s = np.full(obs_dim, float(i))
    return Transition(s, np.full(act_dim, 0.1 * i), float(i) if r is None else r, 0.0,
                      s + 1.0, done)


class TestDiscountedReturn:
    def test_geometric(self):
        assert discounted_return([1, 1, 1], 0.5) == 1.75

    def test_empty(self):
        assert discounted_return([], 0.9) == 0.0

    def test_hand_sum(self):
        assert discounted_return([2, -1, 3], 0.9) == pytest.approx(3.53, abs=1e-12)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            discounted_return([1.0, float("nan")], 0.9)

    def test_rejects_bad_gamma(self):
        with pytest.raises(ValueError):
            discounted_return([1.0], 1.0)
        with pytest.raises(ValueError):
            DiscountSpec(0.0)

    @settings(max_examples=50)
    @given(st.lists(st.floats(-100, 100), max_size=20), st.floats(-5, 5), st.floats(0.01, 0.99))
    def test_linear(self, rewards, alpha, gamma):
        lhs = discounted_return([alpha * r for r in rewards], gamma)
        rhs = alpha * discounted_return(rewards, gamma)
        assert math.isclose(lhs, rhs, rel_tol=1e-9, abs_tol=1e-9)


class TestReplayBuffer:
    def test_push_one(self):
        buf = ReplayBuffer(3, 2, 1)
        buf.push(make_t(0))
        assert len(buf) == 1

    def test_fifo_eviction(self):
        buf = ReplayBuffer(3, 2, 1)
        for i in range(4):
            buf.push(make_t(i))
        assert len(buf) == 3
        assert [buf[k].r for k in range(3)] == [1.0, 2.0, 3.0]

    def test_nan_reward_rejected(self):
        buf = ReplayBuffer(3, 2, 1)
        with pytest.raises(ValueError):
            buf.push(make_t(0, r=float("nan")))

    def test_dimension_mismatch(self):
        buf = ReplayBuffer(3, 2, 1)
        with pytest.raises(ValueError):
            buf.push(make_t(0, obs_dim=3))

    def test_negative_cost_rejected(self):
        buf = ReplayBuffer(3, 2, 1)
        t = make_t(0)
        t.c = -1.0
        with pytest.raises(ValueError):
            buf.push(t)

    def test_sample_all_is_permutation(self):
        buf = ReplayBuffer(10, 2, 1)
        for i in range(7):
            buf.push(make_t(i))
        b = buf.sample(7, np.random.default_rng(0))
        assert sorted(b.r.tolist()) == [float(i) for i in range(7)]

    def test_sample_deterministic(self):
        buf = ReplayBuffer(50, 2, 1)
        for i in range(40):
            buf.push(make_t(i))
        b1 = buf.sample(10, np.random.default_rng(123))
        b2 = buf.sample(10, np.random.default_rng(123))
        np.testing.assert_array_equal(b1.s, b2.s)
        assert len(set(b1.r.tolist())) == 10

    def test_sample_zero_and_too_many(self):
        buf = ReplayBuffer(5, 2, 1)
        buf.push(make_t(0))
        assert len(buf.sample(0, np.random.default_rng(0))) == 0
        with pytest.raises(ValueError):
            buf.sample(2, np.random.default_rng(0))

    @settings(max_examples=30)
    @given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(0, 10)), min_size=1, max_size=15))
    def test_round_trip_bit_identical(self, items):
        buf = ReplayBuffer(20, 2, 1)
        ts = []
        for k, (r, c) in enumerate(items):
            t = Transition(np.array([r, -r]), np.array([c]), r, c, np.array([k, r]), k % 3 == 0)
            ts.append(t)
            buf.push(t)
        for k, t in enumerate(ts):
            got = buf[k]
            assert got.r == t.r and got.c == t.c and got.done == t.done
            np.testing.assert_array_equal(got.s, t.s)
            np.testing.assert_array_equal(got.s_next, t.s_next)

    def test_sarsa_successor(self):
        buf = ReplayBuffer(10, 1, 1)
        s = np.array([0.0])
        for i in range(5):
            s2 = s + 1
            buf.push(Transition(s, np.array([float(i)]), 0.0, 0.0, s2, i == 4))
            s = s2
        b = buf.sample_sarsa(5, np.random.default_rng(0))
        for a, a_next, d in zip(b.a[:, 0], b.a_next[:, 0], b.done):
            assert a_next == (0.0 if d else a + 1)

    def test_sarsa_excludes_truncated_tail(self):
        buf = ReplayBuffer(10, 1, 1)
        buf.push(Transition(np.zeros(1), np.zeros(1), 0.0, 0.0, np.ones(1), False))
        with pytest.raises(ValueError):
            buf.sample_sarsa(1, np.random.default_rng(0))

    def test_save_load(self, tmp_path):
        buf = ReplayBuffer(4, 2, 1)
        for i in range(6):
            buf.push(make_t(i))
        buf.save(tmp_path / "d.bin", {"seed": 3})
        back = ReplayBuffer.load(tmp_path / "d.bin")
        assert len(back) == 4
        for k in range(4):
            assert back[k].r == buf[k].r
            np.testing.assert_array_equal(back[k].s, buf[k].s)

    def test_wrapped_reload_samples_identically(self, tmp_path):
        buf = ReplayBuffer(5, 2, 1)
        for i in range(8):
            buf.push(make_t(i, done=i == 5))
        buf.save(tmp_path / "w.bin")
        back = ReplayBuffer.load(tmp_path / "w.bin")
        for draw in (lambda b, g: b.sample(3, g), lambda b, g: b.sample_sarsa(3, g)):
            x = draw(buf, np.random.default_rng(9))
            y = draw(back, np.random.default_rng(9))
            np.testing.assert_array_equal(x.s, y.s)
            np.testing.assert_array_equal(x.r, y.r)
            if x.a_next is not None:
                np.testing.assert_array_equal(x.a_next, y.a_next)
        # pushes after reload evict the same oldest entry
        buf.push(make_t(20))
        back.push(make_t(20))
        np.testing.assert_array_equal(buf.all().r, back.all().r)

    def test_load_corrupt(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"not json\n1234")
        with pytest.raises(ValueError):
            ReplayBuffer.load(p)
