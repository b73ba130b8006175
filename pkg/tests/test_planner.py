import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from looprl.planner import (
    Planner, PlannerConfig, SafeConfig, SequenceDistribution, aggregate, arc_plan, cem_update,
    diag_gaussian_kl, is_update, sample_prior, score_sequences, softmax_weights,
)

LO, HI = -np.ones(1), np.ones(1)


class FnModel:
    """Ensemble stand-in: member ``k`` maps ``(s, a)`` to ``(s', r)`` with a fixed variance."""

    def __init__(self, fns, var=0.0):
        self.fns = fns
        self.k = len(fns)
        self.var = var

    def predict(self, member, s, a):
        nxt, r = self.fns[member](np.asarray(s, float), np.asarray(a, float))
        return nxt, np.full_like(nxt, self.var), r


def integrator(s, a):
    return s + a, -(s ** 2).sum(axis=-1) - 0.1 * (a ** 2).sum(axis=-1)


def cfg_(**kw):
    base = dict(H=3, N=20, P=1, iterations=1, alpha=1.0, beta=0.0, kappa=1.0, sigma_prior=0.5)
    base.update(kw)
    return PlannerConfig(**base)


class TestConfig:
    @pytest.mark.parametrize("bad", [dict(H=0), dict(N=1), dict(alpha=0.0), dict(beta=1.5),
                                     dict(kappa=0.0), dict(lambda_pess=-1.0),
                                     dict(method="mppi"), dict(terminal="v")])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            cfg_(**bad)

    def test_paper_defaults(self):
        c = PlannerConfig()
        assert (c.H, c.N, c.P, c.iterations, c.alpha, c.beta, c.kappa) == (3, 100, 4, 5, 0.1, 0.05, 1.0)


class TestSequenceDistribution:
    def test_shift_pads_zero_mean(self):
        d = SequenceDistribution(np.array([[1.0], [2.0], [3.0]]), np.array([[0.1], [0.2], [0.3]]))
        s = d.shifted(0.7)
        np.testing.assert_array_equal(s.mean[:, 0], [2.0, 3.0, 0.0])
        np.testing.assert_array_equal(s.std[:, 0], [0.2, 0.3, 0.7])

    def test_negative_std_rejected(self):
        with pytest.raises(ValueError):
            SequenceDistribution(np.zeros((2, 1)), -np.ones((2, 1)))


class TestSamplePrior:
    def test_beta_one_is_actor_rollout(self):
        model = FnModel([integrator])
        actor = lambda s: -0.5 * s[:, :1]
        cfg = cfg_(beta=1.0)
        dist = SequenceDistribution.zeros(3, 1, 0.5)
        seqs, pick = sample_prior(np.array([0.8]), dist, cfg, np.random.default_rng(0), LO, HI,
                                  actor, model)
        assert pick.all()
        # s0 = 0.8, a0 = -0.4, s1 = 0.4, a1 = -0.2, s2 = 0.2, a2 = -0.1
        np.testing.assert_allclose(seqs[:, :, 0], np.tile([-0.4, -0.2, -0.1], (20, 1)), atol=1e-15)

    def test_beta_zero_no_noise_is_prev_mean(self):
        dist = SequenceDistribution(np.array([[0.3], [-0.2], [0.0]]), np.zeros((3, 1)))
        seqs, _ = sample_prior(np.zeros(1), dist, cfg_(), np.random.default_rng(0), LO, HI)
        np.testing.assert_array_equal(seqs, np.broadcast_to(dist.mean, seqs.shape))

    def test_clipped(self):
        dist = SequenceDistribution.zeros(3, 1, 10.0)
        seqs, _ = sample_prior(np.zeros(1), dist, cfg_(N=500), np.random.default_rng(0), LO, HI)
        assert seqs.min() >= -1 and seqs.max() <= 1

    def test_actor_branch_frequency(self):
        cfg = cfg_(N=100, beta=0.05)
        model = FnModel([integrator])
        dist = SequenceDistribution.zeros(3, 1, 0.5)
        counts = []
        for seed in range(200):
            _, pick = sample_prior(np.zeros(1), dist, cfg, np.random.default_rng(seed), LO, HI,
                                   lambda s: np.zeros((len(s), 1)), model)
            counts.append(pick.sum(axis=0))
        counts = np.concatenate(counts)
        # binomial(100, 0.05): mean 5, sd sqrt(4.75); 600 draws -> se ~0.089
        assert abs(counts.mean() - 5.0) < 4 * math.sqrt(4.75 / len(counts))


class TestScore:
    def test_horizon_one_is_critic(self):
        q = lambda s, a: 3.0 * a[:, 0] + s[:, 0]
        seqs = np.linspace(-1, 1, 7)[:, None, None]
        R, _ = score_sequences(np.array([0.5]), seqs, FnModel([integrator] * 2, var=0.3),
                               cfg_(H=1, P=3), np.random.default_rng(0), q)
        np.testing.assert_allclose(R, np.tile(3.0 * seqs[:, 0, 0] + 0.5, (2, 1)).T, atol=1e-14)

    def test_hand_two_step(self):
        q = lambda s, a: s[:, 0] * a[:, 0] + 1.0
        cfg = cfg_(H=2, gamma=0.9)
        seqs = np.array([[[0.5], [-0.2]], [[-1.0], [1.0]]])
        R, _ = score_sequences(np.array([1.0]), seqs, FnModel([integrator]), cfg,
                               np.random.default_rng(0), q)
        # r0 = -1 - 0.1 a0^2, s1 = 1 + a0, Q = s1 a1 + 1
        exp0 = -1 - 0.1 * 0.25 + 0.9 * (1.5 * -0.2 + 1.0)
        exp1 = -1 - 0.1 * 1.0 + 0.9 * (0.0 * 1.0 + 1.0)
        np.testing.assert_allclose(R[:, 0], [exp0, exp1], atol=1e-14)

    def test_no_terminal_sums_model_rewards(self):
        cfg = cfg_(H=2, gamma=0.9, terminal="none")
        seqs = np.array([[[0.5], [-0.2]]])
        R, _ = score_sequences(np.array([1.0]), seqs, FnModel([integrator]), cfg,
                               np.random.default_rng(0))
        assert R[0, 0] == pytest.approx(-1 - 0.025 + 0.9 * (-2.25 - 0.004), abs=1e-14)

    def test_identical_members_equal_columns(self):
        q = lambda s, a: s[:, 0]
        seqs = np.random.default_rng(1).uniform(-1, 1, (10, 3, 1))
        R, _ = score_sequences(np.zeros(1), seqs, FnModel([integrator] * 3, var=0.2),
                               cfg_(P=4), np.random.default_rng(0), q)
        assert np.all(R == R[:, :1])

    def test_worst_case_cost(self):
        # member 1 drifts further right; cost 1 whenever s' > 0.5
        fns = [integrator, lambda s, a: (s + 2 * a, np.zeros(len(s)))]
        cost = lambda s, a, s2: (s2[:, 0] > 0.5).astype(float)
        seqs = np.array([[[0.3], [0.0]], [[-0.3], [0.0]]])
        cfg = cfg_(H=2, gamma=0.5)
        _, C = score_sequences(np.zeros(1), seqs, FnModel(fns), cfg, np.random.default_rng(0),
                               lambda s, a: np.zeros(len(s)), cost)
        # member 1: s1 = 0.6 (cost 1), s2 = 0.6 (cost 0.5)
        np.testing.assert_allclose(C, [1.5, 0.0])


class TestAggregate:
    def test_two_member_hand(self):
        assert aggregate(np.array([[1.0, 3.0]]), 1.0)[0] == 1.0

    def test_std_switch(self):
        assert aggregate(np.array([[1.0, 3.0, 1.0, 3.0]]), 2.0, "std")[0] == 0.0

    def test_lambda_zero_is_mean(self):
        R = np.random.default_rng(0).standard_normal((6, 5))
        np.testing.assert_array_equal(aggregate(R, 0.0), R.mean(axis=1))

    @given(st.floats(-1e3, 1e3), st.floats(0, 100), st.integers(1, 7))
    def test_identical_columns_ignore_lambda(self, v, lam, k):
        assert aggregate(np.full((1, k), v), lam)[0] == pytest.approx(v, abs=1e-9 * (1 + abs(v)))

    @given(st.floats(0.01, 10), st.floats(0.0, 5.0), st.floats(0.01, 5.0))
    def test_disagreement_strictly_lowers_score(self, lam, spread, extra):
        narrow = np.array([[2.0 - spread, 2.0 + spread]])
        wide = np.array([[2.0 - spread - extra, 2.0 + spread + extra]])
        assert aggregate(wide, lam)[0] < aggregate(narrow, lam)[0]


class TestISUpdate:
    def test_equal_scores_arithmetic_mean(self):
        seqs = np.random.default_rng(0).standard_normal((7, 3, 2))
        new = is_update(seqs, np.zeros(7), SequenceDistribution.zeros(3, 2), cfg_())
        np.testing.assert_allclose(new.mean, seqs.mean(axis=0), atol=1e-14)
        np.testing.assert_allclose(new.std, seqs.std(axis=0), atol=1e-14)

    def test_softmax_ln2(self):
        np.testing.assert_allclose(softmax_weights(np.array([0.0, math.log(2)]), 1.0),
                                   [1 / 3, 2 / 3], atol=1e-15)

    def test_smoothing(self):
        seqs = np.array([[[1.0]], [[3.0]]])
        old = SequenceDistribution(np.array([[0.0]]), np.array([[2.0]]))
        new = is_update(seqs, np.zeros(2), old, cfg_(H=1, alpha=0.25))
        assert new.mean[0, 0] == pytest.approx(0.25 * 2.0)
        assert new.std[0, 0] == pytest.approx(math.sqrt(0.25 * 1.0 + 0.75 * 4.0))

    def test_std_floor(self):
        seqs = np.ones((4, 2, 1))
        new = is_update(seqs, np.zeros(4), SequenceDistribution.zeros(2, 1, 0.0), cfg_(H=2))
        assert np.all(new.std == 1e-3)

    @settings(max_examples=50)
    @given(st.floats(-1e6, 1e6), st.integers(0, 2 ** 16))
    def test_shift_invariance(self, c, seed):
        rng = np.random.default_rng(seed)
        seqs = rng.standard_normal((10, 2, 1))
        scores = rng.standard_normal(10)
        dist = SequenceDistribution.zeros(2, 1)
        a = is_update(seqs, scores, dist, cfg_(H=2, kappa=3.0))
        b = is_update(seqs, scores + c, dist, cfg_(H=2, kappa=3.0))
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-9)

    @pytest.mark.parametrize("kappa", [0.1, 1.0, 5.0])
    def test_closed_form_enumerable(self, kappa):
        # uniform prior over a finite grid: p_opt ∝ e^{κ L}, so the refit mean is its mean
        grid = np.array([-0.5, 0.0, 0.5])
        seqs = np.array(list(itertools.product(grid, repeat=3)))[:, :, None]
        L = np.array([math.sin(3 * x[0]) + x[1] * x[2] - x[2] ** 2 for x in seqs[:, :, 0]])
        num = sum(math.exp(kappa * l) * x for l, x in zip(L, seqs))
        den = sum(math.exp(kappa * l) for l in L)
        new = is_update(seqs, L, SequenceDistribution.zeros(3, 1), cfg_(kappa=kappa))
        np.testing.assert_allclose(new.mean, num / den, atol=1e-10, rtol=0)

    def test_cem_elites(self):
        seqs = np.arange(6, dtype=float)[:, None, None]
        new = cem_update(seqs, -np.abs(seqs[:, 0, 0] - 4), SequenceDistribution.zeros(1, 1),
                         cfg_(H=1, N=6, method="cem", elites=3))
        assert new.mean[0, 0] == pytest.approx(4.0)


class TestArcPlan:
    @pytest.mark.parametrize("seed", range(3))
    def test_quadratic_optimum(self, seed):
        rng = np.random.default_rng(seed)
        c = rng.uniform(-0.5, 0.5, (5, 1))
        cfg = cfg_(H=5, N=100, iterations=10, alpha=0.7, kappa=1600.0)
        res = arc_plan(np.zeros(1), cfg, None, rng, LO, HI,
                       scorer=lambda q: -((q - c) ** 2).sum(axis=(1, 2)))
        assert np.abs(res.dist.mean - c).max() < 1e-2
        assert res.action[0] == pytest.approx(res.dist.mean[0, 0])

    def test_actor_limit(self):
        model = FnModel([integrator, integrator])
        actor = lambda s: np.clip(-0.5 * s[:, :1], -1, 1)
        cfg = cfg_(beta=1.0, kappa=1e-12, P=2)
        res = arc_plan(np.array([0.8]), cfg, None, np.random.default_rng(0), LO, HI, actor,
                       model, lambda s, a: -(s ** 2).sum(axis=1))
        assert res.action[0] == pytest.approx(-0.4, abs=1e-12)

    def test_degenerate_population_keeps_prev(self):
        prev = SequenceDistribution(np.array([[0.3], [0.1], [0.0]]), np.zeros((3, 1)))
        cfg = cfg_(sigma_prior=0.0, alpha=0.1, iterations=5)
        res = arc_plan(np.zeros(1), cfg, prev, np.random.default_rng(0), LO, HI,
                       model=FnModel([integrator]), q_fn=lambda s, a: a[:, 0])
        assert res.action[0] == pytest.approx(0.3, abs=1e-3)

    def test_kl_chain_bounds_tv(self):
        rng = np.random.default_rng(0)
        cfg = cfg_(H=2, N=100, iterations=4, alpha=0.1, kappa=2.0)
        res = arc_plan(np.zeros(1), cfg, None, rng, LO, HI,
                       scorer=lambda q: -((q - 0.4) ** 2).sum(axis=(1, 2)))
        assert all(np.isfinite(res.info.kls)) and len(res.info.kls) == 4
        first = SequenceDistribution.zeros(2, 1, cfg.sigma_prior)
        # Monte-Carlo TV between first and last Gaussians: E_p[max(0, 1 - q/p)]
        x = first.mean + first.std * np.random.default_rng(1).standard_normal((200_000, 2, 1))

        def logpdf(d):
            return (-0.5 * ((x - d.mean) / d.std) ** 2 - np.log(d.std)).sum(axis=(1, 2))

        tv = np.maximum(0.0, 1.0 - np.exp(logpdf(res.dist) - logpdf(first))).mean()
        assert tv <= res.info.tv_bound

    def test_kl_closed_form(self):
        p = SequenceDistribution(np.array([[0.0]]), np.array([[1.0]]))
        q = SequenceDistribution(np.array([[1.0]]), np.array([[2.0]]))
        assert diag_gaussian_kl(p, q) == pytest.approx(math.log(2) + 2 / 8 - 0.5)


def line_world():
    """1-D: reward pulls right (towards 1), cost once the next state passes 0.3."""
    model = FnModel([lambda s, a: (s + 0.5 * a, s[:, 0] + 0.5 * a[:, 0])] * 2)
    cost = lambda s, a, s2: (s2[:, 0] > 0.3).astype(float)
    q = lambda s, a: s[:, 0] + 0.5 * a[:, 0]
    return model, cost, q


class TestSafe:
    def test_infinite_threshold_matches_arc(self):
        model, cost, q = line_world()
        cfg = cfg_(N=30, P=2, iterations=3, alpha=0.5)
        a = arc_plan(np.zeros(1), cfg, None, np.random.default_rng(4), LO, HI, model=model, q_fn=q)
        b = arc_plan(np.zeros(1), cfg, None, np.random.default_rng(4), LO, HI, model=model, q_fn=q,
                     safe=SafeConfig(math.inf, cost, m=5))
        np.testing.assert_array_equal(a.dist.mean, b.dist.mean)

    def test_no_safe_uses_cost_softmin(self):
        model, _, q = line_world()
        cost = lambda s, a, s2: 1.0 + a[:, 0] ** 2
        cfg = cfg_(H=1, N=8, kappa=2.0)
        safe = SafeConfig(0.5, cost, m=1)
        rng = np.random.default_rng(0)
        res = arc_plan(np.zeros(1), cfg, None, rng, LO, HI, model=model, q_fn=q, safe=safe)
        # replay the same draws for the brute-force oracle
        seqs, _ = sample_prior(np.zeros(1), SequenceDistribution.zeros(1, 1, 0.5), cfg,
                               np.random.default_rng(0), LO, HI)
        C = 1.0 + seqs[:, 0, 0] ** 2
        w = np.exp(-2.0 * C)
        assert res.info.n_safe == [0]
        assert res.dist.mean[0, 0] == pytest.approx((w * seqs[:, 0, 0]).sum() / w.sum(), abs=1e-12)

    def test_avoids_cost_region(self):
        model, cost, q = line_world()
        cfg = cfg_(H=2, N=100, P=1, iterations=5, alpha=0.5, kappa=5.0)
        free = Planner(cfg, LO, HI)
        safe = Planner(cfg, LO, HI, SafeConfig(0.0, cost, m=5))
        s = np.zeros(1)
        a_free = free.act(s, np.random.default_rng(0), model=model, q_fn=q)[0]
        a_safe = safe.act(s, np.random.default_rng(0), model=model, q_fn=q)[0]
        # safe next states satisfy 0.5 a <= 0.3
        assert a_safe <= 0.6
        assert a_free > 0.6


def test_planner_carries_shift():
    p = Planner(cfg_(H=3, iterations=2), LO, HI)
    rng = np.random.default_rng(0)
    p.act(np.zeros(1), rng, scorer=lambda q: -((q - 0.5) ** 2).sum(axis=(1, 2)))
    assert p.prev.mean[-1, 0] == 0.0 and p.calls == 1
    p.reset()
    assert p.prev is None
