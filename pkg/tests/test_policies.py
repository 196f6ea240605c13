import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamtriage.curves import solve_curves
from streamtriage.nhpp import RateFunction
from streamtriage.policies import (
    Episode,
    InspectionOutcome,
    UndefinedResultError,
    capacity_for,
    detection_rate,
    read_episodes,
    run_batch,
    run_dynamic,
    run_random,
    run_static,
    synth_episode,
    write_episodes,
    write_outcomes,
    write_tradeoff,
)
from streamtriage.experiment import make_episodes, run_policies, summarize
from streamtriage.scoredist import ScoreCdf, ScoreModel, beta_shaped_cdf


def episode(scores, labels=None, times=None, tau=10.0):
    scores = np.asarray(scores, float)
    if times is None:
        times = np.linspace(0.0, tau, scores.size + 2)[1:-1]
    if labels is None:
        labels = np.zeros(scores.size, dtype=int)
    return Episode(np.asarray(times, float), scores, np.asarray(labels), tau)


episodes = st.integers(0, 40).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n),
    )
).map(lambda sl: episode(sl[0], sl[1]))


class TestCapacity:
    def test_table_value(self):
        assert capacity_for(0.1, 3219) == 321

    def test_zero(self):
        assert capacity_for(0.0, 500.0) == 0

    def test_floor(self):
        assert capacity_for(1.0, 100.7) == 100

    def test_exact_product_not_rounded_down(self):
        # 0.07 * 100 is 7.000000000000001 but 0.29 * 100 is 28.999999999999996
        assert capacity_for(0.29, 100.0) == 29

    def test_range(self):
        with pytest.raises(ValueError):
            capacity_for(1.5, 10.0)


class TestStatic:
    def test_zero_threshold_takes_first(self):
        o = run_static(episode([0.1, 0.0, 0.7, 0.4]), 0.0, 3)
        assert list(o.selected) == [0, 1, 2]

    def test_threshold_above_max(self):
        assert run_static(episode([0.1, 0.6]), 0.61, 5).selected.size == 0

    def test_budget_exhaustion(self):
        assert list(run_static(episode([0.9, 0.2, 0.8]), 0.5, 1).selected) == [0]

    def test_inclusive_threshold(self):
        assert list(run_static(episode([0.5, 0.4]), 0.5, 2).selected) == [0]


@pytest.fixture(scope="module")
def zero_curves():
    return solve_curves(RateFunction.constant(0.0, 10.0), ScoreCdf.uniform(), 5, grid_size=11)


class TestDynamic:
    def test_zero_budget(self, zero_curves):
        assert run_dynamic(episode([0.9, 0.8]), zero_curves, 0).selected.size == 0

    def test_zero_curves_strict(self, zero_curves):
        o = run_dynamic(episode([0.0, 0.3, 0.0, 0.2, 0.9, 0.4]), zero_curves, 3)
        assert list(o.selected) == [1, 3, 4]

    def test_arrival_at_horizon(self):
        curves = solve_curves(RateFunction.constant(2.0, 10.0), ScoreCdf.uniform(), 4, grid_size=101)
        ep = episode([0.01], times=[10.0])
        assert list(run_dynamic(ep, curves, 4).selected) == [0]

    def test_matches_reference_loop(self):
        rate = RateFunction([0.0, 50.0, 100.0], [3.0, 8.0, 1.0])
        model = ScoreModel(0.1, beta_shaped_cdf(2, 5, knots=21), beta_shaped_cdf(5, 2, knots=21))
        curves = solve_curves(rate, model.fs, 40, grid_size=257)
        rng = np.random.default_rng(3)
        for _ in range(30):
            ep = synth_episode(rate, model, rng)
            n_k = int(rng.integers(1, 41))
            chosen, j = [], n_k
            for i, (t, s) in enumerate(zip(ep.times, ep.scores)):
                if j and s > curves.threshold_at(j, t):
                    chosen.append(i)
                    j -= 1
            assert list(run_dynamic(ep, curves, n_k).selected) == chosen

    def test_needs_enough_curves(self, zero_curves):
        with pytest.raises(ValueError):
            run_dynamic(episode([0.5]), zero_curves, 6)


class TestRandom:
    def test_k_zero(self):
        assert run_random(episode([0.5] * 10), 0.0, 3, np.random.default_rng(0)).selected.size == 0

    def test_k_one(self):
        o = run_random(episode([0.5] * 10), 1.0, 4, np.random.default_rng(0))
        assert list(o.selected) == [0, 1, 2, 3]

    def test_k_one_with_rate(self):
        o = run_random(episode([0.5] * 10), 1.0, 4, np.random.default_rng(0), rate=RateFunction.constant(1.0, 10.0))
        assert list(o.selected) == [0, 1, 2, 3]

    def test_bernoulli_mode_cap(self):
        o = run_random(episode([0.5] * 200), 0.5, 7, np.random.default_rng(1))
        assert o.selected.size == 7

    def test_no_skill_rate_is_at_least_random_bound(self):
        # detection rate of score-blind selection is >= k - 1/Lambda and, with budget pacing, close to k
        rate = RateFunction.constant(1.0, 200.0)
        d = ScoreCdf.uniform()
        model = ScoreModel(0.1, d, d)
        k = 0.1
        n_k = capacity_for(k, rate.total)
        rng = np.random.default_rng(17)
        outs = []
        for i in range(10_000):
            ep = synth_episode(rate, model, rng, str(i))
            outs.append(run_random(ep, k, n_k, rng, rate=rate))
        mean, se = detection_rate(outs)
        assert mean >= k - 1.0 / rate.total - 2 * se
        assert abs(mean - k) < 3 * se


class TestBatch:
    def test_everything_when_budget_large(self):
        assert list(run_batch(episode([0.3, 0.1, 0.2]), 5).selected) == [0, 1, 2]

    def test_tie_break_by_time(self):
        assert list(run_batch(episode([0.3, 0.9, 0.9]), 2).selected) == [1, 2]
        assert list(run_batch(episode([0.9, 0.3, 0.9, 0.9]), 2).selected) == [0, 2]

    def test_against_brute_force(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            n = int(rng.integers(0, 30))
            scores = np.round(rng.random(n), 1)
            n_k = int(rng.integers(0, 12))
            ranked = sorted(range(n), key=lambda i: (-scores[i], i))
            assert list(run_batch(episode(scores), n_k).selected) == sorted(ranked[:n_k])

    def test_disjoint_supports_are_perfect(self):
        rate = RateFunction.constant(1.0, 300.0)
        model = ScoreModel(0.05, ScoreCdf.uniform(0.0, 0.4), ScoreCdf.uniform(0.6, 1.0))
        rng = np.random.default_rng(2)
        for _ in range(200):
            ep = synth_episode(rate, model, rng)
            for n_k in (3, 15, 40):
                o = run_batch(ep, n_k)
                assert o.frauds_caught == min(n_k, ep.frauds)


@settings(max_examples=150)
@given(episodes, st.integers(0, 45), st.floats(0.0, 1.0))
def test_outcome_invariants(ep, n_k, alpha):
    curves = solve_curves(RateFunction.constant(1.0, ep.tau), ScoreCdf.uniform(), 45, grid_size=33)
    rng = np.random.default_rng(0)
    rate = RateFunction.constant(1.0, ep.tau)
    for o in (run_static(ep, alpha, n_k), run_dynamic(ep, curves, n_k),
              run_random(ep, alpha, n_k, rng), run_random(ep, alpha, n_k, rng, rate=rate), run_batch(ep, n_k)):
        assert o.selected.size <= n_k
        assert np.all(np.diff(o.selected) > 0)
        assert o.frauds_caught <= min(o.selected.size, o.frauds_total)
        assert o.frauds_total == ep.frauds


class TestSynth:
    def test_beta_zero(self):
        ep = synth_episode(RateFunction.constant(5.0, 20.0), ScoreModel(0.0, ScoreCdf.uniform(), ScoreCdf.uniform()),
                           np.random.default_rng(0))
        assert len(ep) > 0 and ep.frauds == 0

    def test_label_fraction_and_scores(self):
        rate = RateFunction.constant(100.0, 100.0)
        f1 = ScoreCdf([0.2, 0.5, 0.95], [0.0, 0.3, 1.0])
        model = ScoreModel(0.1, ScoreCdf.uniform(), f1)
        rng = np.random.default_rng(6)
        eps = [synth_episode(rate, model, rng) for _ in range(10)]
        labels = np.concatenate([e.labels for e in eps])
        assert labels.size >= 90_000
        se = math.sqrt(0.1 * 0.9 / labels.size)
        assert abs(labels.mean() - 0.1) < 3 * se
        s1 = np.sort(np.concatenate([e.scores[e.labels == 1] for e in eps]))[:10_000]
        s1 = np.sort(s1)
        ecdf = np.arange(1, s1.size + 1) / s1.size
        assert np.max(np.abs(ecdf - f1.cdf(s1))) < 0.02


class TestDetectionRate:
    def outcome(self, caught, total):
        return InspectionOutcome(np.arange(caught), caught, total, 5, "static")

    def test_all_caught(self):
        assert detection_rate([self.outcome(3, 3)]) == (1.0, 0.0)

    def test_average(self):
        assert detection_rate([self.outcome(1, 5), self.outcome(3, 5)])[0] == pytest.approx(0.4)

    def test_zero_fraud_episodes_ignored(self):
        base = [self.outcome(1, 5), self.outcome(3, 5)]
        mixed = [self.outcome(0, 0), *base, self.outcome(0, 0)]
        assert detection_rate(mixed) == detection_rate(base)

    def test_undefined(self):
        with pytest.raises(UndefinedResultError):
            detection_rate([self.outcome(0, 0)])


class TestExperiment:
    def test_worker_count_does_not_change_results(self):
        rate = RateFunction.constant(0.5, 200.0)
        model = ScoreModel(0.1, beta_shaped_cdf(2, 5, knots=21), beta_shaped_cdf(5, 2, knots=21))
        curves = solve_curves(rate, model.fs, 20, grid_size=129)
        eps = make_episodes(rate, model, 12, seed=5)
        ks = [0.05, 0.2]
        a = run_policies(eps, model, rate, ks, curves=curves, seed=5)
        b = run_policies(eps, model, rate, ks, curves=curves, seed=5, workers=3)
        assert [(o.policy, o.episode_id, o.k, o.selected.tolist()) for o in a] == \
               [(o.policy, o.episode_id, o.k, o.selected.tolist()) for o in b]
        curves_out = summarize(a, ks, ["batch", "random"])
        assert [c.policy for c in curves_out] == ["batch", "random"]

    def test_dynamic_needs_curves(self):
        rate = RateFunction.constant(0.5, 200.0)
        model = ScoreModel(0.1, ScoreCdf.uniform(), ScoreCdf.uniform())
        with pytest.raises(ValueError):
            run_policies(make_episodes(rate, model, 2, 0), model, rate, [0.1], ["dynamic"])


class TestFiles:
    def test_episode_round_trip(self, tmp_path):
        eps = make_episodes(RateFunction.constant(0.2, 50.0), ScoreModel(0.2, ScoreCdf.uniform(), ScoreCdf.uniform()),
                            3, seed=1)
        write_episodes(eps, tmp_path / "e.csv")
        back, warnings = read_episodes(tmp_path / "e.csv", tau=50.0)
        assert warnings == []
        for a, b in zip(eps, back):
            np.testing.assert_array_equal(a.times, b.times)
            np.testing.assert_array_equal(a.scores, b.scores)
            np.testing.assert_array_equal(a.labels, b.labels)

    def test_bad_rows_and_clamping(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("episode_id,t_seconds,score,label\n"
                     "a,1.0,0.5,1\n"
                     "a,2.0,1.7,0\n"
                     "a,oops,0.5,0\n"
                     "b,3.0,0.1,2\n"
                     "b,99.0,0.1,0\n"
                     "b,0.5,-0.2,0\n")
        eps, warnings = read_episodes(p, tau=10.0)
        assert [e.episode_id for e in eps] == ["a", "b"]
        assert list(eps[0].scores) == [0.5, 1.0] and list(eps[1].scores) == [0.0]
        assert sum("skipped" in w for w in warnings) == 3
        assert sum("clamped" in w for w in warnings) == 2

    def test_bad_header(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("id,time\n1,2\n")
        with pytest.raises(ValueError):
            read_episodes(p, tau=10.0)

    def test_output_schemas(self, tmp_path):
        o = InspectionOutcome(np.array([1, 4]), 1, 2, 3, "batch", "7", 0.1)
        write_outcomes([o], tmp_path / "o.csv")
        lines = (tmp_path / "o.csv").read_text().splitlines()
        assert lines == ["policy,k,episode_id,n_k,selected,frauds_caught,frauds_total", "batch,0.1,7,3,2,1,2"]
        curves = summarize([o], [0.1], ["batch"])
        write_tradeoff(curves, tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "policy,k,psi_mean,psi_se,episodes"
        assert lines[1] == "batch,0.1,0.5,0.0,1"
