import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from streamtriage.nhpp import (
    BEYOND_HORIZON,
    ArrivalSequence,
    DomainError,
    RateFunction,
    cumulative,
    estimate_rate,
    inverse_cumulative,
    load_rate,
    read_episode_times,
    sample_next_arrival,
    save_rate,
    simulate_arrivals,
    sinusoidal_rate,
    split_thinning,
    superpose,
)


def gap_rate():
    # rate 1 on [0,1], ramps to 0 at t=2, zero until 3, back up to 2 at t=4
    return RateFunction([0.0, 1.0, 2.0, 3.0, 4.0], [1.0, 1.0, 0.0, 0.0, 2.0])


rates = st.lists(st.floats(0.0, 5.0), min_size=2, max_size=8).flatmap(
    lambda r: st.tuples(
        st.lists(st.floats(0.05, 2.0), min_size=len(r) - 1, max_size=len(r) - 1),
        st.just(r),
    )
).map(lambda tr: RateFunction(np.concatenate([[0.0], np.cumsum(tr[0])]), tr[1]))


class TestCumulative:
    def test_constant_rectangle(self):
        assert cumulative(RateFunction.constant(2.0, 3.0), 3.0) == pytest.approx(6.0)

    def test_zero_at_origin(self):
        assert cumulative(gap_rate(), 0.0) == 0.0

    def test_triangle_matches_quadrature(self):
        r = RateFunction([0.0, 1.0], [0.0, 2.0])
        expected, _ = quad(lambda t: 2.0 * t, 0.0, 1.0)
        assert expected == pytest.approx(1.0)
        assert cumulative(r, 1.0) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("t", [0.3, 1.0, 1.7, 2.5, 3.2, 4.0])
    def test_piecewise_matches_quadrature(self, t):
        r = gap_rate()
        expected, _ = quad(lambda s: float(np.interp(s, r.knot_times, r.knot_rates)), 0.0, t,
                           points=[1.0, 2.0, 3.0])
        assert cumulative(r, t) == pytest.approx(expected, abs=1e-10)

    @pytest.mark.parametrize("t", [-1e-9, 3.0 + 1e-9])
    def test_outside_domain(self, t):
        with pytest.raises(DomainError):
            cumulative(RateFunction.constant(2.0, 3.0), t)

    @given(rates)
    def test_nondecreasing(self, r):
        t = np.linspace(0.0, r.tau, 57)
        assert np.all(np.diff(r.cumulative(t)) >= -1e-12)

    def test_step_mode_is_piecewise_constant(self):
        r = RateFunction([0.0, 1.0, 3.0], [2.0, 0.5, 9.0], step=True)
        assert r.intensity(0.999) == 2.0
        assert r.intensity(1.0) == 0.5
        assert r.total == pytest.approx(3.0)


class TestInverse:
    def test_constant(self):
        assert inverse_cumulative(RateFunction.constant(2.0, 3.0), 6.0) == pytest.approx(3.0)

    def test_zero(self):
        assert inverse_cumulative(RateFunction.constant(2.0, 3.0), 0.0) == 0.0

    def test_gap_resolves_to_left_endpoint(self):
        r = gap_rate()
        u = r.cumulative(2.5)
        assert u == pytest.approx(1.5)
        assert inverse_cumulative(r, u) == pytest.approx(2.0)

    def test_beyond_total_raises(self):
        with pytest.raises(DomainError):
            inverse_cumulative(RateFunction.constant(2.0, 3.0), 6.0 + 1e-6)

    @settings(max_examples=200)
    @given(rates, st.floats(0.0, 1.0))
    def test_round_trip_where_positive(self, r, frac):
        t = frac * r.tau
        if r.intensity(t) <= 1e-6:
            return
        back = r.inverse_cumulative(r.cumulative(t))
        assert back == pytest.approx(t, rel=1e-9, abs=1e-9 * r.tau)

    @given(rates, st.floats(0.0, 1.0))
    def test_smallest_preimage(self, r, frac):
        u = frac * r.total
        t = r.inverse_cumulative(u)
        assert r.cumulative(t) == pytest.approx(u, abs=1e-9 * max(r.total, 1.0))
        if t > 2e-6 * r.tau:
            assert r.cumulative(t - 1e-6 * r.tau) < u + 1e-12 or u == 0


class TestSimulate:
    def test_zero_rate_is_empty(self):
        seq = simulate_arrivals(RateFunction.constant(0.0, 10.0), np.random.default_rng(0))
        assert len(seq) == 0

    def test_count_mean_and_variance(self):
        lam = 1000.0
        r = RateFunction.constant(lam / 50.0, 50.0)
        rng = np.random.default_rng(11)
        reps = 10_000
        counts = np.array([len(simulate_arrivals(r, rng)) for _ in range(reps)])
        assert abs(counts.mean() - lam) <= 3 * math.sqrt(lam / reps)
        assert counts.var(ddof=1) == pytest.approx(lam, rel=0.05)

    def test_times_follow_the_intensity(self):
        # arrivals are distributed in time with density lambda(t) / Lambda(tau)
        r = gap_rate()
        rng = np.random.default_rng(5)
        times = np.concatenate([simulate_arrivals(r, rng).times for _ in range(20_000)])
        for t in (0.5, 1.5, 2.5, 3.5):
            assert np.mean(times <= t) == pytest.approx(r.cumulative(t) / r.total, abs=0.01)
        assert not np.any((times > 2.0) & (times < 3.0))

    def test_reproducible(self):
        r = sinusoidal_rate(1.0, 0.5, 100.0)
        a = simulate_arrivals(r, np.random.default_rng(3)).times
        b = simulate_arrivals(r, np.random.default_rng(3)).times
        np.testing.assert_array_equal(a, b)


class TestNextArrival:
    def test_homogeneous_is_exponential(self):
        lam = 2.0
        r = RateFunction.constant(lam, 1000.0)
        rng = np.random.default_rng(2)
        w = np.array([sample_next_arrival(r, 10.0, rng) for _ in range(10_000)])
        assert np.all(np.isfinite(w))
        se1 = (1 / lam) / math.sqrt(w.size)
        assert abs(w.mean() - 1 / lam) < 3 * se1
        # E[W^2] = 2/lam^2, Var(W^2) = 24/lam^4 - 4/lam^4
        se2 = math.sqrt(20.0 / lam**4 / w.size)
        assert abs(np.mean(w**2) - 2 / lam**2) < 3 * se2

    def test_zero_rate_after_gamma(self):
        r = RateFunction([0.0, 1.0, 2.0, 5.0], [1.0, 0.0, 0.0, 0.0])
        rng = np.random.default_rng(0)
        assert all(sample_next_arrival(r, 2.5, rng) == BEYOND_HORIZON for _ in range(100))

    def test_matches_wait_density_by_quadrature(self):
        r = gap_rate()
        gamma = 0.6
        rng = np.random.default_rng(8)
        w = np.array([sample_next_arrival(r, gamma, rng) for _ in range(10_000)])

        def lam(s):
            return float(np.interp(s, r.knot_times, r.knot_rates))

        def cdf(t):
            hazard, _ = quad(lambda u: lam(gamma + u), 0.0, t, points=[0.4, 1.4, 2.4], limit=200)
            return 1.0 - math.exp(-hazard)

        grid = np.linspace(0.0, r.tau - gamma, 80)
        emp = np.array([np.mean(w <= t) for t in grid])
        ref = np.array([cdf(t) for t in grid])
        assert np.max(np.abs(emp - ref)) < 0.02

    @pytest.mark.parametrize("gamma", [-0.1, 4.0])
    def test_gamma_domain(self, gamma):
        with pytest.raises(DomainError):
            sample_next_arrival(gap_rate(), gamma, np.random.default_rng(0))


class TestThinning:
    def test_p_one(self):
        seq = simulate_arrivals(RateFunction.constant(5.0, 10.0), np.random.default_rng(1))
        a, b = split_thinning(seq, 1.0, np.random.default_rng(2))
        np.testing.assert_array_equal(a.times, seq.times)
        assert len(b) == 0

    def test_half_split_is_poisson(self):
        r = RateFunction.constant(20.0, 10.0)
        rng = np.random.default_rng(4)
        reps = 5000
        counts = np.array([len(split_thinning(simulate_arrivals(r, rng), 0.5, rng)[0]) for _ in range(reps)])
        mean = 0.5 * r.total
        assert abs(counts.mean() - mean) < 3 * math.sqrt(mean / reps)
        assert counts.var(ddof=1) == pytest.approx(mean, rel=0.06)

    @given(st.floats(0.0, 1.0), st.integers(0, 2**32 - 1))
    def test_superpose_round_trip(self, p, seed):
        rng = np.random.default_rng(seed)
        seq = simulate_arrivals(RateFunction.constant(3.0, 10.0), rng)
        a, b = split_thinning(seq, p, rng)
        np.testing.assert_array_equal(superpose(a, b).times, seq.times)

    def test_bad_probability(self):
        with pytest.raises(ValueError):
            split_thinning(ArrivalSequence(np.array([0.5]), 1.0), 1.5, np.random.default_rng(0))


class TestEstimate:
    def test_single_episode(self):
        r = estimate_rate([ArrivalSequence(np.array([0.1, 0.2, 0.5, 0.9]), 1.0)], bins=1)
        np.testing.assert_allclose(r.knot_rates, 4.0)

    def test_average_of_two(self):
        eps = [ArrivalSequence(np.array([0.1, 0.2]), 1.0), ArrivalSequence(np.linspace(0.1, 0.9, 6), 1.0)]
        r = estimate_rate(eps, bins=1)
        np.testing.assert_allclose(r.intensity(np.linspace(0, 1, 5)), 4.0)

    def test_empty_list(self):
        with pytest.raises(ValueError):
            estimate_rate([], bins=4)

    def test_piecewise_constant_preserves_mass(self):
        rng = np.random.default_rng(9)
        truth = sinusoidal_rate(0.2, 0.8, 500.0)
        eps = [simulate_arrivals(truth, rng) for _ in range(37)]
        r = estimate_rate(eps, bins=13, piecewise_constant=True)
        mean_count = sum(len(e) for e in eps) / len(eps)
        assert abs(r.total - mean_count) <= 1e-9 * mean_count

    def test_recovers_sinusoid(self):
        rng = np.random.default_rng(21)
        truth = sinusoidal_rate(2.0, 0.7, 500.0)
        eps = [simulate_arrivals(truth, rng) for _ in range(200)]
        est = estimate_rate(eps, bins=24)
        t = np.linspace(0.0, truth.tau, 20001)
        diff = np.abs(est.intensity(t) - truth.intensity(t))
        l1 = np.sum(0.5 * (diff[1:] + diff[:-1]) * np.diff(t))
        assert l1 < 0.1 * truth.total


class TestIO:
    def test_json_round_trip(self, tmp_path):
        r = RateFunction([0.0, 2.0, 5.0], [1.0, 3.0, 0.5], step=True)
        save_rate(r, tmp_path / "rate.json")
        data = json.loads((tmp_path / "rate.json").read_text())
        assert {"tau", "knot_times", "knot_rates"} <= set(data)
        back = load_rate(tmp_path / "rate.json")
        np.testing.assert_array_equal(back.knot_times, r.knot_times)
        assert back.step and back.digest() == r.digest()

    def test_read_episode_times(self, tmp_path):
        p = tmp_path / "ep.csv"
        p.write_text("episode_id,t_seconds,score\n2,5.0,0.1\n1,3.0,0.2\n1,1.0,0.3\n10,2.0,0.4\n")
        eps = read_episode_times(p, tau=10.0)
        assert [list(e.times) for e in eps] == [[1.0, 3.0], [5.0], [2.0]]
