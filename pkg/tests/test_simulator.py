import numpy as np
import pytest
from scipy import stats

from stockout.choice_model import mixture_prob
from stockout.likelihood import Model, ModelParams, log_likelihood
from stockout.rate_model import RateFamily
from stockout.simulator import (
    ScenarioSpec,
    bakery_like_spec,
    sample_nhpp,
    scenario_one,
    scenario_two,
    simulate_dataset,
    simulate_period,
)

from conftest import CHOICE_KINDS, random_model, random_params


class TestNhpp:
    def test_null_process(self):
        t = sample_nhpp(RateFamily("homogeneous"), [0.0], 10.0, np.random.default_rng(0))
        assert t.size == 0

    def test_homogeneous_count(self):
        fam = RateFamily("homogeneous")
        counts = [sample_nhpp(fam, [2.0], 1000.0, np.random.default_rng(s)).size for s in range(20)]
        assert abs(np.mean(counts) - 2000) <= 4 * np.sqrt(2000)

    def test_sorted_and_inside(self):
        t = sample_nhpp(RateFamily("hill"), [50.0, 2.0, 1.0], 10.0, np.random.default_rng(1))
        assert np.all(np.diff(t) > 0)
        assert t.min() >= 0 and t.max() <= 10.0

    def test_hill_split_matches_mean_function(self):
        fam = RateFamily("hill")
        eta = np.array([50.0, 2.0, 1.0])
        rng = np.random.default_rng(2)
        early = total = 0
        for _ in range(200):
            t = sample_nhpp(fam, eta, 10.0, rng)
            early += np.sum(t <= 1.0)
            total += t.size
        p = fam.integral(eta, 0.0, 1.0) / fam.integral(eta, 0.0, 10.0)
        assert stats.binomtest(int(early), int(total), p).pvalue > 0.01

    def test_exponential_interarrivals(self):
        t = sample_nhpp(RateFamily("homogeneous"), [3.0], 10_000 / 3.0, np.random.default_rng(3))
        gaps = np.diff(np.concatenate([[0.0], t]))
        assert gaps.size > 9000
        assert stats.kstest(gaps, "expon", args=(0, 1 / 3.0)).pvalue > 0.01

    def test_rejects_unbounded_rate(self):
        with pytest.raises(ValueError):
            sample_nhpp(RateFamily("hill"), [5.0, 0.5, 1.0], 10.0, np.random.default_rng(0))


def exogenous(tau=0.75):
    model = Model(1, 3, RateFamily("homogeneous"), "exogenous", 1)
    return ModelParams(model, [[5.0]], [[1.0]], [[0.75, 0.2, 0.05]], [tau])


class TestSimulatePeriod:
    def test_zero_stock(self):
        sim = simulate_period(exogenous(), 0, [0, 0, 0], 10.0, np.random.default_rng(0))
        assert sim.arrivals.size > 0
        assert np.all(sim.choices == 0)
        assert sim.observed.counts.sum() == 0

    def test_single_unit_ranking(self):
        model = Model(1, 2, RateFamily("homogeneous"), "nonparametric", rankings=((1,),))
        params = ModelParams(model, [[5.0]], [[1.0]])
        sim = simulate_period(params, 0, [1, 4], 10.0, np.random.default_rng(1))
        assert sim.choices[0] == 1
        assert np.all(sim.choices[1:] == 0)
        np.testing.assert_array_equal(sim.observed.purchase_times[0], sim.arrivals[:1])

    def test_observed_are_purchases(self):
        sim = simulate_period(exogenous(), 0, [3, 2, 50], 10.0, np.random.default_rng(2))
        for i, t in enumerate(sim.observed.purchase_times, start=1):
            np.testing.assert_array_equal(t, sim.arrivals[sim.choices == i])

    @pytest.mark.parametrize("choice", CHOICE_KINDS)
    def test_stock_feasible(self, choice, rng):
        model = random_model("hill", choice, rng, n_stores=1)
        params = random_params(model, rng)
        for _ in range(30):
            N = rng.integers(0, 6, size=model.n_items)
            obs = simulate_period(params, 0, N, 10.0, rng).observed
            assert np.all(obs.counts <= N)

    def test_choices_follow_current_stock(self):
        sim = simulate_period(exogenous(), 0, [2, 1, 1], 10.0, np.random.default_rng(4))
        left = np.array([2, 1, 1])
        for c in sim.choices:
            if c:
                assert left[c - 1] > 0
                left[c - 1] -= 1

    def test_full_stock_shares(self):
        model = Model(1, 3, RateFamily("homogeneous"), "exogenous", 2)
        params = ModelParams(model, [[200.0]], [[0.4, 0.6]], [[0.75, 0.2, 0.05], [0.3, 0.3, 0.4]], [0.5, 0.9])
        sim = simulate_period(params, 0, [10**6] * 3, 100.0, np.random.default_rng(5))
        pi = mixture_prob([1, 1, 1], params.mixture(0))
        freq = np.bincount(sim.choices, minlength=4) / sim.choices.size
        band = 3 * np.sqrt(pi * (1 - pi) / sim.choices.size) + 1e-12
        assert np.all(np.abs(freq - pi) <= band)

    def test_rejects_bad_stock(self):
        with pytest.raises(ValueError):
            simulate_period(exogenous(), 0, [1, 1], 10.0, np.random.default_rng(0))


class TestLikelihoodConsistency:
    def test_frequencies_rank_like_likelihood(self):
        """Probability of selling out item 1 ranks tau values the way the likelihood does."""
        model = Model(1, 2, RateFamily("homogeneous"), "exogenous", 1)
        grid = [0.1, 0.5, 0.9]
        # reference data: item 2 sells out early, item 1 keeps selling afterwards
        truth = ModelParams(model, [[4.0]], [[1.0]], [[0.5, 0.5]], [0.9])
        rng = np.random.default_rng(6)
        data, _ = simulate_dataset(ScenarioSpec(1, 2, 2.0, 200, "homogeneous", "exogenous", 1, eta=[[4.0]],
                                                phi=[[0.5, 0.5]], tau=[0.9], theta=[[1.0]], stock=[8, 1],
                                                seed=7), truth)
        lik = [log_likelihood(ModelParams(model, [[4.0]], [[1.0]], [[0.5, 0.5]], [t]), data) for t in grid]
        freq = []
        for t in grid:
            p = ModelParams(model, [[4.0]], [[1.0]], [[0.5, 0.5]], [t])
            sold = [simulate_period(p, 0, [8, 1], 2.0, rng).observed.counts[0] for _ in range(2000)]
            freq.append(np.mean(sold))
        observed = np.mean([p.counts[0] for p in data.stores[0].periods])
        closeness = -np.abs(np.array(freq) - observed)
        assert stats.spearmanr(closeness, lik)[0] == pytest.approx(1.0)


class TestScenarios:
    def test_scenario_one(self):
        spec = scenario_one(3, periods=2)
        data, params = simulate_dataset(spec)
        assert data.n_stores == 3 and data.n_items == 3 and data.horizon == 1000.0
        assert np.all((params.eta >= 2) & (params.eta <= 4))
        np.testing.assert_allclose(params.tau, 0.75)
        np.testing.assert_allclose(params.phi, [[0.75, 0.2, 0.05], [0.33, 0.33, 0.34]])
        for store in data.stores:
            for p in store.periods:
                assert np.all((p.initial_stock >= 0) & (p.initial_stock <= 500))

    def test_scenario_two(self):
        spec = scenario_two(periods=2)
        model = spec.model()
        assert model.n_segments == 9
        _, params = simulate_dataset(spec)
        w = dict(zip(model.rankings, params.theta[0]))
        for r in [(1,), (1, 2), (3, 2)]:
            assert w[r] == pytest.approx(1 / 3)
        assert sum(w.values()) == pytest.approx(1.0)

    def test_bakery_like(self):
        data, _ = simulate_dataset(bakery_like_spec(0, periods=20))
        assert data.item_names == ("oatmeal", "double chocolate", "chocolate chip")
        stockouts = sum(int(np.sum(p.counts == p.initial_stock)) for p in data.stores[0].periods)
        assert stockouts > 10

    def test_deterministic(self):
        a, _ = simulate_dataset(scenario_one(5, periods=3))
        b, _ = simulate_dataset(scenario_one(5, periods=3))
        for sa, sb in zip(a.stores, b.stores):
            for pa, pb in zip(sa.periods, sb.periods):
                for ta, tb in zip(pa.purchase_times, pb.purchase_times):
                    np.testing.assert_array_equal(ta, tb)

    def test_dict_round_trip(self, tmp_path):
        spec = scenario_two(periods=3)
        back = ScenarioSpec.from_dict(spec.to_dict())
        a, _ = simulate_dataset(spec)
        b, _ = simulate_dataset(back)
        np.testing.assert_array_equal(a.item_totals(), b.item_totals())

    def test_load_yaml(self, tmp_path):
        path = tmp_path / "s.yaml"
        path.write_text(
            "n_stores: 1\nn_items: 2\nhorizon: 5\nperiods: 3\nrate: homogeneous\nchoice: exogenous\n"
            "eta: [[2.0]]\nphi: [[0.5, 0.5]]\ntau: [0.5]\ntheta: [[1.0]]\nstock: [3, 3]\nseed: 4\n"
        )
        data, _ = simulate_dataset(ScenarioSpec.load(path))
        assert data.period_counts == [3]

    def test_rejects_unknown_keys(self):
        with pytest.raises(ValueError):
            ScenarioSpec.from_dict({**scenario_one().to_dict(), "bogus": 1})
