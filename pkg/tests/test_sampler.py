import numpy as np
import pytest

from stockout.domain import Dataset, StoreData, TimePeriod
from stockout.likelihood import Hyperparameters, LikelihoodEvaluator, Model, ModelParams, transform
from stockout.rate_model import RateFamily
from stockout.sampler import (
    DegenerateVarianceError,
    PosteriorSamples,
    SamplerConfig,
    align_segments,
    gelman_rubin,
    holdout_perplexity,
    log_posterior_prob,
    map_estimate,
    permute_segments,
    run_chain,
    run_chains,
    sgrld_step,
    step_size,
    tune_schedule,
)
from stockout.simulator import scenario_one, simulate_dataset

from conftest import random_model, random_params, simulate_data


def poisson_data(rng, c=3.0, periods=6, horizon=2.0):
    per = []
    for _ in range(periods):
        m = rng.poisson(c * horizon)
        per.append(TimePeriod((np.sort(rng.uniform(0, horizon, size=m)),), np.array([m + 5])))
    return Dataset((StoreData("1", tuple(per)),), horizon, 1)


def one_item_model():
    return Model(1, 1, RateFamily("homogeneous"), "mnl", 1, mnl_tau=0.0)


class TestStepSize:
    def test_start(self):
        assert step_size(SamplerConfig(a=0.01), 0) == pytest.approx(0.01)

    def test_example(self):
        assert step_size(SamplerConfig(a=0.01, b=1000, c=0.6), 1000) == pytest.approx(0.006598, abs=1e-6)

    def test_decreasing(self):
        eps = step_size(SamplerConfig(a=0.01), np.arange(100))
        assert np.all(np.diff(eps) < 0)

    def test_relative_scale(self):
        cfg = SamplerConfig(a_rel=2.0)
        assert step_size(cfg, 0, n_purchases=400) == pytest.approx(0.005)

    def test_rejects_bad_constants(self):
        with pytest.raises(ValueError):
            SamplerConfig(a=-1.0)
        with pytest.raises(ValueError):
            SamplerConfig(c=0.0)
        with pytest.raises(ValueError):
            SamplerConfig(burn_in=1.0)


class TestSgrldStep:
    def test_metric_drift(self):
        out = sgrld_step(np.array([1.0]), np.array([0.0]), 0.1, noise=np.zeros(1))
        assert out[0] == pytest.approx(1.05)

    def test_mirroring(self):
        # drift + noise lands at -0.2
        z = np.array([0.1])
        eps = 0.04
        noise = (-0.2 - 0.1 - 0.5 * eps) / np.sqrt(0.1 * eps)
        out = sgrld_step(z, np.zeros(1), eps, noise=np.array([noise]))
        assert out[0] == pytest.approx(0.2)

    def test_reflection_in_box(self):
        eps = 0.01
        z = np.array([9.9])
        noise = (10.3 - 9.9 - 0.5 * eps) / np.sqrt(9.9 * eps)
        out = sgrld_step(z, np.zeros(1), eps, noise=np.array([noise]), lower=[1.0], upper=[10.0])
        assert out[0] == pytest.approx(9.7)

    def test_noise_scale(self):
        rng = np.random.default_rng(11)
        eps = 0.01
        z = np.ones(100_000)
        out = sgrld_step(z, np.zeros_like(z), eps, rng)
        sd = out.std()
        # standard error of a sample SD is about sd / sqrt(2N)
        assert abs(sd - np.sqrt(eps)) <= 3 * np.sqrt(eps) / np.sqrt(2 * z.size)

    def test_positivity(self):
        rng = np.random.default_rng(5)
        z = np.full(10_000, 1e-3)
        for _ in range(20):
            z = sgrld_step(z, rng.normal(0, 100, size=z.size), 0.5, rng)
            assert np.all(z > 0)


class TestMap:
    def test_homogeneous_rate(self):
        rng = np.random.default_rng(1)
        data = poisson_data(rng)
        model = one_item_model()
        cfg = SamplerConfig(hyper=Hyperparameters(eta_bounds=[[0.01, 50.0]]), map_starts=1)
        res = map_estimate(data, model, cfg, rng)
        m = data.total_purchases
        E = data.horizon * len(data.stores[0].periods)
        assert res.state[0] == pytest.approx(m / E, rel=1e-6)

    def test_stationary(self):
        rng = np.random.default_rng(2)
        data = poisson_data(rng)
        model = one_item_model()
        cfg = SamplerConfig(hyper=Hyperparameters(eta_bounds=[[0.01, 50.0]]), map_starts=1)
        res = map_estimate(data, model, cfg, rng)
        ev = LikelihoodEvaluator(model, data, cfg.hyper)
        g = ev.log_posterior_grad(res.state).gradient
        assert abs(g[0]) <= 1e-6

    def test_beats_truth(self):
        spec = scenario_one(0, periods=6)
        data, truth = simulate_dataset(spec)
        model = spec.model()
        cfg = SamplerConfig(seed=0)
        ev = LikelihoodEvaluator(model, data, cfg.hyper)
        res = map_estimate(ev, model, cfg)
        assert res.log_posterior >= log_posterior_prob(ev, truth)

    def test_deterministic(self, rng):
        model = random_model("homogeneous", "exogenous", rng, n_stores=1)
        data = simulate_data(random_params(model, rng), 4, rng)
        cfg = SamplerConfig(map_starts=1)
        a = map_estimate(data, model, cfg, np.random.default_rng(3))
        b = map_estimate(data, model, cfg, np.random.default_rng(3))
        np.testing.assert_array_equal(a.state, b.state)


class TestChains:
    def _setup(self, rng):
        model = random_model("homogeneous", "exogenous", rng, n_stores=1)
        data = simulate_data(random_params(model, rng), 6, rng)
        return model, data

    def test_bit_reproducible(self, rng):
        model, data = self._setup(rng)
        cfg = SamplerConfig(iterations=60, chains=2, seed=4, map_starts=1)
        a = run_chains(data, model, cfg)
        b = run_chains(data, model, cfg)
        np.testing.assert_array_equal(a.z, b.z)

    def test_same_seed_same_chain(self, rng):
        model, data = self._setup(rng)
        ev = LikelihoodEvaluator(model, data)
        cfg = SamplerConfig(iterations=40, map_starts=1)
        np.testing.assert_array_equal(run_chain(ev, cfg, 9).samples, run_chain(ev, cfg, 9).samples)

    def test_burn_in_and_shapes(self, rng):
        model, data = self._setup(rng)
        cfg = SamplerConfig(iterations=50, chains=2, burn_in=0.4, map_starts=1)
        post = run_chains(data, model, cfg)
        assert post.n_chains == 2 and post.n_draws == 30
        np.testing.assert_array_equal(post.iterations, np.arange(20, 50))
        np.testing.assert_allclose(post.theta.sum(axis=-1), 1.0)
        np.testing.assert_allclose(post.phi.sum(axis=-1), 1.0)
        assert np.all((post.tau >= 0) & (post.tau <= 1))
        assert set(post.rhat) == set(post.columns()[0])

    def test_parallel_matches_serial(self, rng):
        model, data = self._setup(rng)
        cfg = SamplerConfig(iterations=30, chains=2, map_starts=1)
        a = run_chains(data, model, cfg)
        b = run_chains(data, model, SamplerConfig(iterations=30, chains=2, map_starts=1, n_jobs=2))
        np.testing.assert_array_equal(a.z, b.z)

    def test_csv_round_trip(self, rng, tmp_path):
        model, data = self._setup(rng)
        post = run_chains(data, model, SamplerConfig(iterations=20, chains=2, map_starts=1))
        path = tmp_path / "samples.csv"
        post.write_csv(path, {"seed": 0})
        back = PosteriorSamples.read_csv(path, model)
        np.testing.assert_array_equal(back.eta, post.eta)
        np.testing.assert_array_equal(back.phi, post.phi)
        np.testing.assert_array_equal(back.tau, post.tau)
        np.testing.assert_array_equal(back.iterations, post.iterations)


class TestAlignment:
    def test_undoes_permutation(self, rng):
        model = random_model("homogeneous", "exogenous", rng, n_stores=2, n_segments=3)
        z = np.stack([np.stack([transform(random_params(model, rng))] * 4)])
        z = np.concatenate([z, permute_segments(z, model, [2, 0, 1])])
        out = align_segments(z, model)
        np.testing.assert_allclose(out[1], out[0])


class TestGelmanRubin:
    def test_example(self):
        assert gelman_rubin([[1, 2], [1, 2]]) == pytest.approx(np.sqrt(0.5))

    def test_degenerate(self):
        with pytest.raises(DegenerateVarianceError):
            gelman_rubin([[0.0] * 5, [10.0] * 5])

    def test_iid_chains(self):
        x = np.random.default_rng(0).normal(size=(3, 10_000))
        assert gelman_rubin(x) == pytest.approx(1.0, abs=0.05)

    def test_separated_chains(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(3, 500)) + np.array([[0.0], [5.0], [10.0]])
        assert gelman_rubin(x) > 1.1

    def test_rejects_single_chain(self):
        with pytest.raises(ValueError):
            gelman_rubin([[1.0, 2.0, 3.0]])


class TestPerplexity:
    def test_point_mass(self):
        rng = np.random.default_rng(8)
        c = 3.0
        data = poisson_data(rng, c=c)
        model = one_item_model()
        post = PosteriorSamples.point(ModelParams(model, [[c]], [[1.0]], [[1.0]]))
        m = data.total_purchases
        E = data.horizon * len(data.stores[0].periods)
        expected = np.exp(-(m * np.log(c) - c * E) / m)
        assert holdout_perplexity(post, data) == pytest.approx(expected, rel=1e-12)

    def test_duplicate_invariance(self):
        rng = np.random.default_rng(9)
        data = poisson_data(rng)
        doubled = Dataset((StoreData("1", data.stores[0].periods * 2),), data.horizon, 1)
        post = PosteriorSamples.point(ModelParams(one_item_model(), [[2.0]], [[1.0]], [[1.0]]))
        assert holdout_perplexity(post, doubled) == pytest.approx(holdout_perplexity(post, data), rel=1e-12)

    def test_rejects_empty_holdout(self):
        data = Dataset((StoreData("1", (TimePeriod((np.empty(0),), np.array([3])),)),), 1.0, 1)
        post = PosteriorSamples.point(ModelParams(one_item_model(), [[2.0]], [[1.0]], [[1.0]]))
        with pytest.raises(ValueError):
            holdout_perplexity(post, data)

    def test_true_tau_preferred(self):
        """Across seeds, the true substitution rate has the lowest mean perplexity on a tau grid."""
        model = Model(1, 3, RateFamily("homogeneous"), "exogenous", 1)
        grid = [0.1, 0.5, 0.9]
        scores = np.zeros(len(grid))
        for seed in range(5):
            rng = np.random.default_rng(seed)
            truth = ModelParams(model, [[5.0]], [[1.0]], [[0.5, 0.3, 0.2]], [0.5])
            data = simulate_data(truth, 40, rng, stock_high=6)
            for j, tau in enumerate(grid):
                p = ModelParams(model, [[5.0]], [[1.0]], [[0.5, 0.3, 0.2]], [tau])
                scores[j] += holdout_perplexity(PosteriorSamples.point(p), data)
        assert np.argmin(scores) == 1


class TestTuning:
    def test_grid_search_picks_finite_best(self, rng):
        model = random_model("homogeneous", "exogenous", rng, n_stores=1)
        params = random_params(model, rng)
        train = simulate_data(params, 6, rng)
        hold = simulate_data(params, 3, rng)
        cfg = SamplerConfig(iterations=20, chains=2, map_starts=1)
        grid = {"a_rel": (0.5, 1.0), "b": (100.0,), "c": (0.6,)}
        best, table = tune_schedule(train, hold, model, cfg, grid, max_draws=10)
        assert len(table) == 2
        assert best.a_rel in (0.5, 1.0)
        assert np.isfinite(min(r[3] for r in table))
