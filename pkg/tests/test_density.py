import math

import numpy as np
import pytest

from avrisk.density import (DIURNAL_PEDESTRIANS, ENV_FIELDS, PARAM_FIELDS,
                            KdeModel, NaturalisticDataset, ParamSampler,
                            SampleRejectionError, draw_environment_samples,
                            fit_kde_mlcv, params_from_row, ped_speed_params,
                            synthesize_dataset)
from avrisk.scenario import ScenarioParams


# -- independent oracles (kept deliberately naive) ---------------------------

def loo_loglik_bruteforce(x: np.ndarray, scale: float) -> float:
    """Leave-one-out log likelihood of the product-Gaussian KDE, computed
    point by point with explicit loops."""
    n, d = x.shape
    h = scale * x.std(axis=0, ddof=1)
    total = 0.0
    for i in range(n):
        dens = 0.0
        for j in range(n):
            if j == i:
                continue
            prod = 1.0
            for k in range(d):
                z = (x[i, k] - x[j, k]) / h[k]
                prod *= math.exp(-0.5 * z * z) / (h[k] * math.sqrt(2 * math.pi))
            dens += prod
        total += math.log(dens / (n - 1))
    return total


def logpdf_bruteforce(support: np.ndarray, h: np.ndarray,
                      q: np.ndarray) -> float:
    dens = 0.0
    for j in range(support.shape[0]):
        prod = 1.0
        for k in range(support.shape[1]):
            z = (q[k] - support[j, k]) / h[k]
            prod *= math.exp(-0.5 * z * z) / (h[k] * math.sqrt(2 * math.pi))
        dens += prod
    return math.log(dens / support.shape[0])


# -- fixtures ----------------------------------------------------------------

@pytest.fixture(scope="module")
def dataset():
    return synthesize_dataset(2400, seed=7)


@pytest.fixture(scope="module")
def env_samples(dataset):
    return draw_environment_samples(dataset, 400, seed=11)


@pytest.fixture(scope="module")
def kde(env_samples):
    return fit_kde_mlcv(env_samples)


@pytest.fixture(scope="module")
def sampler(kde):
    return ParamSampler(kde=kde)


# -- synthetic dataset ---------------------------------------------------------

class TestSynthesizeDataset:
    def test_row_count_default_scale(self):
        ds = synthesize_dataset(74460, seed=1)
        assert ds.n_rows == 74460

    def test_deterministic(self):
        a = synthesize_dataset(480, seed=3)
        b = synthesize_dataset(480, seed=3)
        for name in ("hour", "w_fog", "w_wind", "w_rain", "ped_count"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_seed_changes_output(self):
        a = synthesize_dataset(480, seed=3)
        b = synthesize_dataset(480, seed=4)
        assert not np.array_equal(a.ped_count, b.ped_count)

    def test_zero_inflation(self, dataset):
        assert (dataset.w_rain == 0.0).mean() >= 0.7
        assert (dataset.w_fog == 0.0).mean() >= 0.7

    def test_value_ranges(self, dataset):
        for name in ("w_fog", "w_wind", "w_rain"):
            w = getattr(dataset, name)
            assert np.all(w >= 0.0) and np.all(w <= 1.0)
        assert np.all(dataset.ped_count >= 0)
        np.testing.assert_array_equal(dataset.hour_of_day,
                                      dataset.hour % 24)

    def test_diurnal_profile(self, dataset):
        hod = dataset.hour_of_day
        midday = dataset.ped_count[(hod >= 11) & (hod <= 13)].mean()
        night = dataset.ped_count[(hod >= 1) & (hod <= 3)].mean()
        assert midday > 10 * night

    def test_rain_suppresses_exposure(self, dataset):
        hod = dataset.hour_of_day
        midday = (hod >= 10) & (hod <= 15)
        rainy = midday & (dataset.w_rain > 0.5)
        dry = midday & (dataset.w_rain == 0.0)
        assert rainy.sum() >= 10
        assert dataset.ped_count[rainy].mean() < dataset.ped_count[dry].mean()

    def test_rain_autocorrelated(self, dataset):
        # Rainy hours cluster into episodes: the chance that the next hour
        # is also wet is much higher than the marginal wet fraction.
        wet = dataset.w_rain > 0.0
        wet_frac = wet.mean()
        cont = wet[1:][wet[:-1]].mean()
        assert cont > 3 * wet_frac

    def test_too_short_raises(self):
        with pytest.raises(ValueError):
            synthesize_dataset(23, seed=0)

    def test_csv_round_trip(self, dataset, tmp_path):
        path = str(tmp_path / "ds.csv")
        dataset.to_csv(path)
        back = NaturalisticDataset.from_csv(path)
        np.testing.assert_array_equal(back.hour, dataset.hour)
        np.testing.assert_array_equal(back.ped_count, dataset.ped_count)
        for name in ("w_fog", "w_wind", "w_rain"):
            np.testing.assert_array_equal(getattr(back, name),
                                          getattr(dataset, name))


class TestDrawEnvironmentSamples:
    def test_shape_and_ranges(self, dataset, env_samples):
        assert env_samples.shape == (400, 4)
        assert np.all(env_samples[:, 0] >= 0.0)
        assert np.all(env_samples[:, 0] < 24.0)
        assert np.all(env_samples[:, 1:] >= 0.0)
        assert np.all(env_samples[:, 1:] <= 1.0)

    def test_deterministic(self, dataset):
        a = draw_environment_samples(dataset, 200, seed=5)
        b = draw_environment_samples(dataset, 200, seed=5)
        np.testing.assert_array_equal(a, b)

    def test_exposure_weighting(self, dataset):
        draws = draw_environment_samples(dataset, 20_000, seed=9)
        hist = np.histogram(draws[:, 0], bins=24, range=(0, 24))[0]
        profile = np.zeros(24)
        for h in range(24):
            profile[h] = dataset.ped_count[dataset.hour_of_day == h].sum()
        corr = np.corrcoef(hist, profile)[0, 1]
        assert corr > 0.99

    def test_no_exposure_raises(self):
        ds = NaturalisticDataset(hour=np.arange(24),
                                 w_fog=np.zeros(24), w_wind=np.zeros(24),
                                 w_rain=np.zeros(24),
                                 ped_count=np.zeros(24, dtype=np.int64))
        with pytest.raises(ValueError):
            draw_environment_samples(ds, 10, seed=0)


# -- KDE -----------------------------------------------------------------------

class TestFitKdeMlcv:
    def test_matches_bruteforce_loo(self):
        rng = np.random.default_rng(31)
        x = rng.normal(size=(120, 3)) * np.array([1.0, 0.5, 2.0])
        grid = np.array([0.15, 0.3, 0.5, 0.8, 1.2])
        model = fit_kde_mlcv(x, grid=grid)
        oracle = np.array([loo_loglik_bruteforce(x, s) for s in grid])
        np.testing.assert_allclose(model.cv_objectives, oracle, rtol=1e-9)
        assert model.selected_scale == grid[int(np.argmax(oracle))]
        np.testing.assert_allclose(model.bandwidths,
                                   model.selected_scale * x.std(axis=0, ddof=1),
                                   rtol=1e-12)

    def test_two_clusters_avoid_oversmoothing(self):
        rng = np.random.default_rng(8)
        a = rng.normal(0.0, 0.05, size=(80, 2))
        b = rng.normal(10.0, 0.05, size=(80, 2))
        x = np.vstack([a, b])
        model = fit_kde_mlcv(x)
        assert model.selected_scale < model.cv_grid.max()

    def test_normal_data_selects_silverman_order_scale(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=(1000, 2))
        model = fit_kde_mlcv(x)
        d = 2
        silverman = (4.0 / (d + 2)) ** (1.0 / (d + 4)) * 1000 ** (-1.0 / (d + 4))
        assert silverman / 2.5 < model.selected_scale < silverman * 2.5

    def test_degenerate_dimension_gets_floor(self):
        rng = np.random.default_rng(4)
        x = np.column_stack([rng.normal(size=300), np.full(300, 0.25)])
        with pytest.warns(RuntimeWarning):
            model = fit_kde_mlcv(x)
        assert model.degenerate_dims == (1,)
        assert model.bandwidths[1] == 1e-3

    def test_input_validation(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            fit_kde_mlcv(rng.normal(size=(50, 2)))
        with pytest.raises(ValueError):
            fit_kde_mlcv(rng.normal(size=(200, 2)), grid=np.array([0.5]))
        with pytest.raises(ValueError):
            fit_kde_mlcv(rng.normal(size=(200, 2)), grid=np.array([-1.0, 0.5]))


class TestKdeLogpdf:
    def test_single_point_peak(self):
        h = np.array([0.5, 2.0])
        model = KdeModel(support=np.array([[1.0, -3.0]]), bandwidths=h,
                         selected_scale=1.0)
        expected = sum(math.log(1.0 / (hk * math.sqrt(2 * math.pi)))
                       for hk in h)
        assert model.logpdf(np.array([1.0, -3.0]))[0] == pytest.approx(
            expected, rel=1e-12)

    def test_symmetric_two_point_model(self):
        model = KdeModel(support=np.array([[0.0, 0.0], [2.0, 2.0]]),
                         bandwidths=np.array([1.0, 1.0]), selected_scale=1.0)
        vals = model.logpdf(np.array([[0.0, 0.0], [2.0, 2.0]]))
        assert vals[0] == pytest.approx(vals[1], rel=1e-14)

    def test_matches_bruteforce_sum(self):
        rng = np.random.default_rng(77)
        support = rng.normal(size=(50, 4))
        h = np.array([0.3, 0.7, 1.1, 0.4])
        model = KdeModel(support=support, bandwidths=h, selected_scale=1.0)
        queries = rng.normal(size=(25, 4))
        got = model.logpdf(queries)
        for i, q in enumerate(queries):
            assert got[i] == pytest.approx(
                logpdf_bruteforce(support, h, q), rel=1e-12)

    def test_dimension_mismatch_raises(self, kde):
        with pytest.raises(ValueError):
            kde.logpdf(np.zeros((3, kde.n_dims + 1)))

    def test_json_round_trip(self, kde, tmp_path):
        path = str(tmp_path / "kde.json")
        kde.to_json(path)
        back = KdeModel.from_json(path)
        np.testing.assert_array_equal(back.support, kde.support)
        np.testing.assert_array_equal(back.bandwidths, kde.bandwidths)
        q = kde.support[:10] + 0.01
        np.testing.assert_array_equal(back.logpdf(q), kde.logpdf(q))


# -- conditional actor models ----------------------------------------------------

class TestPedSpeedParams:
    def test_endpoints(self):
        assert ped_speed_params(0.0) == (1.40, 0.15)
        assert ped_speed_params(1.0) == (pytest.approx(1.65), pytest.approx(0.20))

    def test_midpoint_linear(self):
        mean, std = ped_speed_params(0.5)
        assert mean == pytest.approx(1.525, rel=1e-12)
        assert std == pytest.approx(0.175, rel=1e-12)

    def test_dry_draw_moments(self):
        # Rain-free dataset: v_ped should follow Normal(1.40, 0.15)
        # (truncation at 0.2 m/s is 8 sigma out, negligible).
        ds = NaturalisticDataset(hour=np.arange(48),
                                 w_fog=np.zeros(48), w_wind=np.zeros(48),
                                 w_rain=np.zeros(48),
                                 ped_count=np.full(48, 5, dtype=np.int64))
        s = ParamSampler(dataset=ds, mode="database")
        v_ped = s.sample_batch(21, 10_000)[:, 6]
        assert abs(v_ped.mean() - 1.40) < 5 * 0.15 / math.sqrt(10_000)
        assert abs(v_ped.std() - 0.15) < 0.01


# -- full scenario sampler --------------------------------------------------------

class TestParamSampler:
    def test_construction_validation(self, kde, dataset):
        with pytest.raises(ValueError):
            ParamSampler(kde=kde, mode="junk")
        with pytest.raises(ValueError):
            ParamSampler(mode="kde")
        with pytest.raises(ValueError):
            ParamSampler(mode="database")

    def test_sample_returns_valid_params(self, sampler):
        for seed in range(100):
            p = sampler.sample(seed)
            assert isinstance(p, ScenarioParams)

    def test_sample_deterministic(self, sampler):
        assert sampler.sample(42) == sampler.sample(42)
        assert sampler.sample(42) != sampler.sample(43)

    def test_batch_deterministic(self, sampler):
        np.testing.assert_array_equal(sampler.sample_batch(5, 300),
                                      sampler.sample_batch(5, 300))

    def test_batch_rows_are_valid_points(self, sampler):
        X = sampler.sample_batch(13, 10_000)
        assert X.shape == (10_000, 7)
        assert np.all(X[:, 0] >= 0) and np.all(X[:, 0] < 24)
        assert np.all(X[:, 1:4] >= 0) and np.all(X[:, 1:4] <= 1)
        assert np.all(X[:, 4] > 0) and np.all(X[:, 4] <= 50.0)
        assert np.all(X[:, 5] > 0)
        assert np.all(X[:, 6] >= 0.2)
        for row in X[:50]:
            params_from_row(row)

    def test_mean_v_av(self, sampler):
        X = sampler.sample_batch(99, 10_000)
        assert abs(X[:, 5].mean() - 6.0) < 0.01

    def test_field_names_order(self, sampler):
        assert sampler.field_names == PARAM_FIELDS
        assert PARAM_FIELDS[:4] == ENV_FIELDS

    def test_modes_agree_on_t_day_marginal(self, dataset, kde):
        k = ParamSampler(kde=kde)
        d = ParamSampler(dataset=dataset, mode="database")
        tk = k.sample_batch(7, 100_000)[:, 0]
        td = d.sample_batch(7, 100_000)[:, 0]
        hk = np.histogram(tk, bins=24, range=(0, 24))[0]
        hd = np.histogram(td, bins=24, range=(0, 24))[0]
        assert np.corrcoef(hk, hd)[0, 1] > 0.9

    def test_rejection_error(self, kde):
        # max_d0 far below any reachable gap * v_av.
        s = ParamSampler(kde=kde, max_d0=0.05, max_rejections=50)
        with pytest.raises(SampleRejectionError):
            s.sample(0)
        with pytest.raises(SampleRejectionError):
            s.sample_batch(0, 16)

    def test_params_from_row_matches_fields(self):
        row = np.array([12.5, 0.1, 0.2, 0.3, 25.0, 6.1, 1.5])
        p = params_from_row(row)
        for i, name in enumerate(PARAM_FIELDS):
            assert getattr(p, name) == row[i]


def test_diurnal_profile_shape():
    arr = np.asarray(DIURNAL_PEDESTRIANS)
    assert arr.shape == (24,)
    assert arr.argmax() == 12
    assert np.all(arr > 0)
