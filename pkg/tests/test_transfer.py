import dataclasses

import numpy as np
import pytest

from avrisk.scenario import ScenarioParams, friction
from avrisk.sim import LoFiParams
from avrisk.transfer import (LOFI_FIELDS, PostTransferModel, TransferConfig,
                             transfer_post, transfer_post_batch)


def _point(**kw):
    base = dict(t_day=12.0, w_fog=0.0, w_wind=0.0, w_rain=0.0,
                d0=20.0, v_av=6.0, v_ped=1.4)
    base.update(kw)
    return ScenarioParams(**base)


class TestTransferPost:
    def test_clear_noon(self):
        lo = transfer_post(_point())
        assert lo.p_detect == pytest.approx(1.0, abs=1e-12)
        assert lo.sigma_noise == 0.03
        assert lo.mu_fric == pytest.approx(0.9, abs=1e-12)

    def test_half_fog(self):
        lo = transfer_post(_point(w_fog=0.5))
        assert lo.p_detect == pytest.approx(1.0 - 0.4 * 0.5, rel=1e-12)

    def test_worst_case_hits_zero_unclamped(self):
        lo = transfer_post(_point(t_day=0.0, w_fog=1.0, w_rain=1.0))
        assert lo.p_detect == pytest.approx(0.0, abs=1e-12)

    def test_geometry_and_speeds_copied(self):
        x = _point(d0=33.0, v_av=5.5, v_ped=2.1)
        lo = transfer_post(x)
        assert (lo.d0, lo.v_av, lo.v_ped) == (33.0, 5.5, 2.1)

    def test_friction_follows_rain(self):
        for w in (0.0, 0.05, 0.4, 1.0):
            assert transfer_post(_point(w_rain=w)).mu_fric == friction(w)

    def test_wind_has_no_image(self):
        assert transfer_post(_point(w_wind=0.0)) == transfer_post(
            _point(w_wind=0.9))

    def test_p_detect_monotone(self):
        base = transfer_post(_point()).p_detect
        assert transfer_post(_point(w_fog=0.3)).p_detect < base
        assert transfer_post(_point(w_rain=0.3)).p_detect < base
        assert transfer_post(_point(t_day=18.0)).p_detect < base
        # Symmetric around noon.
        assert transfer_post(_point(t_day=6.0)).p_detect == pytest.approx(
            transfer_post(_point(t_day=18.0)).p_detect, rel=1e-12)

    def test_deterministic(self):
        x = _point(t_day=19.5, w_fog=0.2, w_rain=0.1)
        assert transfer_post(x) == transfer_post(x)

    def test_clamp_flag(self):
        cfg = TransferConfig(clamp_p_detect=True)
        x = _point(t_day=0.0, w_fog=1.0, w_rain=1.0)
        assert transfer_post(x, cfg).p_detect == 0.0
        # Make the unclamped value negative to see the clamp act.
        hot = TransferConfig(fog_coeff=0.6, clamp_p_detect=True)
        assert transfer_post(x, hot).p_detect == 0.0
        hot_raw = TransferConfig(fog_coeff=0.6)
        assert transfer_post(x, hot_raw).p_detect < 0.0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TransferConfig(fog_coeff=-0.1)
        with pytest.raises(ValueError):
            TransferConfig(sigma_noise_fixed=-0.01)


class TestTransferPostBatch:
    def test_matches_row_wise(self):
        rng = np.random.default_rng(3)
        n = 200
        X = np.column_stack([
            rng.uniform(0, 24, n), rng.uniform(0, 1, n),
            rng.uniform(0, 1, n), rng.uniform(0, 1, n),
            rng.uniform(1, 50, n), rng.uniform(4, 8, n),
            rng.uniform(0.5, 3, n)])
        T = transfer_post_batch(X)
        assert T.shape == (n, 6)
        for i in range(n):
            lo = transfer_post(ScenarioParams(*X[i]))
            np.testing.assert_allclose(
                T[i], [getattr(lo, f) for f in LOFI_FIELDS], rtol=1e-12)

    def test_single_row_input(self):
        x = np.array([12.0, 0.0, 0.0, 0.0, 20.0, 6.0, 1.4])
        T = transfer_post_batch(x)
        assert T.shape == (1, 6)
        assert T[0, 3] == pytest.approx(1.0)

    def test_field_order_matches_lofi_params(self):
        assert LOFI_FIELDS == tuple(
            f.name for f in dataclasses.fields(LoFiParams))


class TestPostTransferModel:
    def test_composition_contract(self):
        captured = {}

        class Stub:
            def event_prob(self, X):
                captured["X"] = np.asarray(X)
                return np.full(len(X), 0.25)

        model = PostTransferModel(Stub())
        X = np.array([[12.0, 0.0, 0.0, 0.0, 20.0, 6.0, 1.4],
                      [20.0, 0.5, 0.3, 0.2, 10.0, 5.0, 2.0]])
        p = model.event_prob(X)
        np.testing.assert_array_equal(p, [0.25, 0.25])
        np.testing.assert_allclose(captured["X"], transfer_post_batch(X),
                                   rtol=1e-15)

    def test_respects_config(self):
        class Stub:
            def event_prob(self, X):
                return np.asarray(X)[:, 3]

        cfg = TransferConfig(diurnal_coeff=0.0)
        X = np.array([[0.0, 0.0, 0.0, 0.0, 20.0, 6.0, 1.4]])
        assert PostTransferModel(Stub(), cfg).event_prob(X)[0] == 1.0
        assert PostTransferModel(Stub()).event_prob(X)[0] == pytest.approx(0.8)
