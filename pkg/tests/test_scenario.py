import math

import numpy as np
import pytest

from avrisk.scenario import (Outcome, PhysicalConstants, ScenarioParams,
                             extended_min_distance, friction,
                             indicator_collision)


class TestScenarioParams:
    def test_valid_point(self):
        p = ScenarioParams(12.0, 0.1, 0.2, 0.3, 25.0, 6.0, 1.5)
        assert p.d0 == 25.0

    @pytest.mark.parametrize("field,value", [
        ("t_day", -0.1), ("t_day", 24.0),
        ("w_fog", -0.01), ("w_fog", 1.01),
        ("w_wind", 2.0), ("w_rain", -1.0),
        ("d0", 0.0), ("d0", 50.5), ("d0", -3.0),
        ("v_av", 0.0), ("v_av", -1.0),
        ("v_ped", 0.0),
    ])
    def test_rejects_out_of_range(self, field, value):
        kw = dict(t_day=12.0, w_fog=0.0, w_wind=0.0, w_rain=0.0,
                  d0=20.0, v_av=6.0, v_ped=1.4)
        kw[field] = value
        with pytest.raises(ValueError):
            ScenarioParams(**kw)

    def test_boundary_values_accepted(self):
        ScenarioParams(0.0, 0.0, 0.0, 0.0, 50.0, 0.1, 0.1)
        ScenarioParams(23.999, 1.0, 1.0, 1.0, 0.001, 30.0, 3.0)


class TestPhysicalConstants:
    def test_defaults(self):
        c = PhysicalConstants()
        assert c.g == 9.81
        assert c.av_length == 4.5
        assert c.av_width == 2.0
        assert c.ped_radius == 0.3

    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            PhysicalConstants(g=0.0)
        with pytest.raises(ValueError):
            PhysicalConstants(ped_radius=-0.3)


class TestFriction:
    def test_dry_road(self):
        assert friction(0.0) == pytest.approx(0.9, abs=1e-12)

    def test_full_rain_converges_to_half(self):
        assert friction(1.0) == pytest.approx(0.5, abs=1e-6)

    def test_light_rain(self):
        # Independent evaluation of 0.5 + 0.4 e^{-20 w} at w = 0.05.
        expected = 0.5 + 0.4 * math.exp(-1.0)
        assert expected == pytest.approx(0.64715, abs=5e-6)
        assert friction(0.05) == pytest.approx(expected, rel=1e-12)

    def test_strictly_decreasing_and_bounded(self):
        w = np.linspace(0.0, 1.0, 501)
        mu = friction(w)
        assert np.all(np.diff(mu) < 0.0)
        assert np.all(mu > 0.5)
        assert np.all(mu <= 0.9)

    def test_array_matches_scalar(self):
        w = np.array([0.0, 0.05, 0.3, 1.0])
        np.testing.assert_allclose(friction(w),
                                   [friction(float(x)) for x in w],
                                   rtol=1e-15)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            friction(-0.1)
        with pytest.raises(ValueError):
            friction(1.1)
        with pytest.raises(ValueError):
            friction(np.array([0.2, 1.2]))


class TestExtendedMinDistance:
    def test_pass_through_branch(self):
        assert extended_min_distance(1.2, False, 0.0, 0.9) == 1.2

    def test_zero_speed_contact(self):
        assert extended_min_distance(0.0, True, 0.0, 0.9) == 0.0

    def test_collision_braking_distance(self):
        # -v^2 / (2 g mu) evaluated independently.
        expected = -25.0 / (2.0 * 9.81 * 0.9)
        assert expected == pytest.approx(-1.4158, abs=5e-5)
        assert extended_min_distance(0.0, True, 5.0, 0.9) == pytest.approx(
            expected, rel=1e-12)

    def test_continuous_across_boundary(self):
        # As v_av_col -> 0+ the collision branch approaches the
        # non-collision branch's limit d_min -> 0+.
        for v in (1e-3, 1e-6, 1e-9):
            assert abs(extended_min_distance(0.0, True, v, 0.7)) < 1e-7
        assert extended_min_distance(0.0, False, 0.0, 0.7) == 0.0

    def test_monotone_in_collision_speed(self):
        vals = [extended_min_distance(0.0, True, v, 0.6)
                for v in (1.0, 2.0, 4.0, 8.0)]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            extended_min_distance(0.0, True, 5.0, 0.0)
        with pytest.raises(ValueError):
            extended_min_distance(0.0, True, 5.0, -0.9)
        with pytest.raises(ValueError):
            extended_min_distance(1.0, False, 0.0, 0.9, g=0.0)
        with pytest.raises(ValueError):
            extended_min_distance(-0.5, False, 0.0, 0.9)
        with pytest.raises(ValueError):
            extended_min_distance(0.0, True, -1.0, 0.9)


class TestOutcome:
    def test_collision_outcome(self):
        o = Outcome(d_min_star=-1.4, collided=True, v_av_col=5.0, n_frames=90)
        assert indicator_collision(o) == 1

    def test_free_outcome(self):
        o = Outcome(d_min_star=3.0, collided=False, v_av_col=0.0, n_frames=90)
        assert indicator_collision(o) == 0

    def test_grazing_outcome_not_a_collision(self):
        o = Outcome(d_min_star=0.0, collided=False, v_av_col=0.0, n_frames=50)
        assert indicator_collision(o) == 0

    def test_cross_field_validation(self):
        with pytest.raises(ValueError):
            Outcome(-1.0, True, 0.0, 10)     # collision needs speed
        with pytest.raises(ValueError):
            Outcome(0.5, True, 5.0, 10)      # collision needs d* < 0
        with pytest.raises(ValueError):
            Outcome(-0.5, False, 0.0, 10)    # free run needs d* >= 0
        with pytest.raises(ValueError):
            Outcome(0.5, False, 2.0, 10)     # free run needs zero speed
        with pytest.raises(ValueError):
            Outcome(0.5, False, 0.0, 0)      # at least one frame

    def test_indicator_matches_threshold(self):
        # J = 1 exactly when d*_min < 0, for any valid Outcome.
        for o in (Outcome(-0.01, True, 0.5, 5),
                  Outcome(0.0, False, 0.0, 5),
                  Outcome(0.01, False, 0.0, 5)):
            assert indicator_collision(o) == (1 if o.d_min_star < 0 else 0)
