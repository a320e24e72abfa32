"""Scenario parameterization and criticality measures for the crossing scenario.

An automated vehicle (AV) drives along a straight lane while a pedestrian,
initially off the road, walks laterally toward and across the lane.  A
scenario is fully described by :class:`ScenarioParams`; running it in one of
the simulators yields an :class:`Outcome` whose scalar criticality is the
extended minimum distance ``d_min_star``: the plain minimum separation for
collision-free runs, and for collisions the (negative) braking distance that
would still have been needed at impact speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

__all__ = [
    "PhysicalConstants",
    "ScenarioParams",
    "Outcome",
    "friction",
    "extended_min_distance",
    "indicator_collision",
]


@dataclass(frozen=True)
class PhysicalConstants:
    """Fixed geometry and physics shared by all simulators."""

    g: float = 9.81                  # gravitational acceleration, m/s^2
    av_length: float = 4.5           # m
    av_width: float = 2.0            # m
    ped_radius: float = 0.3          # m
    lateral_start_offset: float = 4.0  # pedestrian start, m from lane center
    lane_width: float = 3.5          # m

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) <= 0.0:
                raise ValueError(f"{f.name} must be strictly positive")


@dataclass(frozen=True)
class ScenarioParams:
    """One point x of the scenario space.

    t_day is the time of day in hours, w_* are unitless severity weights in
    [0, 1], d0 is the pedestrian's longitudinal start distance ahead of the
    AV at the triggering point, v_av the AV target speed and v_ped the
    pedestrian walking speed.
    """

    t_day: float
    w_fog: float
    w_wind: float
    w_rain: float
    d0: float
    v_av: float
    v_ped: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.t_day < 24.0:
            raise ValueError("t_day must lie in [0, 24)")
        for name in ("w_fog", "w_wind", "w_rain"):
            w = getattr(self, name)
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0.0 < self.d0 <= 50.0:
            raise ValueError("d0 must lie in (0, 50]")
        if self.v_av <= 0.0:
            raise ValueError("v_av must be strictly positive")
        if self.v_ped <= 0.0:
            raise ValueError("v_ped must be strictly positive")


@dataclass(frozen=True)
class Outcome:
    """Result of one simulator run.

    ``collided`` is true iff the separation reached zero while the AV was
    still moving; a touch at standstill counts as a graze with
    ``d_min_star == 0``.  For collisions ``v_av_col`` is the AV speed at
    first contact and ``d_min_star`` is strictly negative.
    """

    d_min_star: float
    collided: bool
    v_av_col: float
    n_frames: int

    def __post_init__(self) -> None:
        if self.collided:
            if self.v_av_col <= 0.0:
                raise ValueError("a collision requires v_av_col > 0")
            if self.d_min_star >= 0.0:
                raise ValueError("a collision requires d_min_star < 0")
        else:
            if self.v_av_col != 0.0:
                raise ValueError("v_av_col must be 0 for collision-free runs")
            if self.d_min_star < 0.0:
                raise ValueError("d_min_star must be >= 0 without collision")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")


def friction(w_rain, *, dry: float = 0.5, wet_gain: float = 0.4,
             decay: float = 20.0):
    """Tire-road friction coefficient as a function of rain severity.

    mu = dry + wet_gain * exp(-decay * w_rain); 0.9 on a dry road, dropping
    steeply toward 0.5 once any appreciable rain is present.  Accepts a
    scalar (returns float) or an array (returns an array).
    """
    if np.ndim(w_rain) == 0:
        if not 0.0 <= w_rain <= 1.0:
            raise ValueError("w_rain must lie in [0, 1]")
        return dry + wet_gain * math.exp(-decay * w_rain)
    w = np.asarray(w_rain, dtype=float)
    if np.any(w < 0.0) or np.any(w > 1.0):
        raise ValueError("w_rain must lie in [0, 1]")
    return dry + wet_gain * np.exp(-decay * w)


def extended_min_distance(d_min: float, collided: bool, v_av_col: float,
                          mu_fric: float, g: float = 9.81) -> float:
    """Extended minimum distance d*_min.

    Collision-free runs keep their minimum separation d_min >= 0.  For
    collisions the measure continues smoothly below zero as the negative of
    the braking distance still required at the collision speed:
    -v_av_col^2 / (2 g mu).  A grazing contact (d_min == 0 at standstill)
    maps to exactly 0, so the measure is continuous across the collision
    boundary.
    """
    if mu_fric <= 0.0 or g <= 0.0:
        raise ValueError("mu_fric and g must be strictly positive")
    if collided:
        if v_av_col < 0.0:
            raise ValueError("v_av_col must be >= 0")
        return -(v_av_col * v_av_col) / (2.0 * g * mu_fric)
    if d_min < 0.0:
        raise ValueError("d_min must be >= 0 for collision-free runs")
    return d_min


def indicator_collision(outcome: Outcome) -> int:
    """Event indicator J: 1 iff the run ended in a collision (d*_min < 0)."""
    return 1 if outcome.collided else 0
