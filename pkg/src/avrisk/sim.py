"""Deterministic, seedable simulators of the crossing scenario.

Three closed-loop simulators share one integrator and differ only in their
perception model and control latency:

* :func:`run_hifi` -- the trustworthy setup.  Frame-wise detection follows a
  range/weather curve with a strong dusk glare dip, perception noise is
  small and braking reacts within one frame.  Per-run draws scale the glare
  attenuation and the pedestrian's realized walking pace: the full stack
  never performs exactly the same twice, so outcomes at a fixed scenario
  point stay genuinely dispersed from run to run.
* :func:`run_lofi_pre` -- a cheap setup on the same input space.  Same
  range/weather curve shape but no glare window, a global detection
  dropout that makes it miss roughly half its frames, larger perception
  noise and a fixed reaction delay between detection and braking onset.
  Deliberately pessimistic: its collision region strictly contains the
  trustworthy setup's.
* :func:`run_lofi_post` -- a cheap setup on an abstracted input space
  (:class:`LoFiParams`): detection probability, perception noise and
  friction enter directly instead of being derived from the environment.

The scenario: at the triggering point the AV moves at its target speed
``v_av`` with the pedestrian ``d0`` meters ahead, standing
``lateral_start_offset`` meters from the lane center.  The pedestrian walks
straight toward and across the lane at ``v_ped``.  The AV brakes while a
detected pedestrian ahead of its front bumper is inside, or moving toward,
its lane; once the pedestrian is alongside or behind, the AV commits to the
pass.  The run ends at first contact, when the pedestrian clears the far
side of the lane, when the AV has safely passed, or at the horizon.

Randomness is strictly per-frame: frame ``i`` of a run consumes element
``i`` of counter-based streams keyed by ``(seed, channel)``, so outcomes
never depend on how long a trace lasted, on other runs, or on scheduling.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .rng import normal_stream, split_seed, uniform_stream
from .scenario import (Outcome, PhysicalConstants, ScenarioParams,
                       extended_min_distance, friction)

__all__ = [
    "SimConfig",
    "LoFiParams",
    "Trace",
    "SimulationFault",
    "run_hifi",
    "run_lofi_pre",
    "run_lofi_post",
    "hifi_detection_prob",
    "lofi_pre_detection_prob",
    "lofi_post_detection_prob",
]

# Stream channels within one run.
_CH_DETECT = 0
_CH_NOISE = 1
_CH_CONDITION = 2
_CH_ACTOR = 3


class SimulationFault(RuntimeError):
    """Raised when the integrator produces a non-finite state."""


@dataclass(frozen=True)
class SimConfig:
    """Integration step, control dynamics and perception-curve constants."""

    dt: float = 0.05                   # s
    a_accel: float = 2.0               # max forward acceleration, m/s^2
    decel_ramp_time: float = 0.2       # s from free rolling to full braking
    reaction_time_lofi: float = 0.4    # s between detection and braking onset
    horizon: float = 30.0              # s
    physical: PhysicalConstants = field(default_factory=PhysicalConstants)

    # Detection curve: certain detection up to detect_full_range, linearly
    # degrading to detect_far_prob at detect_far_range, flat beyond.
    detect_full_range: float = 10.0
    detect_far_range: float = 50.0
    detect_far_prob: float = 0.5
    fog_detect_coeff: float = 0.4
    rain_detect_coeff: float = 0.3
    # Dusk glare window (trustworthy setup only).
    glare_start: float = 19.0
    glare_end: float = 21.0
    glare_factor: float = 0.4
    # Multiplicative range-noise std of the two setups on the scenario space.
    hifi_noise_sigma: float = 0.01
    lofi_noise_sigma: float = 0.02
    # Std of the per-run multiplier on the trustworthy setup's glare
    # attenuation (clipped to [0.5, 1.5]): sun elevation and auto-exposure
    # vary between runs.  The cheap setups are exactly repeatable
    # abstractions and do not disperse.
    hifi_run_dispersion: float = 0.15
    # Std of the per-run multiplier on the pedestrian's realized walking
    # speed in the trustworthy setup (clipped to [0.6, 1.4]).  The full
    # stack animates the actor, so the pace drifts around the scenario's
    # nominal speed; the cheap setups idealize it as exactly constant.
    hifi_actor_jitter: float = 0.10
    # Frame-wise dropout of the cheap perception stack on the scenario
    # space: it sees the same curve but misses most frames.  This makes the
    # cheap setup globally pessimistic, so its event region contains the
    # trustworthy setup's much smaller one.
    lofi_pre_dropout: float = 0.50
    # Range falloff of the abstracted setup: exp decay toward a far floor.
    lofi_post_far_prob: float = 0.1
    lofi_post_range_decay: float = 8.0
    # Proportional speed controller gain, 1/s.
    speed_ctrl_gain: float = 1.0
    # Braking is considered for pedestrians within this many lane widths.
    hazard_lane_width_factor: float = 1.5
    # Termination margins, m.
    ped_exit_margin: float = 0.5
    pass_clear_margin: float = 0.5

    def __post_init__(self) -> None:
        if self.dt <= 0.0 or self.horizon <= 0.0:
            raise ValueError("dt and horizon must be strictly positive")
        n = self.horizon / self.dt
        if abs(n - round(n)) > 1e-9:
            raise ValueError("horizon must be an integer number of frames")
        if self.a_accel <= 0.0 or self.decel_ramp_time <= 0.0:
            raise ValueError("a_accel and decel_ramp_time must be positive")
        if self.reaction_time_lofi < 0.0:
            raise ValueError("reaction_time_lofi must be non-negative")
        if not 0.0 < self.detect_full_range < self.detect_far_range:
            raise ValueError("detection ranges must satisfy 0 < full < far")
        if not 0.0 <= self.detect_far_prob <= 1.0:
            raise ValueError("detect_far_prob must lie in [0, 1]")
        if not 0.0 <= self.glare_factor <= 1.0:
            raise ValueError("glare_factor must lie in [0, 1]")
        if self.hifi_run_dispersion < 0.0:
            raise ValueError("hifi_run_dispersion must be non-negative")
        if self.hifi_actor_jitter < 0.0:
            raise ValueError("hifi_actor_jitter must be non-negative")

    @property
    def n_frames_max(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class LoFiParams:
    """Input point of the abstracted cheap setup.

    Perception abstractions replace the environment: a frame-wise detection
    probability, a multiplicative perception noise std and a friction
    coefficient.  Training designs keep ``p_detect`` in [0.4, 1],
    ``sigma_noise`` in [0, 0.05] and ``mu_fric`` in [0.5, 1]; the type
    itself also accepts values outside those ranges because transferred
    environment points may extrapolate below them.
    """

    d0: float
    v_av: float
    v_ped: float
    p_detect: float
    sigma_noise: float
    mu_fric: float

    def __post_init__(self) -> None:
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ValueError(f"{f.name} must be finite")
        if not 0.0 < self.d0 <= 50.0:
            raise ValueError("d0 must lie in (0, 50]")
        if self.v_av <= 0.0 or self.v_ped <= 0.0:
            raise ValueError("v_av and v_ped must be strictly positive")
        # p_detect is NOT range-checked here: transferred points may fall
        # outside [0, 1]; the simulator clamps before use.
        if self.sigma_noise < 0.0:
            raise ValueError("sigma_noise must be non-negative")
        if self.mu_fric <= 0.0:
            raise ValueError("mu_fric must be strictly positive")


@dataclass
class Trace:
    """Per-frame records of one run; separation d is clamped at 0."""

    time: np.ndarray
    av_x: np.ndarray
    av_v: np.ndarray
    ped_x: np.ndarray
    ped_y: np.ndarray
    detected: np.ndarray
    d: np.ndarray

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["time", "av_x", "av_v", "ped_x", "ped_y",
                             "detected", "d"])
            for k in range(len(self.time)):
                writer.writerow([
                    repr(float(self.time[k])), repr(float(self.av_x[k])),
                    repr(float(self.av_v[k])), repr(float(self.ped_x[k])),
                    repr(float(self.ped_y[k])), int(self.detected[k]),
                    repr(float(self.d[k])),
                ])


def _base_detection(rng_dist: float, cfg: SimConfig) -> float:
    if rng_dist <= cfg.detect_full_range:
        return 1.0
    if rng_dist >= cfg.detect_far_range:
        return cfg.detect_far_prob
    frac = (rng_dist - cfg.detect_full_range) / (
        cfg.detect_far_range - cfg.detect_full_range)
    return 1.0 - (1.0 - cfg.detect_far_prob) * frac


def hifi_detection_prob(rng_dist: float, params: ScenarioParams,
                        cfg: SimConfig, condition: float = 1.0) -> float:
    """Frame-wise detection probability of the trustworthy setup.

    ``condition`` is the per-run draw scaling the glare attenuation: sun
    elevation and camera auto-exposure vary between runs, so the severity
    of the dusk window is not repeatable while the rest of the curve is.
    """
    p = _base_detection(rng_dist, cfg)
    p *= 1.0 - cfg.fog_detect_coeff * params.w_fog
    p *= 1.0 - cfg.rain_detect_coeff * params.w_rain
    if cfg.glare_start <= params.t_day <= cfg.glare_end:
        p *= min(1.0, cfg.glare_factor * condition)
    return min(1.0, max(0.0, p))


def lofi_pre_detection_prob(rng_dist: float, params: ScenarioParams,
                            cfg: SimConfig) -> float:
    """Cheap-setup detection: same curve shape and weather factors, no
    glare window, and a global frame dropout."""
    p = _base_detection(rng_dist, cfg) * cfg.lofi_pre_dropout
    p *= 1.0 - cfg.fog_detect_coeff * params.w_fog
    p *= 1.0 - cfg.rain_detect_coeff * params.w_rain
    return min(1.0, max(0.0, p))


def lofi_post_detection_prob(rng_dist: float, params: LoFiParams,
                             cfg: SimConfig) -> float:
    """Abstracted detection: p_detect scaled by a decreasing range factor
    f(r) = floor + (1 - floor) * exp(-r / decay), f(0) = 1."""
    f = cfg.lofi_post_far_prob + (1.0 - cfg.lofi_post_far_prob) * math.exp(
        -rng_dist / cfg.lofi_post_range_decay)
    p = min(1.0, max(0.0, params.p_detect))
    return p * f


def _simulate(d0, v_av, v_ped, mu, sigma_noise, delay_frames, det_prob,
              seed, cfg: SimConfig, want_trace, run_dispersion=0.0,
              actor_jitter=0.0):
    """Shared closed-loop integrator.

    det_prob maps (range, condition draw) to a frame detection
    probability; everything else is common to the three setups.  A
    positive run_dispersion draws the condition once per run from
    Normal(1, run_dispersion) clipped to [0.5, 1.5]; with zero dispersion
    the condition is exactly 1.  A positive actor_jitter likewise draws a
    per-run multiplier on the pedestrian's walking speed, clipped to
    [0.6, 1.4].
    """
    phys = cfg.physical
    dt = cfg.dt
    n_max = cfg.n_frames_max
    g_mu = phys.g * mu
    jerk_step = g_mu / cfg.decel_ramp_time * dt
    gain = cfg.speed_ctrl_gain
    a_accel = cfg.a_accel
    half_lane = 0.5 * phys.lane_width
    hazard_reach = cfg.hazard_lane_width_factor * phys.lane_width
    inside_reach = half_lane + phys.ped_radius
    exit_y = -(half_lane + phys.ped_radius + cfg.ped_exit_margin)
    pass_x = d0 + phys.ped_radius + cfg.pass_clear_margin + phys.av_length
    av_len = phys.av_length
    half_w = 0.5 * phys.av_width
    r_ped = phys.ped_radius
    offset = phys.lateral_start_offset

    # Full-horizon streams so frame i's draw never depends on trace length.
    u_detect = uniform_stream(split_seed(seed, _CH_DETECT), n_max)
    z_noise = normal_stream(split_seed(seed, _CH_NOISE), n_max)
    eta = 1.0
    if run_dispersion > 0.0:
        z = normal_stream(split_seed(seed, _CH_CONDITION), 1)[0]
        eta = min(1.5, max(0.5, 1.0 + run_dispersion * z))
    if actor_jitter > 0.0:
        z = normal_stream(split_seed(seed, _CH_ACTOR), 1)[0]
        v_ped *= min(1.4, max(0.6, 1.0 + actor_jitter * z))

    x_front = 0.0
    v = v_av
    a = 0.0
    d_min = math.inf
    collided = False
    v_col = 0.0
    decisions = [False] * n_max

    rows = [] if want_trace else None

    i = 0
    for i in range(n_max):
        t = i * dt
        ped_y = offset - v_ped * t
        rel_x = d0 - x_front
        rng_dist = math.hypot(rel_x, ped_y)
        detected = u_detect[i] < det_prob(rng_dist, eta)
        if detected:
            scale = 1.0 + sigma_noise * z_noise[i]
            rel_x_hat = rel_x * scale
            y_hat = ped_y * scale
            decisions[i] = rel_x_hat > 0.0 and (
                0.0 < y_hat <= hazard_reach or abs(y_hat) <= inside_reach)
        braking = decisions[i - delay_frames] if i >= delay_frames else False

        target = 0.0 if braking else v_av
        a_cmd = gain * (target - v)
        if a_cmd > a_accel:
            a_cmd = a_accel
        elif a_cmd < -g_mu:
            a_cmd = -g_mu
        # Rate-limited actuation: full braking builds over decel_ramp_time.
        da = a_cmd - a
        if da > jerk_step:
            da = jerk_step
        elif da < -jerk_step:
            da = -jerk_step
        a += da
        v += a * dt
        if v <= 0.0:
            v = 0.0
            if a < 0.0:
                a = 0.0
        elif v > v_av:
            v = v_av
        x_front += v * dt

        ped_y = offset - v_ped * (t + dt)
        # Separation between the AV rectangle and the pedestrian disc.
        cx = d0
        if cx < x_front - av_len:
            cx = x_front - av_len
        elif cx > x_front:
            cx = x_front
        cy = ped_y
        if cy < -half_w:
            cy = -half_w
        elif cy > half_w:
            cy = half_w
        sep = math.hypot(d0 - cx, ped_y - cy) - r_ped
        if sep < 0.0:
            sep = 0.0
        if sep < d_min:
            d_min = sep

        if rows is not None:
            rows.append(((i + 1) * dt, x_front, v, d0, ped_y, detected, sep))

        if sep <= 0.0:
            if v > 0.0:
                collided = True
                v_col = v
            i += 1
            break
        if ped_y < exit_y or x_front > pass_x:
            i += 1
            break
    else:
        i = n_max

    if not (math.isfinite(x_front) and math.isfinite(v)):
        raise SimulationFault("non-finite integrator state")

    d_star = extended_min_distance(d_min, collided, v_col if collided else 0.0,
                                   mu, phys.g)
    outcome = Outcome(d_min_star=d_star, collided=collided,
                      v_av_col=v_col if collided else 0.0, n_frames=i)
    if rows is None:
        return outcome
    cols = list(zip(*rows))
    trace = Trace(time=np.asarray(cols[0]), av_x=np.asarray(cols[1]),
                  av_v=np.asarray(cols[2]), ped_x=np.asarray(cols[3]),
                  ped_y=np.asarray(cols[4]),
                  detected=np.asarray(cols[5], dtype=bool),
                  d=np.asarray(cols[6]))
    return outcome, trace


def run_hifi(params: ScenarioParams, seed: int,
             cfg: SimConfig | None = None, *, return_trace: bool = False):
    """Run the trustworthy setup for one scenario point.

    Deterministic in (params, seed, cfg).  Returns the :class:`Outcome`, or
    ``(Outcome, Trace)`` when ``return_trace`` is set.
    """
    cfg = cfg or _DEFAULT_CFG
    mu = friction(params.w_rain)
    return _simulate(
        params.d0, params.v_av, params.v_ped, mu, cfg.hifi_noise_sigma,
        0, lambda r, c: hifi_detection_prob(r, params, cfg, c),
        seed, cfg, return_trace, run_dispersion=cfg.hifi_run_dispersion,
        actor_jitter=cfg.hifi_actor_jitter)


def run_lofi_pre(params: ScenarioParams, seed: int,
                 cfg: SimConfig | None = None, *, return_trace: bool = False):
    """Run the cheap setup on the scenario space (no glare, delayed reaction)."""
    cfg = cfg or _DEFAULT_CFG
    mu = friction(params.w_rain)
    delay = int(round(cfg.reaction_time_lofi / cfg.dt))
    return _simulate(
        params.d0, params.v_av, params.v_ped, mu, cfg.lofi_noise_sigma,
        delay, lambda r, _c: lofi_pre_detection_prob(r, params, cfg),
        seed, cfg, return_trace)


def run_lofi_post(params: LoFiParams, seed: int,
                  cfg: SimConfig | None = None, *, return_trace: bool = False):
    """Run the cheap setup on the abstracted perception space."""
    cfg = cfg or _DEFAULT_CFG
    delay = int(round(cfg.reaction_time_lofi / cfg.dt))
    return _simulate(
        params.d0, params.v_av, params.v_ped, params.mu_fric,
        params.sigma_noise, delay,
        lambda r, _c: lofi_post_detection_prob(r, params, cfg),
        seed, cfg, return_trace)


_DEFAULT_CFG = SimConfig()
