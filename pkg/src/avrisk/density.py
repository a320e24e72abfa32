"""Naturalistic parameter density p(x) for the crossing scenario.

The environment part of p(x) comes from an hourly weather/exposure dataset:
each row holds a fog, wind and rain severity plus the number of observed
jaywalkers in that hour.  Drawing rows proportionally to the pedestrian
count and jittering the hour uniformly yields environment samples; a
Gaussian product-kernel KDE fitted to those samples (bandwidths selected by
maximum-likelihood leave-one-out cross-validation) gives a smooth, samplable
density.  Actor parameters (speeds and the initial gap) are attached by
fixed conditional models.

No real-world logs ship with the package; :func:`synthesize_dataset`
generates a dataset with the relevant structure (diurnal and seasonal
exposure cycles, zero-inflated autocorrelated weather, rain suppressing
pedestrian counts) from a seed.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .rng import generator, split_seed
from .scenario import ScenarioParams

__all__ = [
    "NaturalisticDataset",
    "KdeModel",
    "ParamSampler",
    "SampleRejectionError",
    "DIURNAL_PEDESTRIANS",
    "synthesize_dataset",
    "draw_environment_samples",
    "fit_kde_mlcv",
    "ped_speed_params",
    "params_from_row",
    "ENV_FIELDS",
    "PARAM_FIELDS",
]

ENV_FIELDS = ("t_day", "w_fog", "w_wind", "w_rain")
PARAM_FIELDS = ("t_day", "w_fog", "w_wind", "w_rain", "d0", "v_av", "v_ped")

# Mean jaywalker count per hour of day (commuter peaks, quiet nights).
DIURNAL_PEDESTRIANS = (
    1.2, 0.8, 0.6, 0.5, 0.8, 2.0, 6.0, 18.0, 34.0, 30.0, 32.0, 38.0,
    44.0, 42.0, 36.0, 34.0, 36.0, 40.0, 22.0, 4.0, 2.5, 2.0, 1.8, 1.5,
)


class SampleRejectionError(RuntimeError):
    """Raised when rejection sampling fails to produce a valid point."""


@dataclass
class NaturalisticDataset:
    """Hourly environment rows with jaywalker exposure counts."""

    hour: np.ndarray       # absolute hour index, 0..n-1
    w_fog: np.ndarray
    w_wind: np.ndarray
    w_rain: np.ndarray
    ped_count: np.ndarray
    seed: int | None = None

    @property
    def n_rows(self) -> int:
        return len(self.hour)

    @property
    def hour_of_day(self) -> np.ndarray:
        return self.hour % 24

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["hour", "w_fog", "w_wind", "w_rain", "ped_count"])
            for k in range(self.n_rows):
                writer.writerow([
                    int(self.hour[k]), repr(float(self.w_fog[k])),
                    repr(float(self.w_wind[k])), repr(float(self.w_rain[k])),
                    int(self.ped_count[k]),
                ])

    @classmethod
    def from_csv(cls, path: str) -> "NaturalisticDataset":
        rows = np.genfromtxt(path, delimiter=",", names=True)
        return cls(hour=rows["hour"].astype(np.int64),
                   w_fog=np.atleast_1d(rows["w_fog"]),
                   w_wind=np.atleast_1d(rows["w_wind"]),
                   w_rain=np.atleast_1d(rows["w_rain"]),
                   ped_count=rows["ped_count"].astype(np.int64))


def _episodes(rng: np.random.Generator, n: int, p_start: float,
              mean_len: float, peak_lo: float, peak_hi: float) -> np.ndarray:
    """Zero-inflated episodic severity series: sine-shaped humps of random
    peak and duration, starting at Bernoulli(p_start) in any quiet hour."""
    w = np.zeros(n)
    t = 0
    while t < n:
        if rng.random() < p_start:
            length = 2 + int(rng.poisson(mean_len))
            peak = rng.uniform(peak_lo, peak_hi)
            for k in range(length):
                if t + k >= n:
                    break
                shape = math.sin(math.pi * (k + 1) / (length + 1))
                w[t + k] = min(1.0, peak * shape * (0.85 + 0.3 * rng.random()))
            t += length
        else:
            t += 1
    return w


def synthesize_dataset(n_hours: int = 74460, seed: int = 0) -> NaturalisticDataset:
    """Generate an hourly exposure/weather dataset from a seed.

    The default length corresponds to 8.5 years of hourly rows.  Weather
    severities are zero-inflated (well over 70 percent of hours are exactly
    dry and fog-free) with multi-hour autocorrelated episodes; pedestrian
    counts follow the diurnal profile with seasonal and weekly modulation
    and are suppressed in bad weather.
    """
    if n_hours < 24:
        raise ValueError("n_hours must cover at least one day")
    rng = generator(split_seed(seed, 101))
    hour = np.arange(n_hours, dtype=np.int64)
    hod = hour % 24
    day = hour // 24

    w_rain = _episodes(rng, n_hours, p_start=0.030, mean_len=4.0,
                       peak_lo=0.15, peak_hi=0.95)
    # Fog forms in the small hours and burns off; suppress starts elsewhere.
    fog_raw = _episodes(rng, n_hours, p_start=0.055, mean_len=2.5,
                        peak_lo=0.2, peak_hi=0.9)
    morning = (hod >= 3) & (hod <= 9)
    w_fog = np.where(morning, fog_raw, 0.0)
    # Wind: mean-reverting walk squashed into [0, 1].
    steps = rng.standard_normal(n_hours)
    x = np.empty(n_hours)
    acc = 0.0
    for k in range(n_hours):
        acc = 0.92 * acc + 0.35 * steps[k]
        x[k] = acc
    w_wind = np.clip(0.28 + 0.16 * x, 0.0, 1.0)

    season = 1.0 + 0.25 * np.sin(2.0 * math.pi * ((day % 365) - 80) / 365.0)
    weekend = np.where((day % 7) >= 5, 0.8, 1.0)
    lam = (np.asarray(DIURNAL_PEDESTRIANS)[hod] * season * weekend
           * (1.0 - 0.55 * w_rain) * (1.0 - 0.25 * w_fog))
    ped_count = rng.poisson(lam)

    return NaturalisticDataset(hour=hour, w_fog=w_fog, w_wind=w_wind,
                               w_rain=w_rain, ped_count=ped_count, seed=seed)


def draw_environment_samples(dataset: NaturalisticDataset, n: int,
                             seed: int) -> np.ndarray:
    """Draw (t_day, w_fog, w_wind, w_rain) samples from the dataset.

    Rows are drawn with probability proportional to their pedestrian count
    (exposure weighting) and the integer hour becomes a specific time of day
    by adding a Uniform(0, 1) hour within the bin.
    """
    weights = dataset.ped_count.astype(float)
    total = weights.sum()
    if total <= 0:
        raise ValueError("dataset has no pedestrian exposure")
    rng = generator(split_seed(seed, 202))
    cdf = np.cumsum(weights) / total
    idx = np.searchsorted(cdf, rng.random(n), side="right")
    t = dataset.hour_of_day[idx] + rng.random(n)
    return np.column_stack((t, dataset.w_fog[idx], dataset.w_wind[idx],
                            dataset.w_rain[idx]))


@dataclass
class KdeModel:
    """Gaussian product-kernel density over environment vectors.

    ``bandwidths[d]`` is the kernel std of dimension d: the selected shared
    scale times the per-dimension sample std, or the floor value for
    degenerate (zero-variance) dimensions.
    """

    support: np.ndarray            # (n, d) sample points
    bandwidths: np.ndarray         # (d,)
    selected_scale: float
    degenerate_dims: tuple = ()
    cv_grid: np.ndarray | None = None
    cv_objectives: np.ndarray | None = None

    @property
    def n_support(self) -> int:
        return self.support.shape[0]

    @property
    def n_dims(self) -> int:
        return self.support.shape[1]

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        """Log density of query points (m, d); equal-weight mixture."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.n_dims:
            raise ValueError("query dimension mismatch")
        h = self.bandwidths
        const = (-0.5 * self.n_dims * math.log(2.0 * math.pi)
                 - float(np.sum(np.log(h))) - math.log(self.n_support))
        out = np.empty(x.shape[0])
        block = max(1, int(2e6 // max(1, self.n_support)))
        for lo in range(0, x.shape[0], block):
            q = x[lo:lo + block]
            z = (q[:, None, :] - self.support[None, :, :]) / h
            expo = -0.5 * np.einsum("ijd,ijd->ij", z, z)
            m = expo.max(axis=1)
            out[lo:lo + block] = m + np.log(
                np.exp(expo - m[:, None]).sum(axis=1)) + const
        return out

    def to_json(self, path: str) -> None:
        payload = {
            "support": self.support.tolist(),
            "bandwidths": self.bandwidths.tolist(),
            "selected_scale": self.selected_scale,
            "degenerate_dims": list(self.degenerate_dims),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path: str) -> "KdeModel":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        return cls(support=np.asarray(payload["support"], dtype=float),
                   bandwidths=np.asarray(payload["bandwidths"], dtype=float),
                   selected_scale=float(payload["selected_scale"]),
                   degenerate_dims=tuple(payload["degenerate_dims"]))


def fit_kde_mlcv(samples: np.ndarray, grid: np.ndarray | None = None,
                 floor: float = 1e-3) -> KdeModel:
    """Fit the KDE by maximum-likelihood leave-one-out cross-validation.

    A single shared scale s is selected from ``grid`` by maximizing the
    leave-one-out log likelihood sum_i log f_{-i}(x_i) with per-dimension
    bandwidths h_d = s * std_d.  Zero-variance dimensions get the floor
    bandwidth instead and are reported via ``degenerate_dims`` plus a
    warning.

    The LOO objective is evaluated exactly (full pairwise sums, blocked for
    memory), so the selection matches a direct brute-force evaluation of the
    same grid.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[0] < 100:
        raise ValueError("need a (n >= 100, d) sample array")
    n, d = x.shape
    if grid is None:
        grid = np.geomspace(0.08, 1.0, 14)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2 or np.any(grid <= 0):
        raise ValueError("grid must be a 1-D array of positive scales")

    std = x.std(axis=0, ddof=1)
    degenerate = tuple(int(k) for k in np.nonzero(std == 0.0)[0])
    if degenerate:
        warnings.warn(
            f"zero-variance dimensions {degenerate} get floor bandwidth {floor}",
            RuntimeWarning, stacklevel=2)
    active = std > 0.0

    # Degenerate dims have zero pairwise distance, so the shared-scale
    # exponent reduces to R2/s^2 with R2 built from active dims only.
    z = x[:, active] / std[active]
    sq = (z * z).sum(axis=1)
    objectives = np.zeros(len(grid))
    log_norm = np.zeros(len(grid))
    for gi, s in enumerate(grid):
        h = np.where(active, s * std, floor)
        log_norm[gi] = (float(np.sum(np.log(h)))
                        + 0.5 * d * math.log(2.0 * math.pi)
                        + math.log(n - 1))
    block = max(1, int(4e7 // max(1, n)))
    with np.errstate(divide="ignore"):
        for lo in range(0, n, block):
            hi = min(n, lo + block)
            r2 = (sq[lo:hi, None] + sq[None, :]
                  - 2.0 * (z[lo:hi] @ z.T))
            np.maximum(r2, 0.0, out=r2)
            rows = np.arange(lo, hi)
            for gi, s in enumerate(grid):
                kern = np.exp(r2 * (-0.5 / (s * s)))
                kern[rows - lo, rows] = 0.0
                objectives[gi] += float(np.sum(np.log(kern.sum(axis=1))))
    objectives -= n * log_norm

    best = int(np.argmax(objectives))
    s = float(grid[best])
    bandwidths = np.where(active, s * std, floor)
    return KdeModel(support=x.copy(), bandwidths=bandwidths,
                    selected_scale=s, degenerate_dims=degenerate,
                    cv_grid=grid.copy(), cv_objectives=objectives)


def ped_speed_params(w_rain: float) -> tuple[float, float]:
    """Mean and std of walking speed: pedestrians hurry in the rain."""
    return 1.40 + 0.25 * w_rain, 0.15 + 0.05 * w_rain


@dataclass
class ParamSampler:
    """Sampler of full scenario points x ~ p(x).

    Environment vectors come either from the KDE (``kde`` mode) or straight
    from exposure-weighted dataset rows with hour jitter (``database`` mode).
    Actor parameters: v_av ~ N(6, 0.2); v_ped normal with rain-dependent
    moments, redrawn while below 0.2 m/s; the initial gap time is lognormal
    (median 4 s, sigma 0.4) and d0 = gap * v_av.  Whole vectors are redrawn
    while the environment leaves its valid box or d0 exceeds ``max_d0``.
    """

    field_names = PARAM_FIELDS

    kde: KdeModel | None = None
    dataset: NaturalisticDataset | None = None
    mode: str = "kde"
    v_av_mean: float = 6.0
    v_av_std: float = 0.2
    gap_median: float = 4.0
    gap_sigma_log: float = 0.4
    v_ped_min: float = 0.2
    max_d0: float = 50.0
    max_rejections: int = 1000
    _row_cdf: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.mode not in ("kde", "database"):
            raise ValueError("mode must be 'kde' or 'database'")
        if self.mode == "kde" and self.kde is None:
            raise ValueError("kde mode requires a fitted KdeModel")
        if self.mode == "database":
            if self.dataset is None:
                raise ValueError("database mode requires a dataset")
            w = self.dataset.ped_count.astype(float)
            if w.sum() <= 0:
                raise ValueError("dataset has no pedestrian exposure")
            self._row_cdf = np.cumsum(w) / w.sum()

    # -- single draws ------------------------------------------------------

    def _draw_env(self, rng: np.random.Generator) -> tuple[float, float, float, float]:
        if self.mode == "kde":
            kde = self.kde
            i = int(rng.integers(kde.n_support))
            vec = kde.support[i] + kde.bandwidths * rng.standard_normal(4)
            return float(vec[0]), float(vec[1]), float(vec[2]), float(vec[3])
        i = int(np.searchsorted(self._row_cdf, rng.random(), side="right"))
        t = float(self.dataset.hour_of_day[i]) + float(rng.random())
        return (t, float(self.dataset.w_fog[i]), float(self.dataset.w_wind[i]),
                float(self.dataset.w_rain[i]))

    def sample(self, seed: int) -> ScenarioParams:
        """Draw one scenario point; deterministic in (sampler, seed)."""
        rng = generator(split_seed(seed, 303))
        for _ in range(self.max_rejections):
            t, fog, wind, rain = self._draw_env(rng)
            if not (0.0 <= t < 24.0 and 0.0 <= fog <= 1.0
                    and 0.0 <= wind <= 1.0 and 0.0 <= rain <= 1.0):
                continue
            v_av = self.v_av_mean + self.v_av_std * float(rng.standard_normal())
            if v_av <= 0.0:
                continue
            mean, std = ped_speed_params(rain)
            v_ped = mean + std * float(rng.standard_normal())
            while v_ped < self.v_ped_min:
                v_ped = mean + std * float(rng.standard_normal())
            gap = math.exp(math.log(self.gap_median)
                           + self.gap_sigma_log * float(rng.standard_normal()))
            d0 = gap * v_av
            if not 0.0 < d0 <= self.max_d0:
                continue
            return ScenarioParams(t_day=t, w_fog=fog, w_wind=wind,
                                  w_rain=rain, d0=d0, v_av=v_av, v_ped=v_ped)
        raise SampleRejectionError(
            f"no valid sample after {self.max_rejections} rejections")

    # -- vectorized draws --------------------------------------------------

    def sample_batch(self, seed: int, n: int) -> np.ndarray:
        """Draw n points as an (n, 7) array in PARAM_FIELDS order.

        Uses its own vectorized stream: batch draws are deterministic in
        (sampler, seed, n) but are not element-wise equal to repeated
        :meth:`sample` calls.
        """
        rng = generator(split_seed(seed, 404))
        out = np.empty((n, 7))
        need = np.ones(n, dtype=bool)
        for _ in range(self.max_rejections):
            m = int(need.sum())
            if m == 0:
                break
            if self.mode == "kde":
                kde = self.kde
                idx = rng.integers(kde.n_support, size=m)
                env = (kde.support[idx]
                       + kde.bandwidths * rng.standard_normal((m, 4)))
            else:
                idx = np.searchsorted(self._row_cdf, rng.random(m), side="right")
                env = np.column_stack((
                    self.dataset.hour_of_day[idx] + rng.random(m),
                    self.dataset.w_fog[idx], self.dataset.w_wind[idx],
                    self.dataset.w_rain[idx]))
            v_av = self.v_av_mean + self.v_av_std * rng.standard_normal(m)
            mean, std = ped_speed_params(env[:, 3])
            v_ped = mean + std * rng.standard_normal(m)
            for _ in range(self.max_rejections):
                low = v_ped < self.v_ped_min
                if not low.any():
                    break
                v_ped[low] = (mean[low]
                              + std[low] * rng.standard_normal(int(low.sum())))
            gap = np.exp(math.log(self.gap_median)
                         + self.gap_sigma_log * rng.standard_normal(m))
            d0 = gap * v_av
            cand = np.column_stack((env, d0, v_av, v_ped))
            ok = ((env[:, 0] >= 0) & (env[:, 0] < 24)
                  & (env[:, 1:] >= 0).all(axis=1) & (env[:, 1:] <= 1).all(axis=1)
                  & (v_av > 0) & (d0 > 0) & (d0 <= self.max_d0))
            slots = np.nonzero(need)[0][ok]
            out[slots] = cand[ok]
            need[slots] = False
        if need.any():
            raise SampleRejectionError(
                f"batch sampling did not converge after "
                f"{self.max_rejections} rounds")
        return out


def params_from_row(row: np.ndarray) -> ScenarioParams:
    """Build a ScenarioParams from a PARAM_FIELDS-ordered vector."""
    return ScenarioParams(t_day=float(row[0]), w_fog=float(row[1]),
                          w_wind=float(row[2]), w_rain=float(row[3]),
                          d0=float(row[4]), v_av=float(row[5]),
                          v_ped=float(row[6]))
