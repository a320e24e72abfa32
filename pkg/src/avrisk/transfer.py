"""Mapping scenario points into the abstracted cheap setup's space.

The abstracted setup does not consume environments; it consumes a
six-dimensional perception/friction parameterization (:class:`LoFiParams`).
To score a scenario point with a surrogate trained on that space, the
point is pushed through a guessed transfer: geometry and speeds pass
unchanged, weather and time of day collapse into a detection probability,
perception noise is pinned, and friction follows the rain level.

The transfer deliberately loses information (wind has no image at all),
and by default the detection probability is NOT clamped into the
surrogate's training range: letting the surrogate extrapolate keeps the
extrapolation risk visible instead of hiding it.  A flag enables clamping
for experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import ScenarioParams, friction
from .sim import LoFiParams

__all__ = [
    "TransferConfig",
    "LOFI_FIELDS",
    "transfer_post",
    "transfer_post_batch",
    "PostTransferModel",
]

# Column order of the abstracted parameter space everywhere (design
# matrices, boxes, transferred batches).
LOFI_FIELDS = ("d0", "v_av", "v_ped", "p_detect", "sigma_noise", "mu_fric")


@dataclass(frozen=True)
class TransferConfig:
    """Constants of the guessed transfer into the abstracted space."""

    sigma_noise_fixed: float = 0.03
    fog_coeff: float = 0.4
    rain_coeff: float = 0.4
    diurnal_coeff: float = 0.2
    clamp_p_detect: bool = False

    def __post_init__(self) -> None:
        for name in ("sigma_noise_fixed", "fog_coeff", "rain_coeff",
                     "diurnal_coeff"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")


def _p_detect(t_day, w_fog, w_rain, cfg: TransferConfig):
    p = (1.0 - cfg.fog_coeff * w_fog - cfg.rain_coeff * w_rain
         - cfg.diurnal_coeff * abs(t_day - 12.0) / 12.0)
    if cfg.clamp_p_detect:
        p = np.clip(p, 0.0, 1.0)
    return p


def transfer_post(x: ScenarioParams,
                  cfg: TransferConfig | None = None) -> LoFiParams:
    """Map one scenario point into the abstracted space.

    Deterministic and total: (d0, v_av, v_ped) copy unchanged, detection
    probability falls linearly in fog, rain and distance from noon.
    """
    cfg = cfg or _DEFAULT_CFG
    return LoFiParams(
        d0=x.d0, v_av=x.v_av, v_ped=x.v_ped,
        p_detect=float(_p_detect(x.t_day, x.w_fog, x.w_rain, cfg)),
        sigma_noise=cfg.sigma_noise_fixed,
        mu_fric=friction(x.w_rain))


def transfer_post_batch(X, cfg: TransferConfig | None = None) -> np.ndarray:
    """Vectorized transfer of scenario rows (t_day, w_fog, w_wind, w_rain,
    d0, v_av, v_ped) into rows ordered as :data:`LOFI_FIELDS`."""
    cfg = cfg or _DEFAULT_CFG
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty((len(X), 6))
    out[:, 0] = X[:, 4]
    out[:, 1] = X[:, 5]
    out[:, 2] = X[:, 6]
    out[:, 3] = _p_detect(X[:, 0], X[:, 1], X[:, 3], cfg)
    out[:, 4] = cfg.sigma_noise_fixed
    out[:, 5] = friction(X[:, 3])
    return out


class PostTransferModel:
    """Adapter scoring scenario rows through transfer + a 6-D surrogate.

    Its ``event_prob`` is the quantity P(E | surrogate, x) used by the
    post-mode transfer estimator: scenario rows in, transferred rows
    scored by the wrapped model.
    """

    def __init__(self, model, cfg: TransferConfig | None = None):
        self.model = model
        self.cfg = cfg or _DEFAULT_CFG

    def event_prob(self, X) -> np.ndarray:
        return self.model.event_prob(transfer_post_batch(X, self.cfg))


_DEFAULT_CFG = TransferConfig()
