"""Gaussian-process surrogate of simulator outcomes.

The surrogate is trained on extended-minimum-distance values collected at
space-filling design points inside a :class:`DesignBox`.  Two readouts
matter downstream: :meth:`GpModel.predict` gives the posterior mean and
latent standard deviation of the outcome, and :meth:`GpModel.event_prob`
turns that posterior into a collision probability ``P(d*_min < 0 | M, x)``
used to shape importance-sampling proposals.  Because the Gaussian tail
never vanishes, the event probability is strictly inside (0, 1), which is
what keeps the weighted estimators unbiased.

Hyperparameters (per-dimension length scales, signal variance, noise
variance) live in standardized input/output space and are chosen by
maximizing the log marginal likelihood with a seeded multi-start
coordinate search, so a fit is reproducible for a given seed and never
ends below any of its starting points.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtr
from scipy.stats import qmc

from .rng import generator, split_seed

__all__ = [
    "DesignBox",
    "GpHyperparams",
    "GpModel",
    "MetamodelFitError",
    "sobol_points",
    "fit_gp",
]

# Search bounds in log-space, standardized units.
_LS_LO, _LS_HI = 0.05, 10.0
_SV_LO, _SV_HI = 1e-2, 1e2
_NV_LO, _NV_HI = 1e-6, 1.0
# Diagonal jitter escalation for the factorization.
_JITTERS = (0.0, 1e-10, 1e-8, 1e-6, 1e-4)
# event_prob is kept strictly inside (0, 1) against Phi underflow.
_EVENT_P_MIN = 1e-300
_EVENT_P_MAX = 1.0 - 1e-16

_CH_FIT_START = 71

_PREDICT_CHUNK = 16384


class MetamodelFitError(RuntimeError):
    """Raised when no positive-definite factorization exists up to the
    maximum jitter."""


@dataclass(frozen=True)
class DesignBox:
    """Axis-aligned box with named dimensions.

    Serves as the training design region of the surrogate; built from
    percentiles of density samples so it covers the bulk of the
    operational domain without chasing outliers.
    """

    names: tuple[str, ...]
    lows: tuple[float, ...]
    highs: tuple[float, ...]

    def __post_init__(self) -> None:
        if not len(self.names) == len(self.lows) == len(self.highs):
            raise ValueError("names, lows and highs must have equal length")
        if not self.names:
            raise ValueError("box needs at least one dimension")
        for name, lo, hi in zip(self.names, self.lows, self.highs):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"invalid bounds for {name}: [{lo}, {hi}]")

    @property
    def dim(self) -> int:
        return len(self.names)

    @classmethod
    def from_samples(cls, samples, names, lo_percentile: float = 1.0,
                     hi_percentile: float = 99.0) -> "DesignBox":
        """Per-dimension [1st, 99th] percentile box of a sample matrix."""
        X = np.asarray(samples, dtype=float)
        names = tuple(names)
        if X.ndim != 2 or X.shape[1] != len(names):
            raise ValueError("sample matrix does not match dimension names")
        lows = np.percentile(X, lo_percentile, axis=0)
        highs = np.percentile(X, hi_percentile, axis=0)
        return cls(names, tuple(float(v) for v in lows),
                   tuple(float(v) for v in highs))

    def with_bounds(self, **bounds) -> "DesignBox":
        """Copy with the named dimensions pinned to explicit ranges."""
        lows, highs = list(self.lows), list(self.highs)
        for name, (lo, hi) in bounds.items():
            if name not in self.names:
                raise KeyError(name)
            i = self.names.index(name)
            lows[i], highs[i] = float(lo), float(hi)
        return DesignBox(self.names, tuple(lows), tuple(highs))

    def contains(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lo, hi = np.asarray(self.lows), np.asarray(self.highs)
        return np.all((X >= lo) & (X <= hi), axis=1)

    def unscale(self, U) -> np.ndarray:
        """Map unit-cube points into the box."""
        U = np.asarray(U, dtype=float)
        lo, hi = np.asarray(self.lows), np.asarray(self.highs)
        return lo + U * (hi - lo)

    def to_json(self) -> str:
        return json.dumps({"names": list(self.names),
                           "lows": list(self.lows),
                           "highs": list(self.highs)})

    @classmethod
    def from_json(cls, text: str) -> "DesignBox":
        obj = json.loads(text)
        return cls(tuple(obj["names"]), tuple(obj["lows"]),
                   tuple(obj["highs"]))


def sobol_points(n: int, box: DesignBox) -> np.ndarray:
    """First ``n`` points of the Sobol sequence scaled into the box.

    The all-zeros initial point of the sequence is skipped: it sits on a
    box corner and adds nothing to space filling.  Points are drawn in a
    power-of-two block so the generator keeps its balance properties.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if box.dim > 10:
        raise ValueError("design dimension must be at most 10")
    m = 1 << int(n).bit_length()     # smallest power of two >= n + 1
    eng = qmc.Sobol(d=box.dim, scramble=False)
    pts = eng.random(m)[1:n + 1]
    return box.unscale(pts)


@dataclass(frozen=True)
class GpHyperparams:
    """Kernel hyperparameters in standardized input/output space."""

    lengthscales: tuple[float, ...]
    signal_var: float
    noise_var: float

    def __post_init__(self) -> None:
        if not self.lengthscales or any(v <= 0.0 for v in self.lengthscales):
            raise ValueError("lengthscales must be positive")
        if self.signal_var <= 0.0 or self.noise_var <= 0.0:
            raise ValueError("variances must be strictly positive")


def _scaled_sq_dists(A: np.ndarray, B: np.ndarray,
                     ls: np.ndarray) -> np.ndarray:
    As, Bs = A / ls, B / ls
    d2 = (np.sum(As * As, axis=1)[:, None]
          + np.sum(Bs * Bs, axis=1)[None, :]
          - 2.0 * (As @ Bs.T))
    return np.maximum(d2, 0.0)


def _kernel(A: np.ndarray, B: np.ndarray, hp: GpHyperparams) -> np.ndarray:
    ls = np.asarray(hp.lengthscales, dtype=float)
    return hp.signal_var * np.exp(-0.5 * _scaled_sq_dists(A, B, ls))


def _factorize(K: np.ndarray, noise_var: float):
    """Cholesky of K + (noise + jitter) I, escalating jitter as needed.

    Returns (L, jitter) or None when even the largest jitter fails.
    """
    n = K.shape[0]
    eye = np.eye(n)
    for jit in _JITTERS:
        try:
            L = np.linalg.cholesky(K + (noise_var + jit) * eye)
        except np.linalg.LinAlgError:
            continue
        return L, jit
    return None


def _log_marginal(t: np.ndarray, L: np.ndarray,
                  alpha: np.ndarray) -> float:
    n = len(t)
    return float(-0.5 * t @ alpha - np.sum(np.log(np.diag(L)))
                 - 0.5 * n * math.log(2.0 * math.pi))


@dataclass
class GpModel:
    """Fitted Gaussian-process surrogate.

    Holds standardized training data, hyperparameters and the cached
    factorization.  Immutable in practice: nothing mutates a fitted model,
    so it is safe to share across worker threads.
    """

    hyperparams: GpHyperparams
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float
    z_train: np.ndarray
    t_train: np.ndarray
    alpha: np.ndarray
    chol: np.ndarray
    jitter: float
    log_marginal_likelihood: float

    def _standardize(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.z_train.shape[1]:
            raise ValueError("query dimension does not match training data")
        return (X - self.x_mean) / self.x_scale

    def predict(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and latent (noise-free) std at query points.

        Accepts a single vector or an (n, d) matrix; returns 1-D arrays.
        The latent variance is floored at a tiny positive fraction of the
        signal variance, so std > 0 strictly.
        """
        Z = self._standardize(X)
        hp = self.hyperparams
        means, stds = [], []
        for lo in range(0, len(Z), _PREDICT_CHUNK):
            zc = Z[lo:lo + _PREDICT_CHUNK]
            ks = _kernel(zc, self.z_train, hp)
            mean = ks @ self.alpha
            v = solve_triangular(self.chol, ks.T, lower=True)
            var = hp.signal_var - np.sum(v * v, axis=0)
            var = np.maximum(var, 1e-12 * hp.signal_var)
            means.append(self.y_mean + self.y_scale * mean)
            stds.append(self.y_scale * np.sqrt(var))
        return np.concatenate(means), np.concatenate(stds)

    def event_prob(self, X) -> np.ndarray:
        """P(outcome < 0 | model, x) = Phi(-mean/std), strictly in (0, 1).

        Certainty about the latent outcome is never claimed (std > 0), so
        the probability is positive everywhere, which is what keeps the
        importance-sampling weights well defined.
        """
        mean, std = self.predict(X)
        p = ndtr(-mean / std)
        return np.clip(p, _EVENT_P_MIN, _EVENT_P_MAX)

    def to_json(self) -> str:
        """Serialize everything except the factorization (rebuilt on load)."""
        return json.dumps({
            "lengthscales": list(self.hyperparams.lengthscales),
            "signal_var": self.hyperparams.signal_var,
            "noise_var": self.hyperparams.noise_var,
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
            "z_train": self.z_train.tolist(),
            "t_train": self.t_train.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "GpModel":
        obj = json.loads(text)
        hp = GpHyperparams(tuple(obj["lengthscales"]), obj["signal_var"],
                           obj["noise_var"])
        return _build_model(
            hp,
            np.asarray(obj["x_mean"], dtype=float),
            np.asarray(obj["x_scale"], dtype=float),
            float(obj["y_mean"]), float(obj["y_scale"]),
            np.asarray(obj["z_train"], dtype=float),
            np.asarray(obj["t_train"], dtype=float))


def _build_model(hp: GpHyperparams, x_mean, x_scale, y_mean, y_scale,
                 Z, t) -> GpModel:
    K = _kernel(Z, Z, hp)
    fact = _factorize(K, hp.noise_var)
    if fact is None:
        raise MetamodelFitError(
            "kernel matrix not positive definite up to jitter 1e-4")
    L, jit = fact
    alpha = solve_triangular(
        L.T, solve_triangular(L, t, lower=True), lower=False)
    return GpModel(hyperparams=hp, x_mean=x_mean, x_scale=x_scale,
                   y_mean=y_mean, y_scale=y_scale, z_train=Z, t_train=t,
                   alpha=alpha, chol=L, jitter=jit,
                   log_marginal_likelihood=_log_marginal(t, L, alpha))


def _ascend(f, theta, lo, hi, step0: float = 0.8, tol: float = 1e-3,
            max_sweeps: int = 120):
    """Derivative-free coordinate ascent with a shrinking step."""
    val = f(theta)
    step = step0
    for _ in range(max_sweeps):
        improved = False
        for i in range(len(theta)):
            for delta in (step, -step):
                cand = theta.copy()
                cand[i] = min(hi[i], max(lo[i], cand[i] + delta))
                if cand[i] == theta[i]:
                    continue
                v = f(cand)
                if v > val:
                    theta, val = cand, v
                    improved = True
        if not improved:
            step *= 0.5
            if step < tol:
                break
    return theta, val


def fit_gp(X, y, seed: int = 0, n_starts: int = 16,
           hyperparams: GpHyperparams | None = None) -> GpModel:
    """Fit the surrogate by maximizing log marginal likelihood.

    The search runs ``n_starts`` seeded coordinate ascents in log-space
    (start 0 is a fixed unit-scale point, the rest are drawn uniformly
    inside the bounds) and keeps the best.  Passing ``hyperparams`` skips
    the search and just builds the factorization; this is the hook tests
    use to compare against an independent solver at known hyperparameters.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D design matrix")
    n, dim = X.shape
    if len(y) != n or n < 10:
        raise ValueError("need matching X, y with at least 10 rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data must be finite")

    x_mean = X.mean(axis=0)
    x_scale = X.std(axis=0)
    x_scale = np.where(x_scale > 1e-12, x_scale, 1.0)
    y_mean = float(y.mean())
    y_scale = float(y.std())
    if y_scale <= 1e-12:
        y_scale = 1.0
    Z = (X - x_mean) / x_scale
    t = (y - y_mean) / y_scale

    if hyperparams is not None:
        if len(hyperparams.lengthscales) != dim:
            raise ValueError("lengthscales do not match design dimension")
        return _build_model(hyperparams, x_mean, x_scale, y_mean, y_scale,
                            Z, t)

    # Per-dimension squared distances, computed once for the whole search.
    S = np.empty((dim, n, n))
    for d in range(dim):
        diff = Z[:, d][:, None] - Z[:, d][None, :]
        S[d] = diff * diff

    def lml_of(theta: np.ndarray) -> float:
        inv_ls2 = np.exp(-2.0 * theta[:dim])
        sv, nv = math.exp(theta[dim]), math.exp(theta[dim + 1])
        K = sv * np.exp(-0.5 * np.tensordot(inv_ls2, S, axes=1))
        fact = _factorize(K, nv)
        if fact is None:
            return -math.inf
        L, _ = fact
        alpha = solve_triangular(
            L.T, solve_triangular(L, t, lower=True), lower=False)
        return _log_marginal(t, L, alpha)

    lo = np.array([math.log(_LS_LO)] * dim
                  + [math.log(_SV_LO), math.log(_NV_LO)])
    hi = np.array([math.log(_LS_HI)] * dim
                  + [math.log(_SV_HI), math.log(_NV_HI)])

    best_theta, best_val = None, -math.inf
    for k in range(max(1, n_starts)):
        if k == 0:
            theta0 = np.array([0.0] * dim + [0.0, math.log(1e-2)])
        else:
            rng = generator(split_seed(seed, _CH_FIT_START, k))
            theta0 = rng.uniform(lo, hi)
        theta, val = _ascend(lml_of, theta0, lo, hi)
        if val > best_val:
            best_theta, best_val = theta, val
    if best_theta is None or not math.isfinite(best_val):
        raise MetamodelFitError("no positive-definite fit found")

    hp = GpHyperparams(
        tuple(float(v) for v in np.exp(best_theta[:dim])),
        float(math.exp(best_theta[dim])),
        float(math.exp(best_theta[dim + 1])))
    return _build_model(hp, x_mean, x_scale, y_mean, y_scale, Z, t)
