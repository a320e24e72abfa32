"""The estimator family: MC, IS, metamodel-based AIS and transfer IS.

All four estimators share one weighted-campaign engine.  A campaign is a
sequence of runs; run ``i`` draws its scenario point and its simulator
seed from ``split_seed(base_seed, i, channel)``, so every run is a pure
function of ``(config, base_seed, i)``.  Runs may execute concurrently,
but accumulation happens strictly in index order and the stopping rule is
evaluated after every run, which makes histories identical for any worker
count.

Estimators:

* plain Monte Carlo: mean of the event indicator under p(x);
* importance sampling: indicator times a supplied p/q density ratio under
  a caller-provided proposal sampler;
* metamodel-based adaptive IS: proposal q(x) proportional to
  P(event | surrogate, x) * p(x), realized by acceptance-rejection, with
  the normalization constant estimated by cheap surrogate-only MC;
* transfer IS: identical algebra, but the surrogate comes from a cheap
  setup (optionally through the heterogeneous transfer), while runs
  execute in the trustworthy setup.

The transfer estimator also carries a surprise diagnostic: a run whose
weight dwarfs the running mean signals that the surrogate was blind to a
failure mode of the trustworthy setup.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .rng import split_seed, uniform_stream
from .transfer import PostTransferModel, TransferConfig

__all__ = [
    "Z_99",
    "RiskEstimate",
    "ConvergenceHistory",
    "NormalizationEstimate",
    "EstimationError",
    "ProposalStarvationError",
    "mc_rel_std",
    "stopping_reached",
    "optimal_proposal_toy",
    "estimate_normalization",
    "rejection_sample_q",
    "mc_estimate",
    "is_estimate",
    "ais_estimate",
    "tis_estimate",
]

# One-sided 99% normal quantile used by the stopping rule.
Z_99 = 2.3263
# Minimum runs before the stopping rule may fire.
_MIN_RUNS = 30

# Per-run seed channels.
_CH_PARAMS = 0
_CH_RUN = 1
# Seed channel for the internally-estimated normalization constant.
_CH_NORMALIZATION = 2 ** 32 + 17

# Candidates per acceptance-rejection block; fixed so accepted points
# never depend on scheduling or worker count.
_REJECT_BLOCK = 64
_MAX_REJECTIONS = 10 ** 6

# Runs are dispatched in fixed-size blocks regardless of worker count.
_DISPATCH_BLOCK = 32


class EstimationError(RuntimeError):
    """Raised when an estimator cannot continue (non-finite weight,
    simulator fault surfaced mid-campaign).

    When raised from inside a campaign, ``partial_history`` carries the
    runs accumulated before the failure so callers can flush diagnostics.
    """

    partial_history = None


class ProposalStarvationError(EstimationError):
    """Raised when acceptance-rejection rejects 10^6 candidates in a row,
    signaling a pathologically small normalization constant."""


@dataclass(frozen=True)
class RiskEstimate:
    """Final state of one estimation campaign.

    ``mean`` is the risk estimate; ``std_of_mean`` its estimated standard
    error from the sample variance of the per-run weighted contributions.
    ``rel_std`` follows the binomial form for plain MC and
    std_of_mean/mean for weighted estimators; infinity marks a campaign
    that saw no event.  ``upper_99`` is a one-sided bound: mean plus
    Z_99 standard errors, or the rule-of-three bound when no event was
    seen.  ``n_q`` counts surrogate training runs (0 for plain MC).
    """

    mean: float
    sample_variance_of_weights: float
    std_of_mean: float
    rel_std: float
    upper_99: float
    n_runs: int
    n_q: int

    def __post_init__(self) -> None:
        if self.mean < 0.0 or self.std_of_mean < 0.0:
            raise ValueError("mean and std_of_mean must be non-negative")
        if self.upper_99 < self.mean:
            raise ValueError("upper_99 must not undercut the mean")
        if self.n_runs < 1 or self.n_q < 0:
            raise ValueError("n_runs must be >= 1 and n_q >= 0")

    def to_json(self) -> str:
        return json.dumps({
            "mean": self.mean,
            "sample_variance_of_weights": self.sample_variance_of_weights,
            "std_of_mean": self.std_of_mean,
            # infinity (the no-event marker) is not valid JSON
            "rel_std": self.rel_std if math.isfinite(self.rel_std) else None,
            "upper_99": self.upper_99,
            "n_runs": self.n_runs,
            "n_q": self.n_q,
        })


@dataclass
class ConvergenceHistory:
    """Per-run records of a campaign, in run-index order.

    The running mean and running std-of-mean are streamed with Welford
    updates and are exactly recomputable from the weight prefix.  The
    surprise flag marks runs whose weight exceeded ten times the running
    mean weight of all earlier runs.
    """

    field_names: tuple[str, ...]
    params: np.ndarray
    seeds: list[int]
    J: np.ndarray
    weights: np.ndarray
    running_mean: np.ndarray
    running_std: np.ndarray
    surprise: np.ndarray

    def __len__(self) -> int:
        return len(self.weights)

    def to_csv(self, path: str) -> None:
        header = (["i"] + list(self.field_names)
                  + ["seed", "J", "weight", "running_mean", "running_std",
                     "surprise_flag"])
        lines = [",".join(header)]
        for i in range(len(self)):
            row = [str(i)]
            row += [repr(float(v)) for v in self.params[i]]
            row.append(str(self.seeds[i]))
            row += [repr(float(self.J[i])), repr(float(self.weights[i])),
                    repr(float(self.running_mean[i])),
                    repr(float(self.running_std[i]))]
            row.append(str(int(self.surprise[i])))
            lines.append(",".join(row))
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(lines) + "\n")


@dataclass(frozen=True)
class NormalizationEstimate:
    """MC estimate of the proposal normalization ∫P(E|M,x)p(x)dx."""

    value: float
    n_mc: int
    std: float

    def __post_init__(self) -> None:
        if not 0.0 < self.value < 1.0:
            raise ValueError("normalization must lie strictly in (0, 1)")
        if self.n_mc < 10 ** 4:
            raise ValueError("normalization needs at least 10^4 MC points")
        if self.std < 0.0:
            raise ValueError("std must be non-negative")


def mc_rel_std(l: float, N: int) -> float:
    """Relative standard deviation of plain MC: sqrt((1 - l)/(l N))."""
    if not 0.0 < l <= 1.0:
        raise ValueError("l must lie in (0, 1]")
    if N < 1:
        raise ValueError("N must be at least 1")
    return math.sqrt((1.0 - l) / (l * N))


def stopping_reached(estimate: RiskEstimate) -> bool:
    """One-sided precision target: Z_99 * std_of_mean <= mean / 2.

    Never true below 30 runs or while no event has been seen; stopping on
    a handful of runs is exactly the pathology the surprise diagnostic
    exists to expose.
    """
    if estimate.n_runs < _MIN_RUNS or estimate.mean <= 0.0:
        return False
    return Z_99 * estimate.std_of_mean <= 0.5 * estimate.mean


def optimal_proposal_toy(outcome_probs, event_flags) -> np.ndarray:
    """Zero-variance proposal q*(x) = P(E|x) p(x) / l on a discrete space."""
    p = np.asarray(outcome_probs, dtype=float)
    flags = np.asarray(event_flags, dtype=float)
    if p.ndim != 1 or p.shape != flags.shape:
        raise ValueError("probabilities and flags must be 1-D and aligned")
    if np.any(p < 0.0) or not np.all(np.isfinite(p)):
        raise ValueError("outcome probabilities must be finite and >= 0")
    l = float(p @ flags)
    if l <= 0.0:
        raise ValueError("no event outcome has positive probability")
    return p * flags / l


def estimate_normalization(metamodel, p_sampler, n_mc: int,
                           seed: int) -> NormalizationEstimate:
    """Surrogate-only MC of the normalization constant over p(x)."""
    if n_mc < 10 ** 4:
        raise ValueError("n_mc must be at least 10^4")
    X = p_sampler.sample_batch(seed, n_mc)
    P = np.asarray(metamodel.event_prob(X), dtype=float)
    value = float(P.mean())
    std = float(P.std(ddof=1) / math.sqrt(n_mc))
    return NormalizationEstimate(value=value, n_mc=n_mc, std=std)


class _FlooredModel:
    """Skew floor: replaces P with max(P, floor) in proposal and weights."""

    def __init__(self, model, floor: float):
        self.model = model
        self.floor = floor

    def event_prob(self, X) -> np.ndarray:
        return np.maximum(self.model.event_prob(X), self.floor)


def _rejection_chain(metamodel, p_sampler, chain_seed: int):
    """Draw one proposal point: x ~ p, accepted with P(E|M,x).

    Candidates come in fixed blocks of 64 per attempt round, so the
    accepted point is a pure function of the chain seed.  Returns the
    accepted x and its event probability.
    """
    rejected = 0
    round_idx = 0
    while rejected < _MAX_REJECTIONS:
        X = p_sampler.sample_batch(split_seed(chain_seed, 2 * round_idx),
                                   _REJECT_BLOCK)
        u = uniform_stream(split_seed(chain_seed, 2 * round_idx + 1),
                           _REJECT_BLOCK)
        P = np.asarray(metamodel.event_prob(X), dtype=float)
        hits = np.nonzero(u < P)[0]
        if hits.size:
            k = int(hits[0])
            return np.asarray(X[k], dtype=float), float(P[k])
        rejected += _REJECT_BLOCK
        round_idx += 1
    raise ProposalStarvationError(
        "10^6 consecutive proposal rejections; normalization is "
        "pathologically small")


def rejection_sample_q(metamodel, p_sampler, seed: int) -> np.ndarray:
    """Public acceptance-rejection draw from q ∝ P(E|M,x) p(x)."""
    x, _ = _rejection_chain(metamodel, p_sampler, seed)
    return x


def _history(field_names, rows) -> ConvergenceHistory:
    params = (np.asarray([r[0] for r in rows], dtype=float) if rows
              else np.empty((0, len(field_names))))
    return ConvergenceHistory(
        field_names=tuple(field_names), params=params,
        seeds=[r[1] for r in rows],
        J=np.asarray([r[2] for r in rows], dtype=float),
        weights=np.asarray([r[3] for r in rows], dtype=float),
        running_mean=np.asarray([r[4] for r in rows], dtype=float),
        running_std=np.asarray([r[5] for r in rows], dtype=float),
        surprise=np.asarray([r[6] for r in rows], dtype=bool))


def _finalize(field_names, rows, n_q, scale):
    n = len(rows)
    mean = float(rows[-1][4])
    std_of_mean = float(rows[-1][5])
    var = float(std_of_mean ** 2 * n)
    if mean > 0.0:
        rel = (mc_rel_std(mean, n) if scale is None
               else std_of_mean / mean)
        upper = mean + Z_99 * std_of_mean
    else:
        rel = math.inf
        upper = (1.0 if scale is None else scale) * 3.0 / n
    est = RiskEstimate(mean=mean, sample_variance_of_weights=var,
                       std_of_mean=std_of_mean, rel_std=rel,
                       upper_99=upper, n_runs=n, n_q=n_q)
    return est, _history(field_names, rows)


def _campaign(eval_run, field_names, N, *, scale, n_q, stopping, surprise,
              workers):
    """Shared engine: dispatch runs in fixed blocks, fold in index order.

    ``eval_run(i) -> (x, seed, J, weight)`` must be pure.  ``scale`` is
    None for plain-MC semantics (binomial rel_std) and the normalization
    constant for weighted estimators.  Returns (RiskEstimate, history).
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    rows = []
    count = 0
    mean = 0.0
    m2 = 0.0      # Welford sum of squared deviations
    stopped = False
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for lo in range(0, N, _DISPATCH_BLOCK):
            idxs = range(lo, min(lo + _DISPATCH_BLOCK, N))
            if pool is not None:
                results = list(pool.map(eval_run, idxs))
            else:
                results = [eval_run(i) for i in idxs]
            for x, seed, J, w in results:
                if not math.isfinite(w):
                    raise EstimationError(
                        f"non-finite weight {w!r} at run {count}")
                flag = surprise and count > 0 and mean > 0.0 and w > 10.0 * mean
                count += 1
                delta = w - mean
                mean += delta / count
                m2 += delta * (w - mean)
                if count > 1:
                    rstd = math.sqrt(m2 / (count - 1) / count)
                else:
                    rstd = 0.0
                rows.append((np.atleast_1d(np.asarray(x, dtype=float)),
                             seed, J, w, mean, rstd, flag))
                if stopping and count >= _MIN_RUNS and mean > 0.0 \
                        and Z_99 * rstd <= 0.5 * mean:
                    stopped = True
                    break
            if stopped:
                break
    except EstimationError as err:
        # Callers flushing diagnostics get whatever accumulated so far.
        err.partial_history = _history(field_names, rows)
        raise
    finally:
        if pool is not None:
            pool.shutdown(wait=False)
    return _finalize(field_names, rows, n_q, scale)


def _param_fields(p_sampler, dim: int) -> tuple[str, ...]:
    names = getattr(p_sampler, "field_names", None)
    if names is not None and len(names) == dim:
        return tuple(names)
    return tuple(f"x{i}" for i in range(dim)) if dim > 1 else ("x",)


def _draw_one(sampler, seed: int) -> np.ndarray:
    """One scenario vector from a sampler, preferring the batch API."""
    if hasattr(sampler, "sample_batch"):
        return np.asarray(sampler.sample_batch(seed, 1)[0], dtype=float)
    return np.atleast_1d(np.asarray(sampler.sample(seed), dtype=float))


def mc_estimate(runner, p_sampler, N: int, base_seed: int, *,
                stopping: bool = False, workers: int = 1):
    """Plain Monte Carlo: mean of J over N p(x) draws.

    Run i draws its point with split_seed(base_seed, i, 0) and its
    simulator seed with split_seed(base_seed, i, 1); ``runner(x, seed)``
    receives the scenario vector and returns the event indicator.
    """

    def eval_run(i: int):
        x = _draw_one(p_sampler, split_seed(base_seed, i, _CH_PARAMS))
        seed = split_seed(base_seed, i, _CH_RUN)
        J = float(runner(x, seed))
        return x, seed, J, J

    probe = _draw_one(p_sampler, split_seed(base_seed, 0, _CH_PARAMS))
    fields = _param_fields(p_sampler, len(probe))
    return _campaign(eval_run, fields, N, scale=None, n_q=0,
                     stopping=stopping, surprise=False, workers=workers)


def is_estimate(runner, q_sampler, p_over_q_weight, N: int, base_seed: int,
                *, stopping: bool = False, workers: int = 1):
    """Importance sampling with an explicit proposal and density ratio.

    With q = p and a unit weight function this is bit-identical to
    mc_estimate on the same base seed.
    """

    def eval_run(i: int):
        x = _draw_one(q_sampler, split_seed(base_seed, i, _CH_PARAMS))
        seed = split_seed(base_seed, i, _CH_RUN)
        J = float(runner(x, seed))
        return x, seed, J, J * float(p_over_q_weight(x))

    probe = _draw_one(q_sampler, split_seed(base_seed, 0, _CH_PARAMS))
    fields = _param_fields(q_sampler, len(probe))
    return _campaign(eval_run, fields, N, scale=1.0, n_q=0,
                     stopping=stopping, surprise=False, workers=workers)


def _weighted_metamodel_estimate(runner, proposal_model, p_sampler, n_mc, N,
                                 base_seed, *, stopping, skew_floor, n_q,
                                 surprise, workers, normalization):
    if skew_floor:
        if not 0.0 < skew_floor < 1.0:
            raise ValueError("skew floor must lie in (0, 1)")
        proposal_model = _FlooredModel(proposal_model, skew_floor)
        normalization = None    # floored P changes the integral
    if normalization is None:
        normalization = estimate_normalization(
            proposal_model, p_sampler, n_mc,
            split_seed(base_seed, _CH_NORMALIZATION))
    l_m = normalization.value

    def eval_run(i: int):
        x, P = _rejection_chain(proposal_model, p_sampler,
                                split_seed(base_seed, i, _CH_PARAMS))
        seed = split_seed(base_seed, i, _CH_RUN)
        J = float(runner(x, seed))
        return x, seed, J, l_m * J / P

    probe, _ = _rejection_chain(proposal_model, p_sampler,
                                split_seed(base_seed, 0, _CH_PARAMS))
    fields = _param_fields(p_sampler, len(np.atleast_1d(probe)))
    est, hist = _campaign(eval_run, fields, N, scale=l_m, n_q=n_q,
                          stopping=stopping, surprise=surprise,
                          workers=workers)
    return est, hist, normalization


def ais_estimate(runner, metamodel, p_sampler, n_mc: int, N: int,
                 base_seed: int, *, stopping: bool = False,
                 skew_floor: float = 0.0, n_q: int = 0, workers: int = 1,
                 normalization: NormalizationEstimate | None = None):
    """Metamodel-based adaptive IS: surrogate and runs share one setup.

    l = l_M * mean(J_i / P(E|M,x_i)) with x_i accepted from p with
    probability P(E|M,x_i).  The normalization l_M comes from
    surrogate-only MC over n_mc p(x) draws unless supplied.
    """
    est, hist, _ = _weighted_metamodel_estimate(
        runner, metamodel, p_sampler, n_mc, N, base_seed,
        stopping=stopping, skew_floor=skew_floor, n_q=n_q, surprise=False,
        workers=workers, normalization=normalization)
    return est, hist


def tis_estimate(runner, metamodel, transfer_mode: str, p_sampler,
                 n_mc: int, N: int, base_seed: int, *,
                 stopping: bool = False, skew_floor: float = 0.0,
                 n_q: int = 0, workers: int = 1,
                 transfer_config: TransferConfig | None = None,
                 normalization: NormalizationEstimate | None = None):
    """Transfer IS: proposal from a cheap-setup surrogate, runs in the
    trustworthy setup.

    ``pre`` mode scores scenario points with the surrogate directly;
    ``post`` mode scores them through the heterogeneous transfer.  Runs
    always consume the original scenario point.  No skew floor is applied
    unless requested; a positive floor replaces P with max(P, floor) in
    both the proposal and the weights and re-estimates the normalization.
    Histories flag surprise events: runs whose weight exceeds ten times
    the running mean weight.
    """
    if transfer_mode not in ("pre", "post"):
        raise ValueError("transfer_mode must be 'pre' or 'post'")
    proposal = metamodel
    if transfer_mode == "post":
        proposal = PostTransferModel(metamodel, transfer_config)
    est, hist, _ = _weighted_metamodel_estimate(
        runner, proposal, p_sampler, n_mc, N, base_seed,
        stopping=stopping, skew_floor=skew_floor, n_q=n_q, surprise=True,
        workers=workers, normalization=normalization)
    return est, hist
