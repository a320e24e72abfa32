"""Campaign orchestration: dataset -> density -> design -> estimator.

A campaign is fully described by a JSON config and a base seed.  The
scenario side (dataset synthesis, KDE fit, design box, surrogate
training) is keyed off ``data_seed`` so that every approach and every
replication estimates the same underlying risk; the estimation side is
keyed off ``base_seed``.  Reports therefore compare across approaches
and replicate across seeds without retraining.

Config files are strict: unknown keys are rejected so typos fail loudly
instead of silently running defaults.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import estimate as est_mod
from .density import (NaturalisticDataset, ParamSampler, PARAM_FIELDS,
                      draw_environment_samples, fit_kde_mlcv, params_from_row,
                      synthesize_dataset)
from .estimate import (ConvergenceHistory, NormalizationEstimate,
                       RiskEstimate, estimate_normalization)
from .metamodel import DesignBox, GpModel, fit_gp, sobol_points
from .rng import split_seed
from .scenario import indicator_collision
from .sim import (LoFiParams, SimConfig, SimulationFault, run_hifi,
                  run_lofi_post, run_lofi_pre)
from .transfer import (LOFI_FIELDS, PostTransferModel, TransferConfig,
                       transfer_post_batch)

__all__ = [
    "APPROACHES",
    "CostModel",
    "CampaignConfig",
    "ConfigError",
    "TrainedMetamodel",
    "CampaignReport",
    "build_sampler",
    "design_runner",
    "train_metamodel",
    "run_campaign",
    "comparison_rows",
]

APPROACHES = ("mc", "ais", "tis-pre", "tis-post")

# Derivation tier by approach: surrogate training runs execute here.
_DERIVATION_TIER = {"ais": "hifi", "tis-pre": "lofi-pre",
                    "tis-post": "lofi-post"}

# Pinned design ranges for the abstraction dimensions of the cheap
# parametric setup; the transferred environment collapses sigma_noise to
# a constant, so percentile bounds are unusable there.
_POST_DESIGN_RANGES = {"p_detect": (0.4, 1.0), "sigma_noise": (0.0, 0.05),
                       "mu_fric": (0.5, 1.0)}

# Scenario-pipeline seed channels (keyed off data_seed).
_CH_ENV = 11
_CH_BOX = 12
_CH_DESIGN = 13
_CH_FIT = 14
_CH_NORM = 15


class ConfigError(ValueError):
    """Invalid campaign configuration (schema or invariant violation)."""


@dataclass(frozen=True)
class CostModel:
    """Declarative run-cost accounting.

    A run in tier t costs seconds[t] * rate[t] / 3600 currency units;
    the defaults mirror per-run wall times of 90/75/27 seconds on
    machines priced 0.752 and 0.2688 per hour.
    """

    hifi_seconds: float = 90.0
    lofi_pre_seconds: float = 75.0
    lofi_post_seconds: float = 27.0
    hifi_rate: float = 0.752
    lofi_pre_rate: float = 0.2688
    lofi_post_rate: float = 0.2688

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0.0:
                raise ConfigError(f"cost model field {f.name} must be >= 0")

    def per_run(self, tier: str) -> float:
        sec, rate = {
            "hifi": (self.hifi_seconds, self.hifi_rate),
            "lofi-pre": (self.lofi_pre_seconds, self.lofi_pre_rate),
            "lofi-post": (self.lofi_post_seconds, self.lofi_post_rate),
        }[tier]
        return sec * rate / 3600.0


def _dataclass_from_dict(cls, data: dict, what: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid {what}: {err}") from err


@dataclass(frozen=True)
class CampaignConfig:
    """Everything a campaign needs, JSON-round-trippable.

    ``sim`` and ``transfer`` hold overrides of the simulator constants
    and of the environment-to-parametric mapping; together with the
    dataset/density settings they form the scenario fingerprint that
    reports must share to be comparable.
    """

    approach: str
    base_seed: int = 0
    n_q: int = 200
    n_mc: int = 100_000
    max_runs: int = 20_000
    stopping: bool = True
    # None resolves per approach.  Proposals whose event model can be
    # overconfidently wrong get a probability floor of 0.2: the same-setup
    # baseline (its surrogate is sharp exactly where its small design
    # looked) and the cross-parameterization transfer (the hand-written
    # abstraction map compounds surrogate error).  The same-parameterization
    # transfer trains on a deliberately conservative cheap setup whose risk
    # envelope already over-covers the trustworthy one, so it runs
    # unhedged.  An explicit value (including 0.0) overrides.
    skew_floor: float | None = None
    workers: int = 1
    metamodel_path: str | None = None
    # scenario side
    data_seed: int = 20260201
    n_hours: int = 74_460
    n_kde_fit: int = 4_000
    n_box: int = 100_000
    sim: SimConfig = field(default_factory=SimConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)
    cost: CostModel = field(default_factory=CostModel)

    def __post_init__(self) -> None:
        if self.approach not in APPROACHES:
            raise ConfigError(f"approach must be one of {APPROACHES}")
        if self.approach != "mc" and self.n_q < 10:
            raise ConfigError("n_q must be >= 10 for metamodel approaches")
        if self.max_runs < 1:
            raise ConfigError("max_runs must be >= 1")
        if self.n_mc < 10 ** 4:
            raise ConfigError("n_mc must be >= 10^4")
        if self.skew_floor is not None and not 0.0 <= self.skew_floor < 1.0:
            raise ConfigError("skew_floor must lie in [0, 1)")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.n_kde_fit < 10 or self.n_box < 10 ** 3 or self.n_hours < 24:
            raise ConfigError("n_kde_fit/n_box/n_hours too small")

    @property
    def effective_skew_floor(self) -> float:
        if self.skew_floor is not None:
            return self.skew_floor
        return 0.2 if self.approach in ("ais", "tis-post") else 0.0

    @classmethod
    def from_dict(cls, data: dict) -> "CampaignConfig":
        data = dict(data)
        for key, sub in (("sim", SimConfig), ("transfer", TransferConfig),
                         ("cost", CostModel)):
            if key in data:
                if not isinstance(data[key], dict):
                    raise ConfigError(f"{key} must be an object")
                data[key] = _dataclass_from_dict(sub, data[key], key)
        return _dataclass_from_dict(cls, data, "config")

    @classmethod
    def from_json(cls, text: str) -> "CampaignConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from err
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str) -> "CampaignConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    def fingerprint(self) -> dict:
        """Scenario identity: any mismatch makes reports incomparable."""
        return {
            "data_seed": self.data_seed,
            "n_hours": self.n_hours,
            "n_kde_fit": self.n_kde_fit,
            "n_box": self.n_box,
            "sim": dataclasses.asdict(self.sim),
            "transfer": dataclasses.asdict(self.transfer),
        }


@dataclass
class ScenarioArtifacts:
    """Shared derivations: sampler, box samples, design box per approach."""

    sampler: ParamSampler
    box_samples: np.ndarray


def build_sampler(config: CampaignConfig) -> ScenarioArtifacts:
    dataset = synthesize_dataset(config.n_hours, seed=config.data_seed)
    env = draw_environment_samples(dataset, config.n_kde_fit,
                                   seed=split_seed(config.data_seed, _CH_ENV))
    kde = fit_kde_mlcv(env)
    sampler = ParamSampler(kde=kde)
    box_samples = sampler.sample_batch(split_seed(config.data_seed, _CH_BOX),
                                       config.n_box)
    return ScenarioArtifacts(sampler=sampler, box_samples=box_samples)


def _design_box(config: CampaignConfig, arts: ScenarioArtifacts,
                tier: str) -> DesignBox:
    if tier in ("hifi", "lofi-pre"):
        return DesignBox.from_samples(arts.box_samples, PARAM_FIELDS)
    T = transfer_post_batch(arts.box_samples, config.transfer)
    lo = np.percentile(T[:, :3], 1.0, axis=0)
    hi = np.percentile(T[:, :3], 99.0, axis=0)
    lows = [float(v) for v in lo] + [r[0] for r in
                                     _POST_DESIGN_RANGES.values()]
    highs = [float(v) for v in hi] + [r[1] for r in
                                      _POST_DESIGN_RANGES.values()]
    return DesignBox(LOFI_FIELDS, tuple(lows), tuple(highs))


def design_runner(tier: str, sim: SimConfig):
    """Map a tier name to a (row, seed) -> Outcome callable."""
    if tier == "hifi":
        return lambda row, seed: run_hifi(params_from_row(row), seed, sim)
    if tier == "lofi-pre":
        return lambda row, seed: run_lofi_pre(params_from_row(row), seed, sim)
    if tier == "lofi-post":
        return lambda row, seed: run_lofi_post(LoFiParams(*map(float, row)),
                                               seed, sim)
    raise ValueError(f"unknown tier {tier!r}")


@dataclass
class TrainedMetamodel:
    """A fitted surrogate plus its provenance and normalization."""

    tier: str
    box: DesignBox
    model: GpModel
    normalization: NormalizationEstimate
    n_q: int
    fingerprint: dict

    def proposal_model(self, transfer: TransferConfig):
        if self.tier == "lofi-post":
            return PostTransferModel(self.model, transfer)
        return self.model

    def to_json(self) -> str:
        return json.dumps({
            "tier": self.tier,
            "box": json.loads(self.box.to_json()),
            "model": json.loads(self.model.to_json()),
            "normalization": {
                "value": self.normalization.value,
                "n_mc": self.normalization.n_mc,
                "std": self.normalization.std,
            },
            "n_q": self.n_q,
            "fingerprint": self.fingerprint,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TrainedMetamodel":
        d = json.loads(text)
        return cls(tier=d["tier"],
                   box=DesignBox.from_json(json.dumps(d["box"])),
                   model=GpModel.from_json(json.dumps(d["model"])),
                   normalization=NormalizationEstimate(**d["normalization"]),
                   n_q=int(d["n_q"]), fingerprint=d["fingerprint"])


def train_metamodel(config: CampaignConfig,
                    arts: ScenarioArtifacts | None = None) -> TrainedMetamodel:
    """Run the Sobol design in the derivation tier and fit the surrogate.

    The proposal normalization is estimated here as well, over ``n_mc``
    p(x) draws, so campaigns sharing the surrogate share it too.
    """
    if config.approach == "mc":
        raise ConfigError("mc needs no metamodel")
    tier = _DERIVATION_TIER[config.approach]
    arts = arts or build_sampler(config)
    box = _design_box(config, arts, tier)
    X = sobol_points(config.n_q, box)
    runner = design_runner(tier, config.sim)
    y = np.empty(config.n_q)
    for i in range(config.n_q):
        y[i] = runner(X[i], split_seed(config.data_seed, _CH_DESIGN, i)) \
            .d_min_star
    model = fit_gp(X, y, seed=split_seed(config.data_seed, _CH_FIT))
    proposal = (PostTransferModel(model, config.transfer)
                if tier == "lofi-post" else model)
    normalization = estimate_normalization(
        proposal, arts.sampler, config.n_mc,
        split_seed(config.data_seed, _CH_NORM))
    return TrainedMetamodel(tier=tier, box=box, model=model,
                            normalization=normalization, n_q=config.n_q,
                            fingerprint=config.fingerprint())


@dataclass
class CampaignReport:
    """Final accounting of one estimation campaign."""

    approach: str
    base_seed: int
    estimate: RiskEstimate
    n_q: int
    n_l: int
    derivation_cost: float
    estimation_cost: float
    stopped: bool
    surprise_count: int
    normalization: float
    fingerprint: dict

    @property
    def total_cost(self) -> float:
        return self.derivation_cost + self.estimation_cost

    def to_json(self) -> str:
        return json.dumps({
            "approach": self.approach,
            "base_seed": self.base_seed,
            "estimate": json.loads(self.estimate.to_json()),
            "n_q": self.n_q,
            "n_l": self.n_l,
            "cost": {
                "derivation": self.derivation_cost,
                "estimation": self.estimation_cost,
                "total": self.total_cost,
            },
            "stopped": self.stopped,
            "surprise_count": self.surprise_count,
            "normalization": self.normalization,
            "fingerprint": self.fingerprint,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "CampaignReport":
        d = json.loads(text)
        e = d["estimate"]
        rel = e["rel_std"]
        est = RiskEstimate(
            mean=e["mean"],
            sample_variance_of_weights=e["sample_variance_of_weights"],
            std_of_mean=e["std_of_mean"],
            rel_std=math.inf if rel is None else rel,
            upper_99=e["upper_99"], n_runs=e["n_runs"], n_q=e["n_q"])
        cost = d["cost"]
        if abs(cost["total"] - (cost["derivation"] + cost["estimation"])) \
                > 1e-9 * max(1.0, cost["total"]):
            raise ValueError("report cost breakdown does not add up")
        return cls(approach=d["approach"], base_seed=d["base_seed"],
                   estimate=est, n_q=d["n_q"], n_l=d["n_l"],
                   derivation_cost=cost["derivation"],
                   estimation_cost=cost["estimation"], stopped=d["stopped"],
                   surprise_count=d["surprise_count"],
                   normalization=d["normalization"],
                   fingerprint=d["fingerprint"])


def _hifi_indicator_runner(config: CampaignConfig, trace_dir: str | None):
    sim = config.sim

    def runner(row, seed):
        try:
            if trace_dir is None:
                out = run_hifi(params_from_row(row), seed, sim)
            else:
                out, trace = run_hifi(params_from_row(row), seed, sim,
                                      return_trace=True)
                trace.to_csv(os.path.join(trace_dir,
                                          f"run_{seed:020d}.csv"))
            return indicator_collision(out)
        except SimulationFault as err:
            raise est_mod.EstimationError(
                f"simulation fault at seed {seed}: {err}") from err

    return runner


def run_campaign(config: CampaignConfig,
                 trained: TrainedMetamodel | None = None,
                 arts: ScenarioArtifacts | None = None,
                 trace_dir: str | None = None):
    """Execute the configured estimator; returns (report, history).

    ``trained`` short-circuits surrogate training (it must match the
    config fingerprint); MC campaigns ignore it.
    """
    arts = arts or build_sampler(config)
    runner = _hifi_indicator_runner(config, trace_dir)
    if config.approach == "mc":
        est, hist = est_mod.mc_estimate(
            runner, arts.sampler, config.max_runs, config.base_seed,
            stopping=config.stopping, workers=config.workers)
        trained_n_q = 0
        derivation = 0.0
        norm_value = math.nan
    else:
        if trained is None:
            trained = train_metamodel(config, arts)
        elif trained.fingerprint != config.fingerprint():
            raise ConfigError(
                "metamodel was trained on a different scenario config")
        elif trained.tier != _DERIVATION_TIER[config.approach]:
            raise ConfigError(
                f"metamodel tier {trained.tier!r} does not match "
                f"approach {config.approach!r}")
        floor = config.effective_skew_floor
        norm = trained.normalization if floor == 0.0 else None
        if config.approach == "ais":
            est, hist = est_mod.ais_estimate(
                runner, trained.model, arts.sampler, config.n_mc,
                config.max_runs, config.base_seed, stopping=config.stopping,
                skew_floor=floor, n_q=trained.n_q,
                workers=config.workers, normalization=norm)
        else:
            mode = "pre" if config.approach == "tis-pre" else "post"
            est, hist = est_mod.tis_estimate(
                runner, trained.model, mode, arts.sampler, config.n_mc,
                config.max_runs, config.base_seed, stopping=config.stopping,
                skew_floor=floor, n_q=trained.n_q,
                workers=config.workers, transfer_config=config.transfer,
                normalization=norm)
        trained_n_q = trained.n_q
        derivation = trained_n_q * config.cost.per_run(trained.tier)
        norm_value = trained.normalization.value
    report = CampaignReport(
        approach=config.approach, base_seed=config.base_seed, estimate=est,
        n_q=trained_n_q, n_l=est.n_runs, derivation_cost=derivation,
        estimation_cost=est.n_runs * config.cost.per_run("hifi"),
        stopped=est_mod.stopping_reached(est) if config.stopping else False,
        surprise_count=int(hist.surprise.sum()),
        normalization=norm_value, fingerprint=config.fingerprint())
    return report, hist


def comparison_rows(reports: list[CampaignReport]) -> list[dict]:
    """Cost comparison across reports sharing one scenario fingerprint.

    Factor normalizes total cost to the cheapest report's total.
    """
    if len(reports) < 2:
        raise ValueError("comparison needs at least 2 reports")
    fp = reports[0].fingerprint
    for r in reports[1:]:
        if r.fingerprint != fp:
            raise ValueError("reports come from different scenario configs; "
                             "comparison would be meaningless")
    cheapest = min(r.total_cost for r in reports)
    rows = []
    for r in reports:
        rows.append({
            "approach": r.approach,
            "cost_n_q": r.derivation_cost,
            "n_l": r.n_l,
            "cost_n_l": r.estimation_cost,
            "total_cost": r.total_cost,
            "factor": r.total_cost / cheapest if cheapest > 0
            else math.inf,
        })
    return rows
