"""Batch front-end for estimation campaigns.

Five subcommands: ``synth-data`` materializes the synthetic exposure
dataset, ``train-metamodel`` runs a Sobol design and fits the surrogate,
``run-campaign`` executes an estimator to its stopping criterion,
``compare`` tabulates the cost accounting of several campaign reports,
and ``dump-trace`` writes the frame-by-frame trace of a single run.

Every command is a deterministic function of its config file and seed;
output files carry no timestamps, so re-runs are byte-identical.  Exit
codes: 0 success, 2 config validation error, 3 runtime estimation error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

from .campaign import (CampaignConfig, CampaignReport, ConfigError,
                       TrainedMetamodel, build_sampler, comparison_rows,
                       run_campaign, train_metamodel)
from .density import params_from_row, synthesize_dataset
from .estimate import EstimationError
from .metamodel import MetamodelFitError
from .rng import split_seed
from .sim import SimulationFault, run_hifi

__all__ = ["main"]

_TABLE_HEADER = ("Approach", "Cost N_q", "N_l", "Cost N_l", "Total Cost",
                 "Factor")


def _load_config(args) -> CampaignConfig:
    cfg = CampaignConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, base_seed=args.seed)
    if getattr(args, "workers", None) is not None:
        cfg = dataclasses.replace(cfg, workers=args.workers)
    return cfg


def _cmd_synth_data(args) -> int:
    cfg = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    ds = synthesize_dataset(cfg.n_hours, seed=cfg.data_seed)
    path = os.path.join(args.out, "dataset.csv")
    ds.to_csv(path)
    print(f"wrote {path}: {ds.n_rows} hourly rows, "
          f"{int(ds.ped_count.sum())} observed jaywalkers")
    return 0


def _cmd_train_metamodel(args) -> int:
    cfg = _load_config(args)
    if cfg.approach == "mc":
        raise ConfigError("approach mc does not use a metamodel")
    os.makedirs(args.out, exist_ok=True)
    trained = train_metamodel(cfg)
    path = os.path.join(args.out, "metamodel.json")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(trained.to_json() + "\n")
    norm = trained.normalization
    print(f"trained {cfg.approach} surrogate on {trained.tier}: "
          f"n_q={trained.n_q} l_hat_M={norm.value:.6f} "
          f"(mc std {norm.std:.2e}, n={norm.n_mc}); wrote {path}")
    return 0


def _cmd_run_campaign(args) -> int:
    cfg = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    trace_dir = None
    if args.trace:
        trace_dir = os.path.join(args.out, "traces")
        os.makedirs(trace_dir, exist_ok=True)
    trained = None
    if cfg.approach != "mc" and cfg.metamodel_path is not None:
        with open(cfg.metamodel_path, "r", encoding="utf-8") as fh:
            trained = TrainedMetamodel.from_json(fh.read())
    hist_path = os.path.join(args.out, "history.csv")
    try:
        report, history = run_campaign(cfg, trained=trained,
                                       trace_dir=trace_dir)
    except EstimationError as err:
        partial = getattr(err, "partial_history", None)
        if partial is not None and len(partial):
            partial.to_csv(hist_path)
            print(f"flushed {len(partial)} runs to {hist_path}",
                  file=sys.stderr)
        raise
    history.to_csv(hist_path)
    report_path = os.path.join(args.out, "report.json")
    with open(report_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(report.to_json() + "\n")
    est = report.estimate
    print(f"{report.approach}: l_hat={est.mean:.6f} "
          f"std_of_mean={est.std_of_mean:.2e} n_l={report.n_l} "
          f"stopped={str(report.stopped).lower()} "
          f"surprises={report.surprise_count} "
          f"total_cost={report.total_cost:.4f}")
    return 0


def _cmd_compare(args) -> int:
    reports = []
    for path in args.reports:
        with open(path, "r", encoding="utf-8") as fh:
            reports.append(CampaignReport.from_json(fh.read()))
    try:
        rows = comparison_rows(reports)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "comparison.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["approach", "cost_n_q", "n_l", "cost_n_l",
                         "total_cost", "factor"])
        for r in rows:
            writer.writerow([r["approach"], repr(r["cost_n_q"]), r["n_l"],
                             repr(r["cost_n_l"]), repr(r["total_cost"]),
                             repr(r["factor"])])
    widths = [10, 10, 8, 10, 12, 8]
    print("  ".join(h.ljust(w) for h, w in zip(_TABLE_HEADER, widths)))
    for r in rows:
        cells = [r["approach"], f"{r['cost_n_q']:.4f}", str(r["n_l"]),
                 f"{r['cost_n_l']:.4f}", f"{r['total_cost']:.4f}",
                 f"{r['factor']:.2f}"]
        print("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    print(f"wrote {path}")
    return 0


def _cmd_dump_trace(args) -> int:
    cfg = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    arts = build_sampler(cfg)
    # Reproduces run index 0 of a campaign with this config and seed.
    row = arts.sampler.sample_batch(split_seed(cfg.base_seed, 0, 0), 1)[0]
    run_seed = split_seed(cfg.base_seed, 0, 1)
    outcome, trace = run_hifi(params_from_row(row), run_seed, cfg.sim,
                              return_trace=True)
    path = os.path.join(args.out, "trace.csv")
    trace.to_csv(path)
    print(f"d_min_star={outcome.d_min_star:.6f} "
          f"collided={str(outcome.collided).lower()} "
          f"frames={outcome.n_frames}; wrote {path}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avrisk",
        description="Rare-event collision risk estimation campaigns")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, trace=False):
        p.add_argument("--config", required=True, help="campaign config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override base_seed from the config")
        p.add_argument("--workers", type=int, default=None,
                       help="concurrent simulator evaluations")
        if trace:
            p.add_argument("--trace", action="store_true",
                           help="write per-run frame CSVs")

    common(sub.add_parser("synth-data", help="write the exposure dataset"))
    common(sub.add_parser("train-metamodel",
                          help="fit the derivation-tier surrogate"))
    common(sub.add_parser("run-campaign", help="execute one estimator"),
           trace=True)
    common(sub.add_parser("dump-trace",
                          help="frame-by-frame CSV of campaign run 0"))
    cmp_p = sub.add_parser("compare", help="cost comparison of reports")
    cmp_p.add_argument("reports", nargs="+", help="campaign report JSONs")
    cmp_p.add_argument("--out", required=True, help="output directory")
    return parser


_HANDLERS = {
    "synth-data": _cmd_synth_data,
    "train-metamodel": _cmd_train_metamodel,
    "run-campaign": _cmd_run_campaign,
    "compare": _cmd_compare,
    "dump-trace": _cmd_dump_trace,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError,
            KeyError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (EstimationError, MetamodelFitError, SimulationFault,
            ValueError) as err:
        print(f"estimation error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
