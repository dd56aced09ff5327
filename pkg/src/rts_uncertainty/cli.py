"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical error.
The log level is read from ``RTS_UNCERTAINTY_LOG`` (default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import logging
import os
import sys
import time
from pathlib import Path

from . import io
from .analysis import PLOT_COLUMNS, analyze
from .config import RunConfig, parse_buckets
from .errors import ConfigError, DataError, RtsError, StageError
from .montecarlo import SOURCES
from .pipeline import (
    _calibrate,
    _check_inputs,
    _run_stage,
    build_ground_truth,
    covariance_stage,
    fusion_stage,
    interpolation_stage,
)
from .simulate import Scenario, TrajectorySet, generate_truth, simulate_measurements

LOG_ENV = "RTS_UNCERTAINTY_LOG"


def _load_config(args):
    if args.config is None:
        raise ConfigError("--config is required")
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.samples is not None:
        cfg.measurement_samples = cfg.calibration_samples = args.samples
    if getattr(args, "workers", None) is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg.workers = args.workers
    if args.out is not None:
        cfg.out_dir = Path(args.out)
    if getattr(args, "buckets", None):
        cfg.buckets = parse_buckets(args.buckets)
    return cfg


def load_inputs(cfg: RunConfig) -> TrajectorySet:
    if len(cfg.measurements) != 3:
        raise ConfigError("inputs.measurements must name three measurement files")
    streams = {i: io.read_measurement_csv(p, i) for i, p in sorted(cfg.measurements.items())}
    if cfg.reference is None:
        raise ConfigError("inputs.reference is required")
    reference = io.read_reference_json(cfg.reference)
    gcps = None
    if cfg.gcps is not None:
        gcps = _run_stage("calibration", io.read_gcp_csv, cfg.gcps)
    return TrajectorySet(streams, gcps, reference)


def cmd_simulate(args):
    if args.config is None:
        raise ConfigError("--config (scenario file) is required")
    d = io.load_json(args.config)
    if not isinstance(d, dict):
        raise ConfigError(f"{args.config}: top level must be an object")
    scenario = Scenario.from_dict(d)
    if args.seed is not None:
        scenario.seed = args.seed
    out = Path(args.out or "sim")
    truth = generate_truth(scenario)
    ts = simulate_measurements(scenario)
    files = {}
    for rts_id, stream in ts.streams.items():
        io.write_measurement_csv(out / f"rts{rts_id}.csv", stream)
        files[str(rts_id)] = f"rts{rts_id}.csv"
    io.write_gcp_csv(out / "gcps.csv", ts.gcps)
    io.write_reference_json(out / "reference.json", ts.reference)
    io.write_truth_json(out / "truth.json", truth, scenario)
    run = {
        "seed": scenario.seed,
        "budget": scenario.budget.to_dict(),
        "atmosphere": scenario.atmosphere.to_dict(),
        "inputs": {"measurements": files, "gcps": "gcps.csv", "reference": "reference.json"},
        "output": {"dir": "out"},
    }
    io.dump_json(out / "config.json", run)
    print(f"wrote {len(ts.streams)} streams, GCPs, reference and truth to {out}")


def cmd_calibrate(args):
    cfg = _load_config(args)
    ts = load_inputs(cfg)
    if ts.gcps is None:
        raise ConfigError("inputs.gcps is required for calibration")
    cal = _run_stage("calibration", _calibrate, ts, cfg)
    io.write_calibration_json(cfg.out_dir / "calibration.json", cal)


def cmd_covariance(args):
    cfg = _load_config(args)
    ts = load_inputs(cfg)
    _check_inputs(ts)
    _, records = covariance_stage(ts, cfg, cfg.workers)
    io.write_records(cfg.out_dir / "prism_covariances.jsonl", records)


def cmd_interpolate(args):
    cfg = _load_config(args)
    ts = load_inputs(cfg)
    _check_inputs(ts)
    _, records = covariance_stage(ts, cfg, cfg.workers)
    _, triplets, _ = interpolation_stage(records, ts.rts_ids, cfg)
    io.write_triplets(cfg.out_dir / "triplets.jsonl", triplets)


def cmd_fuse(args):
    cfg = _load_config(args)
    ts = load_inputs(cfg)
    _check_inputs(ts)
    _, records = covariance_stage(ts, cfg, cfg.workers)
    _, triplets, _ = interpolation_stage(records, ts.rts_ids, cfg)
    poses = fusion_stage(triplets, ts.reference, cfg, cfg.workers)
    io.write_ground_truth(cfg.out_dir / "ground_truth.jsonl", poses)


def cmd_pipeline(args):
    cfg = _load_config(args)
    start = time.perf_counter()
    ts = load_inputs(cfg)
    gt = build_ground_truth(ts, cfg)
    out = cfg.out_dir
    io.write_ground_truth(out / "ground_truth.jsonl", gt.poses)
    io.write_records(out / "prism_covariances.jsonl", gt.records)
    io.write_calibration_json(out / "calibration.json", gt.calibration)
    for source, poses in gt.source_poses.items():
        io.write_ground_truth(out / f"ground_truth_{source}.jsonl", poses)
    report = analyze(gt.records, gt.poses, cfg.buckets, gt.source_poses or None)
    summary = {
        "readings": len(gt.records),
        "query_times": len(gt.query_times),
        "triplets": gt.n_assembled,
        "poses": len(gt.poses),
        "seconds": round(time.perf_counter() - start, 3),
        "report": report.to_dict(),
    }
    io.dump_json(out / "summary.json", summary)
    print(f"{len(gt.poses)} poses from {gt.n_assembled} triplets written to {out}")


def cmd_analyze(args):
    cfg = _load_config(args)
    out = cfg.out_dir
    records = io.read_records(out / "prism_covariances.jsonl")
    poses = io.read_ground_truth(out / "ground_truth.jsonl")
    source_poses = {
        s: io.read_ground_truth(out / f"ground_truth_{s}.jsonl")
        for s in SOURCES
        if (out / f"ground_truth_{s}.jsonl").exists()
    }
    report = analyze(records, poses, cfg.buckets, source_poses or None)
    io.dump_json(out / "report.json", report.to_dict())
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLOT_COLUMNS)
    w.writerows(report.rows)
    io.atomic_write_text(out / "plot_data.csv", buf.getvalue())
    print(f"report for {len(records)} readings and {len(poses)} poses written to {out}")


COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "covariance": cmd_covariance,
    "interpolate": cmd_interpolate,
    "fuse": cmd_fuse,
    "pipeline": cmd_pipeline,
    "analyze": cmd_analyze,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rts-uncertainty",
        description="Uncertainty-aware ground truth from three robotic total stations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "generate a synthetic deployment from a scenario file",
        "calibrate": "Monte-Carlo extrinsic calibration from GCP readings",
        "covariance": "per-reading covariances in the world frame",
        "interpolate": "prism triplets on the query grid",
        "fuse": "fused poses with 6x6 covariances",
        "pipeline": "every stage, plus a summary report",
        "analyze": "range-bucketed statistics from pipeline outputs",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="run configuration (scenario file for simulate)")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--samples", type=int, help="override Monte-Carlo samples per reading")
        p.add_argument("--out", help="output directory")
        if name != "simulate":
            p.add_argument("--workers", type=int, help="worker processes for the Monte-Carlo stages")
        if name == "analyze":
            p.add_argument("--buckets", help="comma-separated range bucket edges in metres")
    return parser


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get(LOG_ENV, "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error in {exc}", file=sys.stderr)
        return exc.exit_code
    except RtsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
