"""End-to-end ground truth: calibration, covariances, interpolation, fusion.

Work is split into independent tasks (one per reading, one per triplet), each
with its own seed derived from the master seed and the task's identity, so
results do not depend on the number of worker processes.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import gp as gp_mod
from .config import RunConfig
from .errors import ConfigError, RtsError, StageError
from .filtering import filter_dynamics, gate_fused, split_segments
from .fusion import assemble_triplets, fuse_pose_mc
from .geometry import spherical_to_cartesian
from .montecarlo import (
    SOURCES,
    STAGE_FUSION,
    STAGE_MEASUREMENT,
    STAGE_VELOCITY,
    ExtrinsicCalibration,
    PointEstimate,
    calibrate_extrinsic_mc,
    calibration_scatter,
    derive_seed,
    measurement_covariance,
    noise_source_breakdown,
    velocity_stats,
)
from .noise import corrected_range

log = logging.getLogger(__name__)

STAGE_BREAKDOWN = 6


@dataclass(frozen=True)
class MeasurementRecord:
    """One kept reading after the covariance stage, in the world frame."""

    rts_id: int
    index: int  # position in the unfiltered stream
    segment: int
    t: float
    range_m: float
    position: np.ndarray
    covariance: np.ndarray
    sources: dict | None = None  # source -> world-frame Cov3


@dataclass
class GroundTruth:
    poses: list
    records: list
    calibration: ExtrinsicCalibration
    query_times: np.ndarray
    n_assembled: int = 0
    source_poses: dict = field(default_factory=dict)

    @property
    def n_gated(self):
        return len(self.poses)


def _map(func, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items, chunksize=chunk))


def _run_stage(name, func, *args):
    try:
        return func(*args)
    except StageError:
        raise
    except (RtsError, OSError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


@dataclass(frozen=True)
class _ReadingTask:
    m: object
    pair: tuple  # readings used for the velocity difference
    cfg: RunConfig
    index: int


def _reading_job(task: _ReadingTask):
    cfg, m = task.cfg, task.m
    try:
        v = None
        if cfg.mask.time_sync or cfg.breakdown:
            v = velocity_stats(
                *task.pair,
                cfg.budget,
                cfg.atmosphere,
                cfg.velocity_samples,
                derive_seed(cfg.seed, STAGE_VELOCITY, m.rts_id, task.index),
            )
        est = measurement_covariance(
            m,
            cfg.budget,
            cfg.atmosphere,
            cfg.mask,
            v,
            cfg.measurement_samples,
            derive_seed(cfg.seed, STAGE_MEASUREMENT, m.rts_id, task.index),
        )
        sources = None
        if cfg.breakdown:
            sources = noise_source_breakdown(
                m,
                cfg.budget,
                cfg.atmosphere,
                v,
                cfg.measurement_samples,
                derive_seed(cfg.seed, STAGE_BREAKDOWN, m.rts_id, task.index),
            )
            del sources["calibration"]
    except RtsError as exc:
        raise StageError("covariance", exc, f"rts{m.rts_id}:{task.index}") from exc
    return est, sources


def _fusion_job(args):
    triplet, ref, samples, seed = args
    try:
        return fuse_pose_mc(triplet, ref, samples, derive_seed(seed, STAGE_FUSION, triplet.index))
    except RtsError as exc:
        raise StageError("fusion", exc, triplet.index) from exc


def _calibrate(traj_set, cfg):
    if traj_set.gcps is None:
        log.warning("no GCPs given: all instruments are assumed to share one frame")
        return ExtrinsicCalibration.identity(traj_set.rts_ids)
    return calibrate_extrinsic_mc(
        traj_set.gcps, cfg.budget, cfg.atmosphere, cfg.calibration_samples, cfg.seed, traj_set.rts_ids[0]
    )


def _segments(traj_set, cfg):
    """Per RTS: lists of (index, reading) segments surviving the filters."""
    out = {}
    for rts_id in traj_set.rts_ids:
        indexed = list(enumerate(traj_set.streams[rts_id]))
        times = [m.t for _, m in indexed]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise StageError("filtering", ConfigError(f"RTS {rts_id}: timestamps not strictly increasing"))
        kept = list(traj_set.streams[rts_id])
        if cfg.apply_dynamics_filter:
            kept = filter_dynamics(kept, cfg.filters)
        keep_ids = {id(m) for m in kept}
        kept_indexed = [(i, m) for i, m in indexed if id(m) in keep_ids]
        by_id = {id(m): i for i, m in kept_indexed}
        segs = split_segments([m for _, m in kept_indexed], cfg.filters)
        out[rts_id] = [[(by_id[id(m)], m) for m in seg] for seg in segs]
        dropped = len(indexed) - sum(len(s) for s in segs)
        if dropped:
            log.info("RTS %d: %d of %d readings filtered out", rts_id, dropped, len(indexed))
    return out


def _reading_tasks(segments, cfg):
    tasks, where = [], []
    for rts_id, segs in segments.items():
        for s, seg in enumerate(segs):
            for k, (index, m) in enumerate(seg):
                pair = (seg[k][1], seg[k + 1][1]) if k + 1 < len(seg) else (seg[k - 1][1], seg[k][1])
                tasks.append(_ReadingTask(m, pair, cfg, index))
                where.append((rts_id, s))
    return tasks, where


def _to_world(results, tasks, where, calibration, cfg):
    records = []
    for (est, sources), task, (rts_id, s) in zip(results, tasks, where):
        rot = calibration.rotations[rts_id]
        trans = calibration.translations[rts_id]
        mean_r = calibration.mean_transform(rts_id).rotation
        position, scatter = calibration_scatter(est.position, rot, trans)
        cov = mean_r @ est.covariance @ mean_r.T
        if cfg.mask.calibration:
            cov = cov + scatter
        world_sources = None
        if sources is not None:
            world_sources = {k: mean_r @ c @ mean_r.T for k, c in sources.items()}
            nominal = spherical_to_cartesian(corrected_range(task.m.rho, cfg.atmosphere), task.m.theta, task.m.phi)
            world_sources["calibration"] = calibration_scatter(nominal, rot, trans)[1]
        records.append(
            MeasurementRecord(
                rts_id, task.index, s, task.m.t, task.m.rho, position, 0.5 * (cov + cov.T), world_sources
            )
        )
    return records


def _fit_trajectories(records, rts_ids, cfg, source=None):
    """One list of GP segments per prism; ``source`` picks a single-source covariance."""
    gps = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", gp_mod.RegularizationWarning)
        for rts_id in rts_ids:
            segs = {}
            for r in records:
                if r.rts_id == rts_id:
                    cov = r.covariance if source is None else r.sources[source]
                    segs.setdefault(r.segment, []).append(PointEstimate(r.position, cov, r.t, "world"))
            gps.append([gp_mod.fit(pts, cfg.gp_prior, cfg.extrapolation_guard) for _, pts in sorted(segs.items())])
    n_reg = sum(issubclass(w.category, gp_mod.RegularizationWarning) for w in caught)
    if n_reg:
        log.info("%d trajectory fits needed covariance regularization", n_reg)
    for w in caught:
        if not issubclass(w.category, gp_mod.RegularizationWarning):
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    return gps


def query_grid(gps, rate_hz):
    """Regular grid over the window in which every prism has data."""
    if any(not segs for segs in gps):
        return np.empty(0)
    start = max(segs[0].start for segs in gps)
    end = min(segs[-1].end for segs in gps)
    k0 = math.ceil(start * rate_hz - 1e-9)
    k1 = math.floor(end * rate_hz + 1e-9)
    return np.arange(k0, k1 + 1) / rate_hz if k1 >= k0 else np.empty(0)


def covariance_stage(traj_set, cfg: RunConfig, workers=1):
    """Calibration, stream filtering and per-reading covariances in the world frame."""
    calibration = _run_stage("calibration", _calibrate, traj_set, cfg)
    segments = _segments(traj_set, cfg)
    tasks, where = _reading_tasks(segments, cfg)
    results = _map(_reading_job, tasks, workers)
    records = _run_stage("calibration", _to_world, results, tasks, where, calibration, cfg)
    return calibration, records


def interpolation_stage(records, rts_ids, cfg: RunConfig, source=None):
    """GP segments per prism and the triplets on the common query grid."""
    gps = _run_stage("interpolation", _fit_trajectories, records, rts_ids, cfg, source)
    times = query_grid(gps, cfg.query_rate_hz)
    return gps, _run_stage("interpolation", assemble_triplets, *gps, times), times


def fusion_stage(triplets, reference, cfg: RunConfig, workers=1):
    gated = gate_fused(triplets, reference, cfg.filters)
    if len(gated) < len(triplets):
        log.info("gates removed %d of %d triplets", len(triplets) - len(gated), len(triplets))
    jobs = [(tr, reference, cfg.fusion_samples, cfg.seed) for tr in gated]
    return _map(_fusion_job, jobs, workers)


def _check_inputs(traj_set):
    if len(traj_set.rts_ids) != 3:
        raise StageError("input", ConfigError(f"expected three prism streams, got {len(traj_set.rts_ids)}"))
    if traj_set.reference is None:
        raise StageError("input", ConfigError("a reference triplet is required"))


def build_ground_truth(traj_set, cfg: RunConfig | None = None, workers: int | None = None) -> GroundTruth:
    """Fused poses with 6x6 covariances for a three-prism deployment."""
    cfg = RunConfig() if cfg is None else cfg
    workers = cfg.workers if workers is None else workers
    _check_inputs(traj_set)
    if cfg.per_source_poses and not cfg.breakdown:
        raise ConfigError("per-source poses need the per-source breakdown")
    rts_ids = traj_set.rts_ids

    calibration, records = covariance_stage(traj_set, cfg, workers)
    _, triplets, times = interpolation_stage(records, rts_ids, cfg)
    poses = fusion_stage(triplets, traj_set.reference, cfg, workers)
    result = GroundTruth(poses, records, calibration, times, len(triplets))

    if cfg.per_source_poses:
        for source in SOURCES:
            _, trip_s, _ = interpolation_stage(records, rts_ids, cfg, source)
            result.source_poses[source] = fusion_stage(trip_s, traj_set.reference, cfg, workers)
    return result


def calibration_summary(calibration: ExtrinsicCalibration):
    """Mean transform and 6x6 covariance per RTS, as plain dicts."""
    out = {}
    for rts_id, est in sorted(calibration.summary.items()):
        out[rts_id] = {"xi": est.mean, "cov": est.covariance}
    return out

