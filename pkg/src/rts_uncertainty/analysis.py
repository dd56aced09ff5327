"""Range-bucketed uncertainty statistics for prism readings and fused poses.

Each covariance is reduced to the square root of its Frobenius norm, which
carries the unit of the underlying quantity (mm for positions, mrad for
rotations here).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT_BUCKETS
from .geometry import sqrt_frobenius
from .montecarlo import SOURCES


def bucket_labels(edges=DEFAULT_BUCKETS):
    def fmt(x):
        return f"{x:g}"

    lo = (0.0,) + tuple(edges)
    labels = [f"{fmt(a)}-{fmt(b)}" for a, b in zip(lo, edges)]
    return labels + [f">{fmt(edges[-1])}"]


def bucket_index(ranges, edges=DEFAULT_BUCKETS):
    """Bucket of each range; bucket k holds ``[edge[k-1], edge[k])``."""
    return np.searchsorted(np.asarray(edges, dtype=float), np.asarray(ranges, dtype=float), side="right")


def summarize(values):
    """Median and quartiles, or ``None`` for an empty sample."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return None
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"count": int(v.size), "median": float(med), "q1": float(q1), "q3": float(q3)}


def pose_metrics(poses):
    """Translation (mm) and rotation (mrad) sqrt-Frobenius values per pose."""
    if not poses:
        return np.empty(0), np.empty(0)
    covs = np.stack([p.covariance for p in poses])
    return 1e3 * sqrt_frobenius(covs[:, :3, :3]), 1e3 * sqrt_frobenius(covs[:, 3:, 3:])


@dataclass
class AnalysisReport:
    edges: tuple
    prism: dict  # source -> bucket label -> summary or None
    pose: dict
    rows: list = field(default_factory=list)

    def to_dict(self):
        return {"bucket_edges_m": list(self.edges), "prism_mm": self.prism, "pose": self.pose}

    def median(self, source, bucket):
        s = self.prism[source][bucket]
        return None if s is None else s["median"]


def analyze(records, poses=(), edges=DEFAULT_BUCKETS, source_poses=None, reference_rts=None) -> AnalysisReport:
    """Per-source, per-range-bucket statistics of prism readings and pose spreads.

    ``records`` need a per-source breakdown for the source rows; the total
    covariance is always reported under ``"total"``. The calibration source
    leaves out the reference instrument (lowest id by default), whose frame
    defines the world and so carries no calibration uncertainty.
    """
    labels = bucket_labels(edges)
    records = list(records)
    if reference_rts is None and records:
        reference_rts = min(r.rts_id for r in records)
    columns = {"total": records}
    if records and all(r.sources is not None for r in records):
        for s in SOURCES:
            columns[s] = [r for r in records if s != "calibration" or r.rts_id != reference_rts]

    prism, rows = {}, []
    for source, recs in columns.items():
        buckets = bucket_index([r.range_m for r in recs], edges)
        covs = [r.covariance if source == "total" else r.sources[source] for r in recs]
        values = 1e3 * sqrt_frobenius(np.asarray(covs).reshape(-1, 3, 3))
        prism[source] = {label: summarize(values[buckets == k]) for k, label in enumerate(labels)}
        for r, b, v in zip(recs, buckets, values):
            rows.append(("prism", source, r.rts_id, r.t, r.range_m, labels[b], "mm", v))

    pose = {}
    trans, rot = pose_metrics(list(poses))
    pose["translation_mm"] = summarize(trans)
    pose["rotation_mrad"] = summarize(rot)
    for p, vt, vr in zip(poses, trans, rot):
        rows.append(("pose", "total", "", p.t, "", "", "mm", vt))
        rows.append(("pose_rotation", "total", "", p.t, "", "", "mrad", vr))
    if source_poses:
        pose["by_source"] = {}
        for source, sp in source_poses.items():
            t_s, r_s = pose_metrics(list(sp))
            pose["by_source"][source] = {"translation_mm": summarize(t_s), "rotation_mrad": summarize(r_s)}
            for p, vt in zip(sp, t_s):
                rows.append(("pose", source, "", p.t, "", "", "mm", vt))
    return AnalysisReport(tuple(edges), prism, pose, rows)


PLOT_COLUMNS = ("level", "source", "rts_id", "t_s", "range_m", "bucket", "unit", "sqrt_frobenius")
