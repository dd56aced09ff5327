"""File formats. Every writer goes through a temp file and an atomic rename.

Floats in JSON are written with ``repr`` (shortest round-trippable form), so
reading a file back gives bit-identical values.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .fusion import FusedPose, ReferenceTriplet
from .geometry import PoseEstimate, RigidTransform
from .montecarlo import GcpSet
from .noise import RawMeasurement
from .pipeline import MeasurementRecord

MEASUREMENT_COLUMNS = ("t_s", "rho_m", "theta_rad", "phi_rad")
GCP_COLUMNS = ("gcp_id", "rts_id", "rho_m", "theta_rad", "phi_rad")


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _floats(a):
    return [float(x) for x in np.asarray(a, dtype=float).ravel()]


def load_json(path, error=ConfigError):
    """Parse a JSON file; syntax errors report ``path:line:column``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise error(f"{path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise error(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def dump_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=1) + "\n")


def _read_csv(path, columns):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc
    reader = csv.DictReader(io.StringIO(text), skipinitialspace=True)
    header = [h.strip() for h in (reader.fieldnames or [])]
    if tuple(header) != tuple(columns):
        raise DataError(f"{path}:1: expected columns {','.join(columns)}, got {','.join(header)}")
    reader.fieldnames = header
    rows = []
    for row in reader:
        try:
            rows.append({k: float(row[k]) for k in columns})
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}:{reader.line_num}: malformed row") from exc
    return rows


def _write_csv(path, columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    atomic_write_text(path, buf.getvalue())


def read_measurement_csv(path, rts_id):
    rows = _read_csv(path, MEASUREMENT_COLUMNS)
    out = [RawMeasurement(r["rho_m"], r["theta_rad"], r["phi_rad"], r["t_s"], rts_id) for r in rows]
    for k in range(1, len(out)):
        if out[k].t <= out[k - 1].t:
            raise DataError(f"{path}:{k + 2}: timestamps must be strictly increasing")
    return out


def write_measurement_csv(path, stream):
    _write_csv(path, MEASUREMENT_COLUMNS, [(m.t, m.rho, m.theta, m.phi) for m in stream])


def read_gcp_csv(path) -> GcpSet:
    readings = {}
    for r in _read_csv(path, GCP_COLUMNS):
        rts_id, gcp_id = int(r["rts_id"]), int(r["gcp_id"])
        readings.setdefault(rts_id, {})[gcp_id] = RawMeasurement(
            r["rho_m"], r["theta_rad"], r["phi_rad"], 0.0, rts_id
        )
    return GcpSet(readings)


def write_gcp_csv(path, gcps: GcpSet):
    rows = []
    for rts_id in gcps.rts_ids:
        for gcp_id in gcps.gcp_ids:
            m = gcps.readings[rts_id][gcp_id]
            rows.append((gcp_id, rts_id, m.rho, m.theta, m.phi))
    _write_csv(path, GCP_COLUMNS, rows)


def read_reference_json(path) -> ReferenceTriplet:
    d = load_json(path, DataError)
    if not isinstance(d, dict) or set(d) != {"points_m", "covariances_m2"}:
        raise DataError(f"{path}: expected keys points_m and covariances_m2")
    try:
        return ReferenceTriplet(np.asarray(d["points_m"], float), np.asarray(d["covariances_m2"], float))
    except (ValueError, ConfigError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_reference_json(path, ref: ReferenceTriplet):
    dump_json(
        path,
        {"points_m": ref.points.tolist(), "covariances_m2": ref.covariances.tolist()},
    )


def write_truth_json(path, truth, scenario):
    """Dense robot poses plus the instrument placements used to generate them."""
    dump_json(
        path,
        {
            "frame": "world",
            "rts": {
                str(i): {"rotation": _floats(p.rotation), "translation_m": _floats(p.translation)}
                for i, p in sorted(scenario.rts_poses.items())
            },
            "prism_offsets_m": scenario.prism_offsets.tolist(),
            "poses": [
                {"t": t, "rotation": _floats(T.rotation), "translation_m": _floats(T.translation)}
                for t, T in truth
            ],
        },
    )


def read_truth_json(path):
    d = load_json(path, DataError)
    rts = {
        int(k): RigidTransform(np.reshape(v["rotation"], (3, 3)), v["translation_m"]) for k, v in d["rts"].items()
    }
    poses = [
        (p["t"], RigidTransform(np.reshape(p["rotation"], (3, 3)), p["translation_m"])) for p in d["poses"]
    ]
    return poses, rts


def fused_pose_to_dict(p: FusedPose):
    d = {
        "t": float(p.t),
        "xi": _floats(p.mean),
        "cov": _floats(p.covariance),
        "residuals": _floats(p.residuals),
    }
    if p.sample_mean is not None:
        d["xi_sample"] = _floats(p.sample_mean)
    return d


def fused_pose_from_dict(d):
    pose = PoseEstimate(np.array(d["xi"]), np.reshape(d["cov"], (6, 6)), d["t"])
    sample = None if "xi_sample" not in d else np.array(d["xi_sample"])
    return FusedPose(pose, np.array(d["residuals"]), sample)


def _write_jsonl(path, dicts):
    atomic_write_text(path, "".join(json.dumps(d) + "\n" for d in dicts))


def _read_jsonl(path):
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc
    out = []
    for k, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{k}:{exc.colno}: {exc.msg}") from exc
    return out


def write_ground_truth(path, poses):
    _write_jsonl(path, (fused_pose_to_dict(p) for p in poses))


def read_ground_truth(path):
    try:
        return [fused_pose_from_dict(d) for d in _read_jsonl(path)]
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{path}: malformed pose record ({exc})") from exc


def record_to_dict(r):
    d = {
        "rts_id": r.rts_id,
        "index": r.index,
        "segment": r.segment,
        "t": float(r.t),
        "range_m": float(r.range_m),
        "position": _floats(r.position),
        "cov": _floats(r.covariance),
    }
    if r.sources is not None:
        d["sources"] = {k: _floats(c) for k, c in r.sources.items()}
    return d


def record_from_dict(d):
    sources = None
    if "sources" in d:
        sources = {k: np.reshape(c, (3, 3)) for k, c in d["sources"].items()}
    return MeasurementRecord(
        int(d["rts_id"]),
        int(d["index"]),
        int(d["segment"]),
        d["t"],
        d["range_m"],
        np.array(d["position"]),
        np.reshape(d["cov"], (3, 3)),
        sources,
    )


def write_records(path, records):
    _write_jsonl(path, (record_to_dict(r) for r in records))


def read_records(path):
    try:
        return [record_from_dict(d) for d in _read_jsonl(path)]
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{path}: malformed covariance record ({exc})") from exc


def write_triplets(path, triplets):
    _write_jsonl(
        path,
        (
            {"t": tr.t, "index": tr.index, "points": _floats(tr.points), "covs": _floats(tr.covariances)}
            for tr in triplets
        ),
    )


def write_calibration_json(path, calibration):
    dump_json(
        path,
        {
            "reference_rts": calibration.reference,
            "rts": {
                str(i): {"xi": _floats(est.mean), "cov": _floats(est.covariance)}
                for i, est in sorted(calibration.summary.items())
            },
        },
    )
