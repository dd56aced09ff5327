"""Run configuration (JSON), validated strictly: unknown keys are rejected."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .filtering import FilterParams
from .gp import DEFAULT_GUARD, GpPrior
from .montecarlo import DEFAULT_SAMPLES, SOURCES, NoiseSourceMask
from .noise import AtmosphericConditions, NoiseBudget

DEFAULT_BUCKETS = (75.0, 150.0)


def _section(d, name, allowed):
    sub = d.get(name, {})
    if not isinstance(sub, dict):
        raise ConfigError(f"{name}: expected an object")
    unknown = set(sub) - set(allowed)
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    return sub


@dataclass
class RunConfig:
    budget: NoiseBudget = field(default_factory=NoiseBudget.datasheet)
    atmosphere: AtmosphericConditions = field(default_factory=AtmosphericConditions)
    gp_prior: GpPrior = field(default_factory=GpPrior)
    extrapolation_guard: float = DEFAULT_GUARD
    filters: FilterParams = field(default_factory=FilterParams)
    apply_dynamics_filter: bool = True
    measurement_samples: int = DEFAULT_SAMPLES
    velocity_samples: int = 1_000
    calibration_samples: int = DEFAULT_SAMPLES
    fusion_samples: int = 1_000
    query_rate_hz: float = 10.0
    mask: NoiseSourceMask = field(default_factory=NoiseSourceMask)
    breakdown: bool = False
    per_source_poses: bool = False
    buckets: tuple = DEFAULT_BUCKETS
    seed: int = 0
    workers: int = 1
    measurements: dict = field(default_factory=dict)  # rts_id -> path
    gcps: Path | None = None
    reference: Path | None = None
    out_dir: Path = Path("out")

    @classmethod
    def from_dict(cls, d, base_dir=Path(".")):
        top = {
            "seed", "workers", "budget", "atmosphere", "gp", "filters", "mc",
            "fusion", "analysis", "mask", "inputs", "output",
        }
        unknown = set(d) - top
        if unknown:
            raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
        cfg = cls()
        if "budget" in d:
            cfg.budget = NoiseBudget.from_dict(d["budget"])
        if "atmosphere" in d:
            cfg.atmosphere = AtmosphericConditions.from_dict(d["atmosphere"])

        gp = _section(d, "gp", {"qc", "extrapolation_guard_s"})
        if "qc" in gp:
            cfg.gp_prior = GpPrior(qc=gp["qc"])
        cfg.extrapolation_guard = float(gp.get("extrapolation_guard_s", DEFAULT_GUARD))

        filters = dict(_section(d, "filters", set(FilterParams._KEYS) | {"dynamics"}))
        cfg.apply_dynamics_filter = bool(filters.pop("dynamics", True))
        cfg.filters = FilterParams.from_dict(filters)

        mc = _section(
            d, "mc", {"measurement_samples", "velocity_samples", "calibration_samples", "fusion_samples"}
        )
        for key in mc:
            setattr(cfg, key, int(mc[key]))
        if cfg.fusion_samples < 100:
            raise ConfigError("fusion_samples must be at least 100")

        fusion = _section(d, "fusion", {"query_rate_hz"})
        cfg.query_rate_hz = float(fusion.get("query_rate_hz", 10.0))
        if cfg.query_rate_hz <= 0:
            raise ConfigError("query_rate_hz must be positive")

        analysis = _section(d, "analysis", {"breakdown", "per_source_poses", "buckets_m"})
        cfg.breakdown = bool(analysis.get("breakdown", False))
        cfg.per_source_poses = bool(analysis.get("per_source_poses", False))
        cfg.buckets = parse_buckets(analysis.get("buckets_m", DEFAULT_BUCKETS))

        if "mask" in d:
            sources = d["mask"]
            if not isinstance(sources, list) or set(sources) - set(SOURCES):
                raise ConfigError(f"mask: expected a list drawn from {list(SOURCES)}")
            cfg.mask = NoiseSourceMask(**{s: s in sources for s in SOURCES})

        cfg.seed = int(d.get("seed", 0))
        cfg.workers = int(d.get("workers", 1))
        if cfg.workers < 1:
            raise ConfigError("workers must be >= 1")

        inputs = _section(d, "inputs", {"measurements", "gcps", "reference"})
        meas = inputs.get("measurements", {})
        if not isinstance(meas, dict):
            raise ConfigError("inputs.measurements: expected an object of rts_id -> path")
        cfg.measurements = {int(k): Path(base_dir, v) for k, v in meas.items()}
        if "gcps" in inputs:
            cfg.gcps = Path(base_dir, inputs["gcps"])
        if "reference" in inputs:
            cfg.reference = Path(base_dir, inputs["reference"])
        output = _section(d, "output", {"dir"})
        cfg.out_dir = Path(base_dir, output.get("dir", "out"))
        return cfg

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from exc
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(d, base_dir=path.parent)


def parse_buckets(value):
    if isinstance(value, str):
        try:
            value = [float(v) for v in value.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad bucket edges {value!r}") from exc
    edges = tuple(float(v) for v in value)
    if any(e <= 0 for e in edges) or list(edges) != sorted(set(edges)):
        raise ConfigError("bucket edges must be positive and strictly increasing")
    return edges
