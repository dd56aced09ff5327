"""Monte-Carlo covariance of single measurements and of the extrinsic calibration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateConfigurationError
from .geometry import (
    PoseEstimate,
    RigidTransform,
    pose_mean_cov_batch,
    rigid_registration_batch,
    spherical_to_cartesian,
)
from .noise import (
    AtmosphericConditions,
    NoiseBudget,
    RawMeasurement,
    VelocityStats,
    atmospheric_correction_ppm,
    corrected_range,
    perturb_arrays,
    sample_atmosphere_offsets,
    time_sync_noise,
)

SOURCES = ("instrument", "tilt", "atmospheric", "time_sync", "calibration")
RAW_SOURCES = ("instrument", "tilt", "atmospheric", "time_sync")
MIN_SAMPLES = 1_000
MAX_SAMPLES = 1_000_000
DEFAULT_SAMPLES = 10_000

# Stage tags mixed into derived seeds so that independent stages never share a stream.
STAGE_MEASUREMENT = 1
STAGE_VELOCITY = 2
STAGE_CALIBRATION = 3
STAGE_FUSION = 4
STAGE_SIMULATION = 5


def derive_seed(seed, *keys):
    """Child seed for ``keys`` (e.g. stage, rts id, index); order-independent by design."""
    keys = tuple(int(k) for k in keys)
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + keys)
    return np.random.SeedSequence(int(seed), spawn_key=keys)


@dataclass(frozen=True)
class PointEstimate:
    position: np.ndarray
    covariance: np.ndarray
    t: float = 0.0
    frame: str = "world"


@dataclass(frozen=True)
class NoiseSourceMask:
    instrument: bool = True
    tilt: bool = True
    atmospheric: bool = True
    time_sync: bool = True
    calibration: bool = True

    def __post_init__(self):
        if not any(getattr(self, s) for s in SOURCES):
            raise ConfigError("noise-source mask must enable at least one source")

    @classmethod
    def single(cls, source):
        if source not in SOURCES:
            raise ConfigError(f"unknown noise source {source!r}")
        return cls(**{s: s == source for s in SOURCES})

    @property
    def raw_sources(self):
        return any(getattr(self, s) for s in RAW_SOURCES)


def _check_samples(samples):
    if not MIN_SAMPLES <= samples <= MAX_SAMPLES:
        raise ConfigError(f"sample count {samples} outside [{MIN_SAMPLES}, {MAX_SAMPLES}]")


def _sample_cov(x):
    # Shift by the first sample: identical samples give an exactly zero covariance.
    shifted = x - x[0]
    offset = shifted.mean(axis=0)
    d = shifted - offset
    cov = d.T @ d / (len(x) - 1)
    return x[0] + offset, 0.5 * (cov + cov.T)


def measurement_samples(m: RawMeasurement, budget, cond, mask, v, samples, rng):
    """Cartesian Monte-Carlo samples of one measurement, shape ``(samples, 3)``."""
    rho, theta, phi = perturb_arrays(
        m.rho,
        m.theta,
        m.phi,
        budget,
        cond,
        rng,
        samples,
        instrument=mask.instrument,
        tilt=mask.tilt,
        atmospheric=mask.atmospheric,
    )
    p = spherical_to_cartesian(rho, theta, phi)
    if mask.time_sync:
        mu_t, sd_t = time_sync_noise(budget, v)
        p = p + mu_t + sd_t * rng.standard_normal(size=(samples, 3))
    return p


def measurement_covariance(
    m: RawMeasurement,
    budget: NoiseBudget,
    cond: AtmosphericConditions,
    mask: NoiseSourceMask = NoiseSourceMask(),
    v: VelocityStats | None = None,
    samples: int = DEFAULT_SAMPLES,
    seed=0,
) -> PointEstimate:
    """Sample mean and covariance of one reading in its instrument frame."""
    _check_samples(samples)
    v = VelocityStats.zero() if v is None else v
    rng = np.random.default_rng(seed)
    p = measurement_samples(m, budget, cond, mask, v, samples, rng)
    mean, cov = _sample_cov(p)
    return PointEstimate(mean, cov, m.t, f"rts{m.rts_id}")


def velocity_stats(m0: RawMeasurement, m1: RawMeasurement, budget, cond, samples, seed):
    """Mean and std of the forward-difference prism velocity under raw-reading noise."""
    _check_samples(samples)
    dt = m1.t - m0.t
    if dt <= 0:
        raise ConfigError("velocity needs strictly increasing timestamps")
    rng = np.random.default_rng(seed)
    # Both readings share the atmosphere of the moment.
    offsets = sample_atmosphere_offsets(budget, rng, samples)
    p = []
    for m in (m0, m1):
        r, th, ph = perturb_arrays(
            m.rho, m.theta, m.phi, budget, cond, rng, samples, atmosphere_offsets=offsets
        )
        p.append(spherical_to_cartesian(r, th, ph))
    v = (p[1] - p[0]) / dt
    return VelocityStats(v.mean(axis=0), v.std(axis=0, ddof=1))


def linearized_covariance_oracle(m: RawMeasurement, budget: NoiseBudget, cond: AtmosphericConditions):
    """First-order propagation of the instrument sigmas with a finite-difference Jacobian."""
    scale = 1.0 + float(atmospheric_correction_ppm(cond)) * 1e-6

    def f(x):
        return spherical_to_cartesian(x[0] * scale, x[1], x[2])

    x0 = np.array([m.rho, m.theta, m.phi], dtype=float)
    steps = np.array([1e-6 * max(1.0, abs(m.rho)), 1e-7, 1e-7])
    jac = np.empty((3, 3))
    for k in range(3):
        dx = np.zeros(3)
        dx[k] = steps[k]
        jac[:, k] = (f(x0 + dx) - f(x0 - dx)) / (2 * steps[k])
    sig = np.diag([float(budget.sigma_rho(m.rho)) ** 2, budget.sigma_theta**2, budget.sigma_phi**2])
    cov = jac @ sig @ jac.T
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class GcpSet:
    """Static ground control points seen by every instrument.

    ``readings[rts_id][gcp_id]`` is the raw reading of one GCP from one RTS.
    """

    readings: dict

    def __post_init__(self):
        if not self.readings:
            raise DegenerateConfigurationError("empty GCP set")
        ids = None
        for rts_id, by_gcp in self.readings.items():
            if ids is None:
                ids = set(by_gcp)
            elif set(by_gcp) != ids:
                raise DegenerateConfigurationError(f"RTS {rts_id} does not see the same GCP ids")
        if len(ids) < 3:
            raise DegenerateConfigurationError("at least three GCPs are required")

    @property
    def rts_ids(self):
        return sorted(self.readings)

    @property
    def gcp_ids(self):
        return sorted(next(iter(self.readings.values())))


@dataclass
class ExtrinsicCalibration:
    """Transform samples mapping each RTS frame into the frame of the reference RTS."""

    reference: int
    rotations: dict = field(default_factory=dict)
    translations: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def samples(self, rts_id):
        return [RigidTransform(r, t) for r, t in zip(self.rotations[rts_id], self.translations[rts_id])]

    def mean_transform(self, rts_id) -> RigidTransform:
        return self.summary[rts_id].transform

    @classmethod
    def identity(cls, rts_ids, samples=2):
        cal = cls(reference=min(rts_ids))
        for i in rts_ids:
            cal.rotations[i] = np.repeat(np.eye(3)[None], samples, axis=0)
            cal.translations[i] = np.zeros((samples, 3))
            cal.summary[i] = PoseEstimate(np.zeros(6), np.zeros((6, 6)))
        return cal


def calibrate_extrinsic_mc(
    gcps: GcpSet,
    budget: NoiseBudget,
    cond: AtmosphericConditions,
    samples: int = DEFAULT_SAMPLES,
    seed=0,
    reference=None,
) -> ExtrinsicCalibration:
    """Monte-Carlo GCP calibration of every RTS into the reference RTS frame.

    Time synchronisation is left out: GCPs are static. Atmospheric offsets are
    drawn once per iteration and shared by all readings of that iteration.
    """
    _check_samples(samples)
    rts_ids = gcps.rts_ids
    reference = rts_ids[0] if reference is None else reference
    gcp_ids = gcps.gcp_ids
    rng = np.random.default_rng(derive_seed(seed, STAGE_CALIBRATION))
    offsets = sample_atmosphere_offsets(budget, rng, samples)

    points = {}
    for rts_id in rts_ids:
        pts = np.empty((samples, len(gcp_ids), 3))
        for j, gid in enumerate(gcp_ids):
            m = gcps.readings[rts_id][gid]
            r, th, ph = perturb_arrays(
                m.rho, m.theta, m.phi, budget, cond, rng, samples, atmosphere_offsets=offsets
            )
            pts[:, j] = spherical_to_cartesian(r, th, ph)
        points[rts_id] = pts

    cal = ExtrinsicCalibration(reference=reference)
    for rts_id in rts_ids:
        if rts_id == reference:
            rot = np.repeat(np.eye(3)[None], samples, axis=0)
            trans = np.zeros((samples, 3))
        else:
            rot, trans = rigid_registration_batch(points[rts_id], points[reference])
        cal.rotations[rts_id] = rot
        cal.translations[rts_id] = trans
        cal.summary[rts_id] = pose_mean_cov_batch(rot, trans)
    return cal


def _as_arrays(transform_samples):
    if isinstance(transform_samples, tuple):
        r, t = transform_samples
        return np.asarray(r, dtype=float), np.asarray(t, dtype=float)
    ts = list(transform_samples)
    return np.stack([s.rotation for s in ts]), np.stack([s.translation for s in ts])


def calibration_scatter(position, rotations, translations):
    """Mean and sample covariance of ``position`` mapped by every transform sample."""
    mapped = np.einsum("sij,j->si", rotations, np.asarray(position, dtype=float)) + translations
    return _sample_cov(mapped)


def apply_calibration_mc(traj, transform_samples, frame="world", include_scatter=True):
    """Map points into the reference frame, adding the calibration spread.

    ``transform_samples`` is a list of :class:`RigidTransform` or an ``(R, t)``
    pair of stacked arrays. Input covariances are rotated by the mean rotation.
    """
    r, t = _as_arrays(transform_samples)
    if len(r) < 2:
        raise ConfigError("at least two transform samples are required")
    mean_r = pose_mean_cov_batch(r, t).transform.rotation
    out = []
    for pt in traj:
        mean, scatter = calibration_scatter(pt.position, r, t)
        cov = mean_r @ pt.covariance @ mean_r.T
        if include_scatter:
            cov = cov + scatter
        out.append(PointEstimate(mean, 0.5 * (cov + cov.T), pt.t, frame))
    return out


def noise_source_breakdown(
    m: RawMeasurement,
    budget: NoiseBudget,
    cond: AtmosphericConditions,
    v: VelocityStats | None = None,
    samples: int = DEFAULT_SAMPLES,
    seed=0,
    transform_samples=None,
):
    """One covariance per noise source for a single reading.

    Raw-reading sources are expressed in the instrument frame. The calibration
    entry is the spread of the nominal point under the calibration samples
    (zero when none are given, as for the reference instrument).
    """
    out = {}
    for k, source in enumerate(RAW_SOURCES):
        est = measurement_covariance(
            m,
            budget,
            cond,
            NoiseSourceMask.single(source),
            v,
            samples,
            derive_seed(seed, k),
        )
        out[source] = est.covariance
    if transform_samples is None:
        out["calibration"] = np.zeros((3, 3))
    else:
        r, t = _as_arrays(transform_samples)
        nominal = spherical_to_cartesian(corrected_range(m.rho, cond), m.theta, m.phi)
        out["calibration"] = calibration_scatter(nominal, r, t)[1]
    return out
