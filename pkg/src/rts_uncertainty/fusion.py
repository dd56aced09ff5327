"""Rigid-body poses from three interpolated prism trajectories.

Each pose comes from the least-squares alignment of the reference triplet
(prism positions in the robot body frame) onto three time-aligned prism
positions. Uncertainty is propagated by Monte Carlo: every iteration draws one
point from each prism Gaussian and one from each reference Gaussian, solves
the alignment, and the resulting transforms are summarised on SE(3).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateConfigurationError, ExtrapolationError
from .geometry import (
    PoseEstimate,
    RigidTransform,
    collinear_mask,
    pose_mean_cov_batch,
    psd_sqrt,
    rigid_registration_batch,
    se3_log,
)
from .gp import TrajectoryGp, query

log = logging.getLogger(__name__)

MIN_FUSION_SAMPLES = 100
DEFAULT_FUSION_SAMPLES = 1_000
MAX_RETRIES = 10
MIN_PRISM_SEPARATION = 0.10


def _check_psd(covs, what):
    covs = np.asarray(covs, dtype=float)
    if covs.shape != (3, 3, 3):
        raise ConfigError(f"{what}: expected three 3x3 covariances")
    if not np.allclose(covs, np.swapaxes(covs, -1, -2), rtol=1e-12, atol=1e-15):
        raise ConfigError(f"{what}: covariances must be symmetric")
    w = np.linalg.eigvalsh(covs)
    if np.any(w < -1e-12 * np.maximum(np.trace(covs, axis1=-2, axis2=-1), 1e-300)[:, None]):
        raise ConfigError(f"{what}: covariances must be positive semi-definite")
    return covs


@dataclass(frozen=True)
class ReferenceTriplet:
    """Prism positions ``r_i`` in the body frame with their covariances ``U_i``."""

    points: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.shape != (3, 3) or not np.all(np.isfinite(p)):
            raise ConfigError("reference triplet needs three finite 3-D points")
        for i, k in ((0, 1), (0, 2), (1, 2)):
            if np.linalg.norm(p[i] - p[k]) <= MIN_PRISM_SEPARATION:
                raise ConfigError(f"reference prisms {i + 1} and {k + 1} are closer than 10 cm")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "covariances", _check_psd(self.covariances, "reference triplet"))

    @classmethod
    def exact(cls, points):
        return cls(points, np.zeros((3, 3, 3)))

    @classmethod
    def from_static_measurements(cls, samples):
        """Mean and sample covariance of repeated static readings.

        ``samples`` has shape ``(K, 3, 3)``: K repeated measurements of the
        three prisms, already expressed in the body frame.
        """
        s = np.asarray(samples, dtype=float)
        if s.ndim != 3 or s.shape[1:] != (3, 3) or len(s) < 2:
            raise ConfigError("expected at least two repeated (3, 3) triplet measurements")
        mean = s.mean(axis=0)
        d = s - mean
        cov = np.einsum("kpi,kpj->pij", d, d) / (len(s) - 1)
        return cls(mean, 0.5 * (cov + np.swapaxes(cov, -1, -2)))


@dataclass(frozen=True)
class Triplet:
    """Three prism positions interpolated at the same time ``t``."""

    t: float
    points: np.ndarray  # (3, 3), one row per prism
    covariances: np.ndarray  # (3, 3, 3)
    index: int = 0


@dataclass(frozen=True)
class FusedPose:
    """Pose of one triplet.

    ``pose.mean`` is the alignment of the reference onto the interpolated
    means; ``pose.covariance`` is the spread of the Monte-Carlo alignments.
    ``sample_mean`` is the tangent-space mean of those alignments.
    """

    pose: PoseEstimate
    residuals: np.ndarray  # |q_i - T r_i| per prism, metres
    sample_mean: np.ndarray | None = None

    @property
    def t(self):
        return self.pose.timestamp

    @property
    def mean(self):
        return self.pose.mean

    @property
    def covariance(self):
        return self.pose.covariance


def _segments(q):
    return [q] if isinstance(q, TrajectoryGp) else list(q)


def _query_segments(segments, t):
    best = None
    for gp in segments:
        if gp.start <= t <= gp.end:
            return query(gp, t)
        if gp.covers(t):
            gap = min(abs(t - gp.start), abs(t - gp.end))
            if best is None or gap < best[0]:
                best = (gap, gp)
    if best is None:
        raise ExtrapolationError(f"no trajectory segment covers t={t:.6f}")
    return query(best[1], t)


def assemble_triplets(q1, q2, q3, query_times):
    """Bundle the three prism posteriors at each query time.

    Each ``q`` is a :class:`TrajectoryGp` or a list of them (segments of one
    prism). Times that any prism cannot reach are skipped.
    """
    prisms = [_segments(q) for q in (q1, q2, q3)]
    out, skipped = [], 0
    for j, t in enumerate(query_times):
        try:
            est = [_query_segments(segs, float(t)) for segs in prisms]
        except ExtrapolationError:
            skipped += 1
            continue
        out.append(
            Triplet(
                float(t),
                np.stack([e.position for e in est]),
                np.stack([e.covariance for e in est]),
                j,
            )
        )
    if skipped:
        log.warning("skipped %d of %d query times outside the interpolation domain", skipped, len(query_times))
    return out


def fuse_pose_mc(
    triplet: Triplet,
    ref: ReferenceTriplet,
    samples: int = DEFAULT_FUSION_SAMPLES,
    seed=0,
    max_retries: int = MAX_RETRIES,
) -> FusedPose:
    """Pose of one triplet with its Monte-Carlo 6x6 covariance.

    The mean solves the alignment on the interpolated means themselves: the
    interpolated positions carry prior uncertainty even for noise-free data,
    so a sample mean would only approach the exact pose as ``1/sqrt(M)``.
    """
    if samples < MIN_FUSION_SAMPLES:
        raise ConfigError(f"fusion needs at least {MIN_FUSION_SAMPLES} samples")
    rng = np.random.default_rng(seed)
    q_mean = np.asarray(triplet.points, dtype=float)
    lq = psd_sqrt(triplet.covariances)
    lr = psd_sqrt(ref.covariances)

    def draw(n):
        z = rng.standard_normal((2, n, 3, 3))
        q = q_mean + np.einsum("pij,npj->npi", lq, z[0])
        r = ref.points + np.einsum("pij,npj->npi", lr, z[1])
        return q, r

    q, r = draw(samples)
    for attempt in range(max_retries + 1):
        bad = collinear_mask(q) | collinear_mask(r)
        if not bad.any():
            break
        if attempt == max_retries:
            raise DegenerateConfigurationError(
                f"{int(bad.sum())} draws still collinear after {max_retries} retries"
            )
        q[bad], r[bad] = draw(int(bad.sum()))

    rot, trans = rigid_registration_batch(r, q, check=False)
    spread = pose_mean_cov_batch(rot, trans, triplet.t)
    r0, t0 = rigid_registration_batch(ref.points, q_mean)
    pose = PoseEstimate(se3_log(RigidTransform(r0, t0)), spread.covariance, triplet.t)
    mapped = pose.transform.apply(ref.points)
    return FusedPose(pose, np.linalg.norm(q_mean - mapped, axis=1), spread.mean)
