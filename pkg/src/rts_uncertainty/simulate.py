"""Synthetic deployments: a robot carrying three prisms, tracked by three RTSs.

The robot follows a cubic spline through waypoints at a prescribed speed, with
its heading along the path tangent. Each RTS tracks one prism at a fixed rate
with its own clock phase. Readings are generated by inverting the measurement
model, so the pipeline applied to a zero-noise deployment reproduces the truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigError, DegenerateConfigurationError, SingularGeometryError
from .fusion import ReferenceTriplet
from .geometry import RigidTransform, cartesian_to_spherical, so3_exp
from .montecarlo import STAGE_SIMULATION, GcpSet, derive_seed
from .noise import (
    COT_GUARD,
    AtmosphericConditions,
    NoiseBudget,
    RawMeasurement,
    _ppm,
    _reject_unknown,
    sample_atmosphere_offsets,
)

TRUTH_RATE_HZ = 100.0
DEFAULT_PHASES = (0.0, 0.133, 0.267)
_ARC_SAMPLES_PER_SPAN = 400


def yaw_rotation(yaw):
    return so3_exp(np.array([0.0, 0.0, yaw]))


def facing(position, target):
    """RTS heading that puts ``target`` on the instrument's +y axis.

    Keeps the horizontal angle near pi/2, away from the cot() singularity of
    the tilt model at 0 and pi.
    """
    d = np.asarray(target, dtype=float) - np.asarray(position, dtype=float)
    return math.atan2(d[1], d[0]) - math.pi / 2


@dataclass
class Scenario:
    waypoints: np.ndarray
    prism_offsets: np.ndarray
    rts_poses: dict  # rts_id -> RigidTransform (instrument frame -> world)
    speed: object = 1.0  # m/s, or a sequence of (t, v) knots
    closed: bool = False
    rate_hz: float = 2.5
    duration_s: float = 60.0
    phase_offsets_s: tuple = DEFAULT_PHASES
    occlusions: tuple = ()  # (rts_id, t_start, t_end)
    budget: NoiseBudget = field(default_factory=NoiseBudget.zero)
    atmosphere: AtmosphericConditions = field(default_factory=AtmosphericConditions)
    seed: int = 0
    gcp_points: np.ndarray | None = None
    gcp_count: int = 4
    gcp_extent_m: float = 30.0
    gcp_center: np.ndarray | None = None
    reference_sigma_m: float = 0.0

    def __post_init__(self):
        self.waypoints = np.atleast_2d(np.asarray(self.waypoints, dtype=float))
        if self.waypoints.shape[1] != 3 or len(self.waypoints) == 0:
            raise ConfigError("waypoints must be a non-empty list of 3-D points")
        self.prism_offsets = np.asarray(self.prism_offsets, dtype=float)
        if self.prism_offsets.shape != (3, 3):
            raise ConfigError("exactly three prism offsets are required")
        for i, k in ((0, 1), (0, 2), (1, 2)):
            if np.linalg.norm(self.prism_offsets[i] - self.prism_offsets[k]) == 0:
                raise ConfigError("prism offsets must be pairwise distinct")
        if len(self.rts_poses) != 3:
            raise ConfigError("exactly three RTS poses are required")
        if not self.rate_hz > 0 or not self.duration_s > 0:
            raise ConfigError("rate and duration must be positive")
        if len(self.phase_offsets_s) != 3:
            raise ConfigError("one phase offset per RTS is required")
        for rts_id, t0, t1 in self.occlusions:
            if rts_id not in self.rts_poses:
                raise ConfigError(f"occlusion refers to unknown RTS {rts_id}")
            if not 0.0 <= t0 <= t1 <= self.duration_s:
                raise ConfigError("occlusion windows must lie within the duration")
        if self.gcp_points is not None:
            self.gcp_points = np.asarray(self.gcp_points, dtype=float)

    @property
    def rts_ids(self):
        return sorted(self.rts_poses)

    @classmethod
    def from_dict(cls, d):
        allowed = {
            "waypoints_m", "speed_mps", "closed", "prism_offsets_m", "rts", "rate_hz",
            "duration_s", "phase_offsets_s", "occlusions", "budget", "atmosphere", "seed",
            "gcps", "reference_sigma_m",
        }
        _reject_unknown(d, allowed, "scenario")
        for key in ("waypoints_m", "prism_offsets_m", "rts"):
            if key not in d:
                raise ConfigError(f"scenario: missing key {key!r}")
        waypoints = np.asarray(d["waypoints_m"], dtype=float)
        target = waypoints.reshape(-1, 3).mean(axis=0)
        poses = {}
        for k, entry in enumerate(d["rts"]):
            _reject_unknown(entry, {"id", "position_m", "yaw_deg"}, "scenario.rts")
            pos = np.asarray(entry["position_m"], dtype=float)
            yaw = math.radians(entry["yaw_deg"]) if "yaw_deg" in entry else facing(pos, target)
            poses[int(entry.get("id", k + 1))] = RigidTransform(yaw_rotation(yaw), pos)
        speed = d.get("speed_mps", 1.0)
        occl = []
        for o in d.get("occlusions", []):
            _reject_unknown(o, {"rts_id", "start_s", "end_s"}, "scenario.occlusions")
            occl.append((int(o["rts_id"]), float(o["start_s"]), float(o["end_s"])))
        gcps = d.get("gcps", {})
        _reject_unknown(gcps, {"count", "extent_m", "center_m", "points_m"}, "scenario.gcps")
        return cls(
            waypoints=waypoints,
            prism_offsets=d["prism_offsets_m"],
            rts_poses=poses,
            speed=speed if np.isscalar(speed) else [tuple(map(float, s)) for s in speed],
            closed=bool(d.get("closed", False)),
            rate_hz=float(d.get("rate_hz", 2.5)),
            duration_s=float(d.get("duration_s", 60.0)),
            phase_offsets_s=tuple(float(p) for p in d.get("phase_offsets_s", DEFAULT_PHASES)),
            occlusions=tuple(occl),
            budget=NoiseBudget.from_dict(d["budget"]) if "budget" in d else NoiseBudget.zero(),
            atmosphere=AtmosphericConditions.from_dict(d.get("atmosphere", {})),
            seed=int(d.get("seed", 0)),
            gcp_points=gcps.get("points_m"),
            gcp_count=int(gcps.get("count", 4)),
            gcp_extent_m=float(gcps.get("extent_m", 30.0)),
            gcp_center=None if "center_m" not in gcps else np.asarray(gcps["center_m"], dtype=float),
            reference_sigma_m=float(d.get("reference_sigma_m", 0.0)),
        )


class Path:
    """Arc-length parameterised spline through the scenario waypoints."""

    def __init__(self, waypoints, closed=False):
        w = np.asarray(waypoints, dtype=float)
        if closed and len(w) > 1 and not np.array_equal(w[0], w[-1]):
            w = np.vstack([w, w[:1]])
        self.closed = closed and len(w) > 2
        self.static = len(w) == 1
        if self.static:
            self.point = w[0]
            self.length = 0.0
            return
        chords = np.linalg.norm(np.diff(w, axis=0), axis=1)
        if np.any(chords == 0):
            raise DegenerateConfigurationError("repeated consecutive waypoints")
        u = np.concatenate([[0.0], np.cumsum(chords)])
        self.spline = CubicSpline(u, w, bc_type="periodic" if self.closed else "not-a-knot")
        self.tangent = self.spline.derivative()
        grid = np.linspace(0.0, u[-1], _ARC_SAMPLES_PER_SPAN * (len(w) - 1) + 1)
        speed = np.linalg.norm(self.tangent(grid), axis=1)
        arc = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(grid))])
        self._u, self._s = grid, arc
        self.length = float(arc[-1])

    def at(self, s):
        """Position ``(n, 3)`` and heading ``(n,)`` at arc lengths ``s``."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if self.static:
            return np.repeat(self.point[None], len(s), axis=0), np.zeros(len(s))
        if self.closed:
            s = np.mod(s, self.length)
        else:
            s = np.clip(s, 0.0, self.length)
        u = np.interp(s, self._s, self._u)
        d = self.tangent(u)
        return self.spline(u), np.arctan2(d[:, 1], d[:, 0])


def distance_travelled(speed, t):
    """Arc length covered by time ``t`` for a constant or piecewise-linear speed."""
    t = np.asarray(t, dtype=float)
    if np.isscalar(speed):
        return float(speed) * t
    knots = np.asarray(speed, dtype=float)
    tk, vk = knots[:, 0], knots[:, 1]
    if np.any(np.diff(tk) <= 0) or np.any(vk < 0):
        raise ConfigError("speed profile needs increasing times and non-negative speeds")
    sk = np.concatenate([[0.0], np.cumsum(0.5 * (vk[1:] + vk[:-1]) * np.diff(tk))])
    # Before the first knot the robot moves at the first speed from s = v0 * (t - t0).
    k = np.clip(np.searchsorted(tk, t, side="right") - 1, 0, len(tk) - 1)
    dt = t - tk[k]
    nxt = np.minimum(k + 1, len(tk) - 1)
    span = np.where(nxt > k, tk[nxt] - tk[k], 1.0)
    acc = np.where((nxt > k) & (dt > 0), (vk[nxt] - vk[k]) / span, 0.0)
    return sk[k] + vk[k] * dt + 0.5 * acc * dt**2


class Truth:
    """Continuous-time robot pose of a scenario."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.path = Path(scenario.waypoints, scenario.closed)

    def poses(self, t):
        """Rotations ``(n, 3, 3)`` and translations ``(n, 3)`` at times ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        pos, yaw = self.path.at(distance_travelled(self.scenario.speed, t))
        rot = so3_exp(np.stack([np.zeros_like(yaw), np.zeros_like(yaw), yaw], axis=-1))
        return rot, pos

    def at(self, t) -> RigidTransform:
        r, p = self.poses(t)
        return RigidTransform(r[0], p[0])

    def prism_positions(self, t, prism):
        r, p = self.poses(t)
        return np.einsum("nij,j->ni", r, self.scenario.prism_offsets[prism]) + p


def generate_truth(scenario: Scenario, rate_hz: float = TRUTH_RATE_HZ):
    """Robot poses on a dense grid from 0 to the duration inclusive."""
    truth = Truth(scenario)
    n = int(round(scenario.duration_s * rate_hz))
    times = np.arange(n + 1) / rate_hz
    r, p = truth.poses(times)
    return [(float(t), RigidTransform(ri, pi)) for t, ri, pi in zip(times, r, p)]


@dataclass
class TrajectorySet:
    """Everything the pipeline consumes, plus oracle data when simulated.

    ``streams[rts_id]`` is the time-ordered list of readings of the prism
    tracked by that RTS; prism order follows sorted RTS ids.
    """

    streams: dict
    gcps: GcpSet | None = None
    reference: object = None
    true_positions: dict = field(default_factory=dict)  # rts_id -> (n, 3) world, at true read time
    rts_poses: dict = field(default_factory=dict)

    @property
    def rts_ids(self):
        return sorted(self.streams)


def measurement_times(scenario: Scenario, rts_index: int, rts_id: int):
    phase = scenario.phase_offsets_s[rts_index]
    n = int(math.ceil((scenario.duration_s - phase) * scenario.rate_hz)) + 1
    t = phase + np.arange(n) / scenario.rate_hz
    keep = t < scenario.duration_s - 1e-12
    for occ_id, t0, t1 in scenario.occlusions:
        if occ_id == rts_id:
            keep &= ~((t >= t0) & (t <= t1))
    return t[keep]


def _readings(points_rts, budget, cond, rng):
    """Raw readings whose corrected, noise-free value is exactly ``points_rts``."""
    rho, theta, phi = cartesian_to_spherical(points_rts)
    n = len(rho)
    if np.any(np.abs(np.sin(theta)) < COT_GUARD):
        raise SingularGeometryError("prism on the instrument's x axis (singular tilt model)")
    z = rng.standard_normal(size=(4, n))
    d_t, d_p, d_h = sample_atmosphere_offsets(budget, rng, n)
    alpha = _ppm(cond.temperature + d_t, cond.pressure + d_p, cond.humidity + d_h)
    raw_rho = rho / (1.0 + alpha * 1e-6) + z[0] * budget.sigma_rho(rho)
    e_tilt = z[3] * budget.sigma_tilt
    raw_theta = theta + z[1] * budget.sigma_theta + e_tilt
    raw_phi = phi + z[2] * budget.sigma_phi
    if budget.sigma_tilt > 0:
        raw_phi = raw_phi + e_tilt * np.cos(raw_theta) / np.sin(raw_theta)
    return raw_rho, raw_theta, raw_phi


def simulate_measurements(scenario: Scenario, truth: Truth | None = None) -> TrajectorySet:
    """Per-RTS raw streams, with the exact prism positions kept for oracle use.

    A clock error makes each reading observe the prism at ``t + e_ts`` while
    being labelled ``t``.
    """
    truth = Truth(scenario) if truth is None else truth
    b = scenario.budget
    streams, true_positions = {}, {}
    for k, rts_id in enumerate(scenario.rts_ids):
        rng = np.random.default_rng(derive_seed(scenario.seed, STAGE_SIMULATION, rts_id, 0))
        times = measurement_times(scenario, k, rts_id)
        t_true = times + b.mu_ts + b.sigma_ts * rng.standard_normal(len(times))
        world = truth.prism_positions(t_true, k)
        local = scenario.rts_poses[rts_id].inverse().apply(world)
        if np.any(np.linalg.norm(local, axis=1) < 1e-9):
            raise SingularGeometryError(f"prism {k + 1} at the origin of RTS {rts_id}")
        rho, theta, phi = _readings(local, b, scenario.atmosphere, rng)
        streams[rts_id] = [
            RawMeasurement(float(r), float(th), float(ph), float(t), rts_id)
            for r, th, ph, t in zip(rho, theta, phi, times)
        ]
        true_positions[rts_id] = world
    ref_cov = np.repeat(np.eye(3)[None] * scenario.reference_sigma_m**2, 3, axis=0)
    return TrajectorySet(
        streams=streams,
        gcps=simulate_gcps(scenario),
        reference=ReferenceTriplet(scenario.prism_offsets, ref_cov),
        true_positions=true_positions,
        rts_poses=dict(scenario.rts_poses),
    )


def gcp_layout(scenario: Scenario, n=None):
    """World positions of the GCPs: explicit, or ``n`` points around a square/circle.

    Four points form a square of side ``gcp_extent_m``; other counts sit on the
    circumscribed circle. Heights alternate by +-0.25 m.
    """
    if scenario.gcp_points is not None and n is None:
        return scenario.gcp_points
    n = scenario.gcp_count if n is None else n
    if n < 3:
        raise ConfigError("at least three GCPs are required")
    if scenario.gcp_center is not None:
        center = scenario.gcp_center
    else:
        center = np.mean([p.translation for p in scenario.rts_poses.values()], axis=0)
    radius = scenario.gcp_extent_m / math.sqrt(2.0)
    a = math.pi / 4 + 2 * math.pi * np.arange(n) / n
    z = 0.25 * (-1.0) ** np.arange(n)
    return center + np.stack([radius * np.cos(a), radius * np.sin(a), z], axis=1)


def simulate_gcps(scenario: Scenario, n=None) -> GcpSet:
    """Static GCP readings from every RTS (no clock error: GCPs do not move)."""
    points = gcp_layout(scenario, n)
    readings = {}
    for rts_id in scenario.rts_ids:
        rng = np.random.default_rng(derive_seed(scenario.seed, STAGE_SIMULATION, rts_id, 1))
        local = scenario.rts_poses[rts_id].inverse().apply(points)
        rho, theta, phi = _readings(local, scenario.budget, scenario.atmosphere, rng)
        readings[rts_id] = {
            j + 1: RawMeasurement(float(r), float(th), float(ph), 0.0, rts_id)
            for j, (r, th, ph) in enumerate(zip(rho, theta, phi))
        }
    return GcpSet(readings)


# Prism layout of a small rover: centroid at the body origin, 0.9 m apart.
DEFAULT_PRISM_OFFSETS = ((0.6, 0.0, 0.5), (-0.3, 0.45, 0.5), (-0.3, -0.45, 0.5))


def row_of_stations(spacing=3.0, yaw=0.0):
    """Three instruments on the x axis, all facing +y."""
    return {
        k + 1: RigidTransform(yaw_rotation(yaw), [x, 0.0, 0.0])
        for k, x in enumerate((-spacing, 0.0, spacing))
    }


def line_scenario(start_m, end_m, speed=0.5, duration_s=None, **kwargs) -> Scenario:
    """Robot driving straight away from a row of stations along +y.

    Keeps every horizontal angle near pi/2. GCPs default to a 30 m square
    centred 20 m in front of the stations.
    """
    kwargs.setdefault("prism_offsets", DEFAULT_PRISM_OFFSETS)
    kwargs.setdefault("rts_poses", row_of_stations())
    kwargs.setdefault("gcp_center", np.array([0.0, 20.0, 0.0]))
    if duration_s is None:
        duration_s = abs(end_m - start_m) / speed
    return Scenario(
        waypoints=[[0.0, start_m, 0.0], [0.0, end_m, 0.0]],
        speed=speed,
        duration_s=duration_s,
        **kwargs,
    )
