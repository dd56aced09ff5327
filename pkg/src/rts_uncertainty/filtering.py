"""Selection filters on raw streams and on interpolated prism triplets.

All filters are pure selections: survivors are returned unchanged and in order.

The rate thresholds and the gap/length thresholds follow the values of a
published outlier pipeline whose internals are not reproduced here. The
semantics used are the simplest ones consistent with the parameter names:
``tau_s`` splits a stream at gaps longer than it, and ``tau_l`` is the
minimum duration of a segment worth keeping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .geometry import sqrt_frobenius


@dataclass(frozen=True)
class FilterParams:
    tau_r: float = 2.0  # m/s
    tau_a: float = 1.0  # deg/s, horizontal angle
    tau_e: float = 1.0  # deg/s, vertical angle
    tau_s: float = 3.0  # s
    tau_l: float = 2.0  # s
    max_uncertainty: float = 0.20  # m
    max_interprism_dev: float = 0.10  # m

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"filter parameter {name} must be positive")

    _KEYS = {
        "tau_r_mps": "tau_r",
        "tau_a_degps": "tau_a",
        "tau_e_degps": "tau_e",
        "tau_s_s": "tau_s",
        "tau_l_s": "tau_l",
        "max_uncertainty_m": "max_uncertainty",
        "max_interprism_dev_m": "max_interprism_dev",
    }

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls._KEYS)
        if unknown:
            raise ConfigError(f"filters: unknown keys {sorted(unknown)}")
        return cls(**{cls._KEYS[k]: float(v) for k, v in d.items()})

    def to_dict(self):
        return {k: getattr(self, attr) for k, attr in self._KEYS.items()}


def angle_diff(a, b):
    """Shortest signed difference ``a - b`` wrapped to ``[-pi, pi)``."""
    return (a - b + math.pi) % (2.0 * math.pi) - math.pi


def filter_dynamics(stream, p: FilterParams = FilterParams()):
    """Drop readings whose rate of change from the last kept reading is too high.

    A reading further than ``tau_s`` from the last kept one starts afresh, so a
    single spike cannot starve the rest of the stream.
    """
    kept = []
    tau_a = math.radians(p.tau_a)
    tau_e = math.radians(p.tau_e)
    for m in stream:
        if not kept:
            kept.append(m)
            continue
        last = kept[-1]
        dt = m.t - last.t
        if dt > p.tau_s:
            kept.append(m)
            continue
        if dt <= 0:
            continue
        if (
            abs(m.rho - last.rho) / dt > p.tau_r
            or abs(angle_diff(m.theta, last.theta)) / dt > tau_e
            or abs(angle_diff(m.phi, last.phi)) / dt > tau_a
        ):
            continue
        kept.append(m)
    return kept


def split_segments(stream, p: FilterParams = FilterParams()):
    """Split at gaps longer than ``tau_s``; drop segments shorter than ``tau_l``."""
    segments, current = [], []
    for m in stream:
        if current and m.t - current[-1].t > p.tau_s:
            segments.append(current)
            current = []
        current.append(m)
    if current:
        segments.append(current)
    return [s for s in segments if s[-1].t - s[0].t >= p.tau_l]


def uncertainty_ok(covariances, p: FilterParams = FilterParams()):
    return bool(np.all(sqrt_frobenius(np.asarray(covariances)) <= p.max_uncertainty))


def interprism_ok(points, reference_points, p: FilterParams = FilterParams()):
    q = np.asarray(points, dtype=float)
    r = np.asarray(reference_points, dtype=float)
    for i, k in ((0, 1), (0, 2), (1, 2)):
        dev = abs(np.linalg.norm(q[i] - q[k]) - np.linalg.norm(r[i] - r[k]))
        if dev > p.max_interprism_dev:
            return False
    return True


def gate_fused(triplets, reference, p: FilterParams = FilterParams()):
    """Keep triplets passing both the uncertainty gate and the inter-prism gate.

    ``triplets`` expose ``points`` (3x3) and ``covariances`` (3x3x3);
    ``reference`` exposes ``points``.
    """
    return [
        tr
        for tr in triplets
        if uncertainty_ok(tr.covariances, p) and interprism_ok(tr.points, reference.points, p)
    ]
