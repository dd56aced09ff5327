import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import equilateral
from rts_uncertainty.errors import ConfigError
from rts_uncertainty.filtering import FilterParams, angle_diff, filter_dynamics, gate_fused, split_segments
from rts_uncertainty.fusion import ReferenceTriplet, Triplet
from rts_uncertainty.gp import fit, query
from rts_uncertainty.montecarlo import PointEstimate
from rts_uncertainty.noise import RawMeasurement

DT = 0.4


def stream(rhos, times=None, theta=1.5, phi=1.5):
    times = np.arange(len(rhos)) * DT if times is None else times
    return [RawMeasurement(float(r), theta, phi, float(t)) for r, t in zip(rhos, times)]


class TestDynamics:
    def test_static_unchanged(self):
        s = stream([20.0] * 10)
        assert filter_dynamics(s) == s

    def test_range_jump_removed(self):
        rhos = [20.0] * 10
        rhos[5] = 25.0  # 5 m over 0.4 s = 12.5 m/s
        s = stream(rhos)
        out = filter_dynamics(s)
        assert s[5] not in out
        assert len(out) == 9

    def test_smooth_radial_motion_kept(self):
        s = stream(20.0 + DT * np.arange(50))
        assert filter_dynamics(s) == s

    def test_horizontal_angle_rate(self):
        # 1 deg/s threshold; 2 deg in one step of 0.4 s is too fast.
        s = [RawMeasurement(20.0, 1.5 + (math.radians(2.0) if k == 3 else 0.0), 1.5, k * DT) for k in range(6)]
        assert s[3] not in filter_dynamics(s)

    def test_wraparound_is_not_a_jump(self):
        s = [RawMeasurement(20.0, a, 1.5, k * DT) for k, a in enumerate([math.pi - 1e-4, -math.pi + 1e-4])]
        assert filter_dynamics(s) == s

    @given(st.lists(st.floats(5.0, 200.0), min_size=1, max_size=30))
    def test_idempotent_selection(self, rhos):
        s = stream(rhos)
        once = filter_dynamics(s)
        assert filter_dynamics(once) == once
        positions = [s.index(m) for m in once]
        assert positions == sorted(positions)
        assert all(m in s for m in once)


class TestSegments:
    def test_continuous_one_segment(self):
        assert len(split_segments(stream([10.0] * 20))) == 1

    def test_four_second_gap_splits(self):
        times = np.concatenate([np.arange(0, 5, DT), 5.0 - DT + 4.0 + np.arange(0, 5, DT)])
        segs = split_segments(stream([10.0] * len(times), times))
        assert len(segs) == 2

    def test_short_orphan_discarded(self):
        times = np.concatenate([np.arange(0, 5, DT), 10.0 + np.arange(0, 1.5 + 1e-9, 0.5)])
        segs = split_segments(stream([10.0] * len(times), times))
        assert len(segs) == 1
        assert segs[0][-1].t < 5

    @given(st.lists(st.floats(0.01, 6.0), min_size=1, max_size=40))
    def test_idempotent(self, steps):
        s = stream([10.0] * len(steps), np.cumsum(steps))
        once = [m for seg in split_segments(s) for m in seg]
        twice = [m for seg in split_segments(once) for m in seg]
        assert once == twice


class TestParams:
    def test_defaults(self):
        p = FilterParams()
        assert (p.tau_r, p.tau_a, p.tau_e, p.tau_s, p.tau_l) == (2.0, 1.0, 1.0, 3.0, 2.0)
        assert (p.max_uncertainty, p.max_interprism_dev) == (0.20, 0.10)

    def test_round_trip(self):
        p = FilterParams(tau_r=3.0)
        assert FilterParams.from_dict(p.to_dict()) == p

    @pytest.mark.parametrize("d", [{"tau_x": 1.0}, {"tau_r_mps": -1.0}])
    def test_invalid(self, d):
        with pytest.raises(ConfigError):
            FilterParams.from_dict(d)

    def test_angle_diff(self):
        assert angle_diff(math.pi - 0.1, -math.pi + 0.1) == pytest.approx(-0.2)


REF = ReferenceTriplet.exact(equilateral(0.9))


def triplet(points, sd=0.002):
    return Triplet(0.0, np.asarray(points, dtype=float), np.repeat(np.eye(3)[None] * sd**2, 3, axis=0))


class TestGate:
    def test_exact_kept(self):
        assert len(gate_fused([triplet(REF.points + [5.0, 1.0, 0.0])], REF)) == 1

    def test_displaced_prism_dropped(self):
        pts = REF.points.copy()
        away = (pts[1] - pts[0]) / np.linalg.norm(pts[1] - pts[0])
        pts[1] += 0.15 * away
        assert gate_fused([triplet(pts)], REF) == []

    def test_inflated_covariance_dropped(self):
        # One prism fitted across a 10 s gap at 1 m/s.
        times = np.concatenate([np.arange(0, 5, DT), np.arange(15, 20, DT)])
        cov = np.eye(3) * 0.002**2
        gp = fit([PointEstimate(np.array([t, 0.0, 0.0]), cov, t) for t in times])
        q = query(gp, 10.0)
        tr = Triplet(10.0, REF.points + q.position, np.stack([q.covariance, cov, cov]))
        assert gate_fused([tr], REF) == []

    @given(st.floats(0.0, 0.3), st.floats(0.0, 0.3))
    def test_decomposes(self, shift, sd):
        pts = REF.points.copy()
        pts[0, 2] += shift
        tr = triplet(pts, sd)
        p = FilterParams()
        unc = sd * 3**0.25 <= p.max_uncertainty
        geo = all(
            abs(np.linalg.norm(pts[i] - pts[k]) - np.linalg.norm(REF.points[i] - REF.points[k])) <= p.max_interprism_dev
            for i, k in ((0, 1), (0, 2), (1, 2))
        )
        assert (len(gate_fused([tr], REF)) == 1) == (unc and geo)
