import numpy as np
import pytest

from conftest import equilateral, random_transform
from rts_uncertainty.errors import ConfigError, DegenerateConfigurationError
from rts_uncertainty.fusion import ReferenceTriplet, Triplet, assemble_triplets, fuse_pose_mc
from rts_uncertainty.geometry import se3_log, sqrt_frobenius
from rts_uncertainty.gp import fit
from rts_uncertainty.montecarlo import PointEstimate

SD = 0.002


def iso(sd, n=3):
    return np.repeat(np.eye(3)[None] * sd**2, n, axis=0)


def static_gp(p, times):
    return fit([PointEstimate(np.asarray(p, dtype=float), np.eye(3) * SD**2, t) for t in times])


class TestReference:
    def test_too_close(self):
        with pytest.raises(ConfigError):
            ReferenceTriplet.exact([[0, 0, 0], [0.05, 0, 0], [0, 1, 0]])

    def test_not_psd(self):
        covs = iso(0.001)
        covs[1, 0, 0] = -1e-3
        with pytest.raises(ConfigError):
            ReferenceTriplet(equilateral(1.0), covs)

    def test_from_static_measurements(self, rng):
        pts = equilateral(1.0)
        samples = pts + rng.normal(scale=0.001, size=(4000, 3, 3))
        ref = ReferenceTriplet.from_static_measurements(samples)
        np.testing.assert_allclose(ref.points, pts, atol=1e-4)
        np.testing.assert_allclose(ref.covariances, iso(0.001), atol=1e-7)


class TestAssemble:
    times = np.arange(0.0, 10.01, 0.4)

    def test_static_constant(self):
        gps = [static_gp(p, self.times) for p in equilateral(1.0)]
        trs = assemble_triplets(*gps, np.arange(0.0, 10.0, 0.1))
        assert len(trs) == 100
        for tr in trs:
            np.testing.assert_allclose(tr.points, equilateral(1.0), atol=1e-12)
        assert [tr.index for tr in trs] == list(range(100))

    def test_gap_skipped(self, caplog):
        pts = equilateral(1.0)
        gap_times = np.concatenate([self.times[self.times < 3.0], self.times[self.times > 7.0]])
        segments = [static_gp(pts[0], gap_times[gap_times < 3.0]), static_gp(pts[0], gap_times[gap_times > 7.0])]
        gps = [segments, static_gp(pts[1], self.times), static_gp(pts[2], self.times)]
        query = np.array([1.0, 5.0, 8.0])
        with caplog.at_level("WARNING"):
            trs = assemble_triplets(*gps, query)
        assert [tr.t for tr in trs] == [1.0, 8.0]
        assert "skipped 1" in caplog.text


class TestFuse:
    def test_zero_noise_recovers_pose(self, rng):
        T0 = random_transform(rng, max_angle=2.5)
        ref = ReferenceTriplet.exact(equilateral(0.9) + [0.0, 0.0, 0.5])
        fused = fuse_pose_mc(Triplet(1.0, T0.apply(ref.points), np.zeros((3, 3, 3))), ref, 200, 0)
        np.testing.assert_allclose(fused.mean, se3_log(T0), atol=1e-12)
        np.testing.assert_allclose(fused.covariance, 0.0, atol=1e-24)
        np.testing.assert_allclose(fused.residuals, 0.0, atol=1e-12)
        assert fused.t == 1.0

    def test_centroid_translation(self, rng):
        ref = ReferenceTriplet.exact(equilateral(1.0))
        T0 = random_transform(rng)
        fused = fuse_pose_mc(Triplet(0.0, T0.apply(ref.points), iso(SD)), ref, 100_000, 3)
        expected = np.eye(3) * SD**2 / 3
        err = np.linalg.norm(fused.covariance[:3, :3] - expected) / np.linalg.norm(expected)
        assert err < 0.10

    def test_rotation_scales_with_side(self):
        def rot_sd(side):
            ref = ReferenceTriplet.exact(equilateral(side))
            fused = fuse_pose_mc(Triplet(0.0, ref.points, iso(SD)), ref, 100_000, 4)
            return np.sqrt(np.trace(fused.covariance[3:, 3:]))

        assert rot_sd(0.5) / rot_sd(1.0) == pytest.approx(2.0, rel=0.15)

    def test_reference_noise_adds(self):
        pts = equilateral(1.0)
        clean = fuse_pose_mc(Triplet(0.0, pts, iso(SD)), ReferenceTriplet.exact(pts), 20_000, 5)
        noisy = fuse_pose_mc(Triplet(0.0, pts, iso(SD)), ReferenceTriplet(pts, iso(SD)), 20_000, 5)
        assert np.trace(noisy.covariance[:3, :3]) > 1.5 * np.trace(clean.covariance[:3, :3])

    def test_left_equivariance(self, rng):
        ref = ReferenceTriplet.exact(equilateral(0.9))
        T0, G = random_transform(rng), random_transform(rng, max_angle=2.0)
        q = T0.apply(ref.points) + rng.normal(scale=0.01, size=(3, 3))
        a = fuse_pose_mc(Triplet(0.0, q, iso(SD)), ref, 100_000, 6)
        b = fuse_pose_mc(Triplet(0.0, G.apply(q), iso(SD)), ref, 100_000, 7)
        moved = G @ a.pose.transform
        np.testing.assert_allclose(b.pose.transform.rotation, moved.rotation, atol=1e-9)
        np.testing.assert_allclose(b.pose.transform.translation, moved.translation, atol=1e-9)
        # Body-frame covariances do not see a change of world frame.
        assert np.linalg.norm(b.covariance - a.covariance) / np.linalg.norm(a.covariance) < 0.05

    def test_seeded(self):
        ref = ReferenceTriplet.exact(equilateral(0.9))
        tr = Triplet(0.0, ref.points, iso(SD))
        a, b = fuse_pose_mc(tr, ref, 500, 11), fuse_pose_mc(tr, ref, 500, 11)
        np.testing.assert_array_equal(a.covariance, b.covariance)
        np.testing.assert_array_equal(a.sample_mean, b.sample_mean)

    def test_psd_and_floor_on_random_scenarios(self, rng):
        for k in range(1000):
            T0 = random_transform(rng, max_angle=2.0, max_offset=100.0)
            ref_pts = rng.normal(scale=0.5, size=(3, 3))
            # Keep to well-shaped triangles: pose samples must stay in one tight cluster.
            if np.linalg.svd(ref_pts - ref_pts.mean(axis=0), compute_uv=False)[1] < 0.1:
                continue
            a = rng.normal(size=(3, 3, 3)) * rng.uniform(1e-4, 0.005, size=(3, 1, 1))
            covs = a @ np.swapaxes(a, 1, 2)
            fused = fuse_pose_mc(Triplet(0.0, T0.apply(ref_pts), covs), ReferenceTriplet.exact(ref_pts), 100, k)
            assert np.linalg.eigvalsh(fused.covariance).min() > -1e-15
            np.testing.assert_allclose(fused.covariance, fused.covariance.T)
            floor = sqrt_frobenius(covs).min() / 3
            assert sqrt_frobenius(fused.covariance[:3, :3]) >= floor

    def test_too_few_samples(self):
        ref = ReferenceTriplet.exact(equilateral(1.0))
        with pytest.raises(ConfigError):
            fuse_pose_mc(Triplet(0.0, ref.points, iso(SD)), ref, 99)

    def test_collinear_triplet_fails_after_retries(self):
        ref = ReferenceTriplet.exact(equilateral(1.0))
        line = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
        with pytest.raises(DegenerateConfigurationError):
            fuse_pose_mc(Triplet(0.0, line, np.zeros((3, 3, 3))), ref, 100)
