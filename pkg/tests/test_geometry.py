import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_transform
from rts_uncertainty.errors import (
    DegenerateConfigurationError,
    DispersionError,
    DomainError,
    NearSingularityError,
)
from rts_uncertainty.geometry import (
    RigidTransform,
    adjoint,
    cartesian_to_spherical,
    pose_mean_cov,
    pose_mean_cov_batch,
    registration_residual,
    rigid_registration,
    se3_exp,
    se3_exp_batch,
    se3_log,
    so3_exp,
    spherical_to_cartesian,
    sqrt_frobenius,
)

finite_angle = st.floats(-10.0, 10.0, allow_nan=False)


class TestSpherical:
    def test_equator(self):
        np.testing.assert_allclose(spherical_to_cartesian(1.0, 0.0, math.pi / 2), [1, 0, 0], atol=1e-16)

    @pytest.mark.parametrize("theta", [0.0, 0.7, -2.0, math.pi])
    def test_polar_axis(self, theta):
        np.testing.assert_allclose(spherical_to_cartesian(1.0, theta, 0.0), [0, 0, 1], atol=1e-16)

    def test_componentwise(self):
        rho, theta, phi = 100.0, 0.3, 1.2
        expected = [
            rho * math.sin(phi) * math.cos(theta),
            rho * math.sin(phi) * math.sin(theta),
            rho * math.cos(phi),
        ]
        np.testing.assert_allclose(spherical_to_cartesian(rho, theta, phi), expected, rtol=1e-15)

    def test_negative_range(self):
        with pytest.raises(DomainError):
            spherical_to_cartesian(-1.0, 0.0, 0.0)

    @given(st.one_of(st.just(0.0), st.floats(1e-6, 1e4)), finite_angle, finite_angle)
    def test_norm_equals_range(self, rho, theta, phi):
        p = spherical_to_cartesian(rho, theta, phi)
        assert abs(np.linalg.norm(p) - rho) <= 1e-12 * max(rho, 1e-300)

    @given(st.floats(0.1, 1e3), st.floats(-3.0, 3.0), st.floats(0.05, 3.09))
    def test_inverse_round_trip(self, rho, theta, phi):
        p = spherical_to_cartesian(rho, theta, phi)
        back = spherical_to_cartesian(*cartesian_to_spherical(p))
        np.testing.assert_allclose(back, p, atol=1e-10 * rho)

    def test_inverse_rejects_origin(self):
        with pytest.raises(DomainError):
            cartesian_to_spherical(np.zeros(3))


class TestRegistration:
    def test_identity(self, rng):
        pts = rng.normal(size=(5, 3))
        T = rigid_registration(pts, pts)
        np.testing.assert_allclose(T.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(T.translation, 0, atol=1e-12)

    @pytest.mark.parametrize("n", [3, 4, 10])
    def test_recovers_known_transform(self, rng, n):
        T0 = random_transform(rng, max_angle=3.0)
        src = rng.normal(scale=2.0, size=(n, 3))
        T = rigid_registration(src, T0.apply(src))
        np.testing.assert_allclose(T.rotation, T0.rotation, atol=1e-9)
        np.testing.assert_allclose(T.translation, T0.translation, atol=1e-9)
        assert np.linalg.det(T.rotation) == pytest.approx(1.0)

    def test_residual_matches_brute_force_minimum(self, rng):
        src = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        dst = src.copy()
        dst[2] += [0.03, -0.02, 0.05]
        best = registration_residual(rigid_registration(src, dst), src, dst)

        # Oracle: coordinate grid search over (translation, rotation vector),
        # refined by shrinking the grid around the incumbent.
        x = np.zeros(6)
        f = registration_residual(se3_exp(x), src, dst)
        step = 0.1
        offsets = np.array(np.meshgrid(*[[-1, 0, 1]] * 6, indexing="ij")).reshape(6, -1).T
        while step > 1e-7:
            improved = False
            for o in offsets:
                cand = x + step * o
                r, t = se3_exp_batch(cand)
                fc = registration_residual(RigidTransform(r, t), src, dst)
                if fc < f - 1e-18:
                    x, f, improved = cand, fc, True
            if not improved:
                step *= 0.5
        assert best <= f + 1e-12
        assert best == pytest.approx(f, rel=1e-6)

    def test_reflection_excluded(self):
        src = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0], [0, 0, 0]])
        mirrored = src * [1, 1, -1]
        T = rigid_registration(src, mirrored)
        assert np.linalg.det(T.rotation) == pytest.approx(1.0)

    @pytest.mark.parametrize(
        "pts",
        [
            [[0, 0, 0], [1, 0, 0]],
            [[0, 0, 0], [1, 1, 1], [2, 2, 2]],
            [[1, 2, 3], [1, 2, 3], [1, 2, 3]],
        ],
    )
    def test_degenerate(self, pts):
        pts = np.asarray(pts, dtype=float)
        with pytest.raises(DegenerateConfigurationError):
            rigid_registration(pts, pts)

    def test_left_equivariance(self, rng):
        src = rng.normal(size=(6, 3))
        T0 = random_transform(rng)
        G = random_transform(rng, max_angle=2.0)
        dst = T0.apply(src) + rng.normal(scale=0.01, size=src.shape)
        T = rigid_registration(src, dst)
        TG = rigid_registration(src, G.apply(dst))
        expected = G @ T
        np.testing.assert_allclose(TG.rotation, expected.rotation, atol=1e-9)
        np.testing.assert_allclose(TG.translation, expected.translation, atol=1e-9)

    def test_not_worse_than_identity(self, rng):
        src = rng.normal(size=(5, 3))
        dst = src + rng.normal(scale=0.3, size=src.shape)
        T = rigid_registration(src, dst)
        assert registration_residual(T, src, dst) <= registration_residual(RigidTransform.identity(), src, dst)


class TestSe3:
    def test_identity_log(self):
        np.testing.assert_array_equal(se3_log(RigidTransform.identity()), np.zeros(6))

    def test_pure_translation(self):
        np.testing.assert_allclose(se3_log(RigidTransform(np.eye(3), [1.0, -2.0, 3.0])), [1, -2, 3, 0, 0, 0])

    def test_round_trip_half_radian(self, rng):
        axis = rng.normal(size=3)
        T = RigidTransform(so3_exp(0.5 * axis / np.linalg.norm(axis)), rng.normal(size=3))
        back = se3_exp(se3_log(T))
        np.testing.assert_allclose(back.rotation, T.rotation, atol=1e-9)
        np.testing.assert_allclose(back.translation, T.translation, atol=1e-9)

    def test_round_trip_thousand(self, rng):
        axes = rng.normal(size=(1000, 3))
        axes /= np.linalg.norm(axes, axis=1, keepdims=True)
        w = axes * rng.uniform(0.0, 3.0, size=(1000, 1))
        xi = np.hstack([rng.uniform(-50, 50, size=(1000, 3)), w])
        for x in xi:
            T = se3_exp(x)
            back = se3_exp(se3_log(T))
            np.testing.assert_allclose(back.rotation, T.rotation, atol=1e-9)
            np.testing.assert_allclose(back.translation, T.translation, atol=1e-9)
            np.testing.assert_allclose(se3_log(T), x, atol=1e-8)

    def test_near_half_turn(self):
        T = RigidTransform(so3_exp([0.0, 0.0, math.pi - 1e-12]), np.zeros(3))
        with pytest.raises(NearSingularityError):
            se3_log(T)

    def test_exp_rejects_nonfinite(self):
        with pytest.raises(DomainError):
            se3_exp([0, 0, np.nan, 0, 0, 0])


class TestPoseMean:
    def test_identical_samples(self, rng):
        T = random_transform(rng)
        est = pose_mean_cov([T] * 5)
        np.testing.assert_allclose(est.mean, se3_log(T), atol=1e-12)
        np.testing.assert_allclose(est.covariance, 0.0, atol=1e-24)

    def test_symmetric_translations(self):
        a = np.array([0.4, -1.0, 2.0])
        est = pose_mean_cov([RigidTransform(np.eye(3), a), RigidTransform(np.eye(3), -a)])
        np.testing.assert_allclose(est.mean, 0.0, atol=1e-15)

    def _sigma0(self):
        a = np.diag([0.02, 0.01, 0.03, 0.004, 0.002, 0.006])
        a[0, 4] = 0.003
        a[5, 1] = -0.002
        return a @ a.T

    def test_recovers_body_covariance(self, rng):
        # Samples T0 exp(eps), eps ~ N(0, Sigma0): the body-frame convention.
        sigma0 = self._sigma0()
        T0 = random_transform(rng, max_angle=1.0)
        eps = rng.multivariate_normal(np.zeros(6), sigma0, size=100_000)
        dr, dt = se3_exp_batch(eps)
        r = T0.rotation @ dr
        t = dt @ T0.rotation.T + T0.translation
        est = pose_mean_cov_batch(r, t)
        err = np.linalg.norm(est.covariance - sigma0) / np.linalg.norm(sigma0)
        assert err < 0.05
        np.testing.assert_allclose(est.mean, se3_log(T0), atol=2e-3)

    def test_left_samples_map_through_adjoint(self, rng):
        # Samples exp(eps) T0 have body covariance Ad(T0^-1) Sigma0 Ad(T0^-1)^T.
        sigma0 = self._sigma0()
        T0 = random_transform(rng, max_angle=1.0, max_offset=3.0)
        eps = rng.multivariate_normal(np.zeros(6), sigma0, size=100_000)
        dr, dt = se3_exp_batch(eps)
        r = dr @ T0.rotation
        t = np.einsum("mij,j->mi", dr, T0.translation) + dt
        est = pose_mean_cov_batch(r, t)
        ad = adjoint(T0.inverse())
        expected = ad @ sigma0 @ ad.T
        err = np.linalg.norm(est.covariance - expected) / np.linalg.norm(expected)
        assert err < 0.05

    def test_needs_two_samples(self):
        with pytest.raises(DispersionError):
            pose_mean_cov([RigidTransform.identity()])

    def test_rejects_spread_rotations(self):
        samples = [RigidTransform(so3_exp([0, 0, a]), np.zeros(3)) for a in (-1.5, 0.0, 1.5, 2.9)]
        with pytest.raises(DispersionError):
            pose_mean_cov(samples)


class TestSqrtFrobenius:
    def test_isotropic_mm(self):
        assert sqrt_frobenius(np.eye(3) * 1e-6) * 1e3 == pytest.approx(3**0.25, rel=1e-12)

    def test_zero(self):
        assert sqrt_frobenius(np.zeros((6, 6))) == 0.0

    def test_diag_411(self):
        assert sqrt_frobenius(np.diag([4.0, 1.0, 1.0])) == pytest.approx(18**0.25, rel=1e-12)
        assert 18**0.25 == pytest.approx(2.06, abs=5e-3)

    @given(st.one_of(st.just(0.0), st.floats(1e-12, 1e6)))
    def test_scaling(self, k):
        c = np.array([[2.0, 0.3, 0.1], [0.3, 1.0, -0.2], [0.1, -0.2, 0.5]])
        assert sqrt_frobenius(k * c) == pytest.approx(math.sqrt(k) * sqrt_frobenius(c), rel=1e-12, abs=1e-300)
