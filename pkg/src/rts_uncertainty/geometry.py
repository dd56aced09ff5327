"""Rigid-body geometry: spherical conversion, SE(3) maps, registration, pose averaging.

Conventions
-----------
* A :class:`RigidTransform` ``T = (R, t)`` maps a point ``p`` to ``R @ p + t``.
* Tangent vectors are ordered ``[translation (m), rotation (rad)]``.
* Pose perturbations are applied on the right, in the body frame:
  ``T = T_mean @ exp(eps)``. The translation block of a pose covariance is
  then the position spread of the body origin, independent of how far the
  body is from the world origin.

Most helpers come in a batched flavour (leading axes are sample axes) because
the Monte-Carlo stages push thousands of transforms through them at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import (
    DegenerateConfigurationError,
    DispersionError,
    DomainError,
    NearSingularityError,
)

PI_GUARD = 1e-9
MEAN_TOL = 1e-10
MEAN_MAX_ITER = 100


def spherical_to_cartesian(rho, theta, phi):
    """Convert instrument readings to Cartesian coordinates.

    ``phi`` is the polar angle and ``theta`` the azimuth in this mapping::

        x = rho sin(phi) cos(theta)
        y = rho sin(phi) sin(theta)
        z = rho cos(phi)

    Accepts scalars or equally-shaped arrays; the result has a trailing axis of 3.
    """
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any(rho < 0):
        raise DomainError("range must be non-negative")
    sin_phi = np.sin(phi)
    return np.stack(
        [rho * sin_phi * np.cos(theta), rho * sin_phi * np.sin(theta), rho * np.cos(phi)],
        axis=-1,
    )


def cartesian_to_spherical(p):
    """Inverse of :func:`spherical_to_cartesian`; returns ``(rho, theta, phi)``."""
    p = np.asarray(p, dtype=float)
    rho = np.linalg.norm(p, axis=-1)
    if np.any(rho == 0.0):
        raise DomainError("point at the instrument origin has no direction")
    theta = np.arctan2(p[..., 1], p[..., 0])
    phi = np.arccos(np.clip(p[..., 2] / rho, -1.0, 1.0))
    return rho, theta, phi


def hat(w):
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def vee(m):
    m = np.asarray(m, dtype=float)
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def _exp_coefficients(theta):
    # A = sin/theta, B = (1-cos)/theta^2, C = (theta-sin)/theta^3 with series near 0.
    small = theta < 1e-4
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - np.cos(t)) / (t * t))
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0, (t - np.sin(t)) / (t**3))
    return a, b, c


def so3_exp(w):
    """Rodrigues map; batched over leading axes."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    a, b, _ = _exp_coefficients(theta)
    k = hat(w)
    k2 = k @ k
    return np.eye(3) + a[..., None, None] * k + b[..., None, None] * k2


def so3_log(r):
    """Rotation vector of ``r``; raises near a half-turn."""
    r = np.asarray(r, dtype=float)
    skew = vee(r - np.swapaxes(r, -1, -2)) * 0.5
    s = np.linalg.norm(skew, axis=-1)
    c = (np.trace(r, axis1=-2, axis2=-1) - 1.0) * 0.5
    theta = np.arctan2(s, c)
    if np.any(np.abs(np.pi - theta) < PI_GUARD):
        raise NearSingularityError("rotation angle too close to pi for a stable logarithm")
    small = theta < 1e-4
    safe_s = np.where(small, 1.0, s)
    factor = np.where(small, 1.0 + theta * theta / 6.0, theta / safe_s)
    out = skew * factor[..., None]
    wide = c < 0
    if np.any(wide):
        # Past a quarter turn the skew part loses precision; take the axis from
        # the symmetric part, (R + R^T)/2 - cos(theta) I = (1 - cos(theta)) n n^T.
        sym = 0.5 * (r + np.swapaxes(r, -1, -2)) - c[..., None, None] * np.eye(3)
        diag = np.diagonal(sym, axis1=-2, axis2=-1)
        k = np.argmax(diag, axis=-1)
        col = np.take_along_axis(sym, k[..., None, None].repeat(3, axis=-1), axis=-2)[..., 0, :]
        n = col / np.linalg.norm(col, axis=-1, keepdims=True)
        sign = np.where(np.sum(n * skew, axis=-1) < 0, -1.0, 1.0)
        alt = n * (sign * theta)[..., None]
        out = np.where(wide[..., None], alt, out)
    return out


def _left_jacobian(w):
    theta = np.linalg.norm(w, axis=-1)
    _, b, c = _exp_coefficients(theta)
    k = hat(w)
    return np.eye(3) + b[..., None, None] * k + c[..., None, None] * (k @ k)


def _left_jacobian_inv(w):
    theta = np.linalg.norm(w, axis=-1)
    small = theta < 1e-4
    t = np.where(small, 1.0, theta)
    d = np.where(
        small,
        1.0 / 12.0 + theta**2 / 720.0,
        (1.0 - t * np.sin(t) / (2.0 * (1.0 - np.cos(t)))) / (t * t),
    )
    k = hat(w)
    return np.eye(3) - 0.5 * k + d[..., None, None] * (k @ k)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9) or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise DomainError("rotation is not a proper orthonormal matrix")
        if not np.all(np.isfinite(t)):
            raise DomainError("translation must be finite")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points):
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def inverse(self):
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def __matmul__(self, other):
        if isinstance(other, RigidTransform):
            return RigidTransform(
                self.rotation @ other.rotation,
                self.rotation @ other.translation + self.translation,
            )
        return NotImplemented


def se3_exp(xi) -> RigidTransform:
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (6,) or not np.all(np.isfinite(xi)):
        raise DomainError("se3_exp expects a finite 6-vector")
    r, t = se3_exp_batch(xi)
    return RigidTransform(r, t)


def se3_log(T: RigidTransform) -> np.ndarray:
    return se3_log_batch(T.rotation, T.translation)


def se3_exp_batch(xi):
    """Batched exponential; returns ``(R, t)`` arrays."""
    xi = np.asarray(xi, dtype=float)
    rho, w = xi[..., :3], xi[..., 3:]
    r = so3_exp(w)
    t = np.einsum("...ij,...j->...i", _left_jacobian(w), rho)
    return r, t


def se3_log_batch(r, t):
    w = so3_log(r)
    rho = np.einsum("...ij,...j->...i", _left_jacobian_inv(w), np.asarray(t, dtype=float))
    return np.concatenate([rho, w], axis=-1)


def adjoint(T: RigidTransform) -> np.ndarray:
    """6x6 adjoint for the ``[translation, rotation]`` ordering."""
    r, t = T.rotation, T.translation
    ad = np.zeros((6, 6))
    ad[:3, :3] = r
    ad[:3, 3:] = hat(t) @ r
    ad[3:, 3:] = r
    return ad


def _check_registration_geometry(centered, name):
    s = np.linalg.svd(centered, compute_uv=False)
    degenerate = s[..., 1] <= 1e-12 * s[..., 0]
    if np.any(degenerate):
        raise DegenerateConfigurationError(f"{name} points are collinear or coincident")
    return degenerate


def rigid_registration_batch(source, target, check=True):
    """Least-squares ``(R, t)`` with ``target ~ R @ source + t``.

    ``source`` and ``target`` have shape ``(..., N, 3)``. Reflections are
    excluded. With ``check=False`` degenerate inputs are not rejected; the
    caller gets whatever the SVD returns.
    """
    source = np.asarray(source, dtype=float)
    target = np.asarray(target, dtype=float)
    if source.shape != target.shape:
        raise DegenerateConfigurationError("source and target must have equal shapes")
    if source.shape[-2] < 3:
        raise DegenerateConfigurationError("at least three correspondences are required")
    cs = source.mean(axis=-2)
    ct = target.mean(axis=-2)
    a = source - cs[..., None, :]
    b = target - ct[..., None, :]
    if check:
        _check_registration_geometry(a, "source")
        _check_registration_geometry(b, "target")
    h = np.swapaxes(a, -1, -2) @ b
    u, _, vt = np.linalg.svd(h)
    v = np.swapaxes(vt, -1, -2)
    d = np.sign(np.linalg.det(v @ np.swapaxes(u, -1, -2)))
    d = np.where(d == 0, 1.0, d)
    fix = np.ones(d.shape + (3,))
    fix[..., 2] = d
    r = (v * fix[..., None, :]) @ np.swapaxes(u, -1, -2)
    t = ct - np.einsum("...ij,...j->...i", r, cs)
    return r, t


def collinear_mask(points, rel_tol=1e-12):
    """True for each point set (``(..., N, 3)``) whose centered spread is rank <= 1."""
    points = np.asarray(points, dtype=float)
    centered = points - points.mean(axis=-2, keepdims=True)
    s = np.linalg.svd(centered, compute_uv=False)
    return s[..., 1] <= rel_tol * s[..., 0]


def rigid_registration(source, target) -> RigidTransform:
    """Closed-form point-to-point alignment (centroids + cross-covariance SVD)."""
    source = np.asarray(source, dtype=float)
    target = np.asarray(target, dtype=float)
    if source.ndim != 2 or source.shape[1] != 3:
        raise DegenerateConfigurationError("expected an (N, 3) array of points")
    r, t = rigid_registration_batch(source, target)
    return RigidTransform(r, t)


def registration_residual(T: RigidTransform, source, target) -> float:
    d = T.apply(source) - np.asarray(target, dtype=float)
    return float(np.sum(d * d))


@dataclass(frozen=True)
class PoseEstimate:
    """Mean pose as a tangent vector ``xi`` with its 6x6 covariance."""

    mean: np.ndarray
    covariance: np.ndarray
    timestamp: float = 0.0

    @property
    def transform(self) -> RigidTransform:
        return se3_exp(self.mean)


def _chordal_mean_rotation(r):
    return Rotation.from_matrix(r).mean().as_matrix()


def pose_mean_cov_batch(r, t, timestamp=0.0):
    """Tangent-space mean and covariance of transform samples ``(R[M], t[M])``."""
    r = np.asarray(r, dtype=float)
    t = np.asarray(t, dtype=float)
    m = r.shape[0]
    if m < 2:
        raise DispersionError("at least two samples are needed for a covariance")
    r0 = _chordal_mean_rotation(r)
    spread = np.linalg.norm(so3_log_safe(np.einsum("ji,mjk->mik", r0, r)), axis=-1)
    if np.any(spread > np.pi / 2):
        raise DispersionError("rotation samples are not clustered within pi/2 of their mean")
    mean_r, mean_t = r0, t.mean(axis=0)
    for _ in range(MEAN_MAX_ITER):
        eps = _body_residuals(r, t, mean_r, mean_t)
        delta = eps.mean(axis=0)
        dr, dt = se3_exp_batch(delta)
        mean_r, mean_t = mean_r @ dr, mean_r @ dt + mean_t
        if np.linalg.norm(delta) < MEAN_TOL:
            break
    else:
        raise DispersionError("tangent-space mean did not converge in 100 iterations")
    eps = _body_residuals(r, t, mean_r, mean_t)
    centered = eps - eps.mean(axis=0)
    cov = centered.T @ centered / (m - 1)
    cov = 0.5 * (cov + cov.T)
    xi = se3_log_batch(mean_r, mean_t)
    return PoseEstimate(xi, cov, float(timestamp))


def so3_log_safe(r):
    # Only used for the dispersion pre-check, where half-turns are just "far".
    r = np.asarray(r, dtype=float)
    c = np.clip((np.trace(r, axis1=-2, axis2=-1) - 1.0) * 0.5, -1.0, 1.0)
    skew = vee(r - np.swapaxes(r, -1, -2)) * 0.5
    s = np.linalg.norm(skew, axis=-1)
    theta = np.arctan2(s, c)
    direction = np.where(s[..., None] > 0, skew / np.where(s > 0, s, 1.0)[..., None], 0.0)
    return direction * theta[..., None]


def _body_residuals(r, t, mean_r, mean_t):
    # log(inv(T_mean) @ T_i)
    rel_r = mean_r.T @ r
    rel_t = (t - mean_t) @ mean_r
    return se3_log_batch(rel_r, rel_t)


def pose_mean_cov(samples, timestamp=0.0) -> PoseEstimate:
    """Iterated tangent-space mean and sample covariance of ``RigidTransform`` samples."""
    samples = list(samples)
    if len(samples) < 2:
        raise DispersionError("at least two samples are needed for a covariance")
    r = np.stack([s.rotation for s in samples])
    t = np.stack([s.translation for s in samples])
    return pose_mean_cov_batch(r, t, timestamp)


def sqrt_frobenius(c):
    """Square root of the Frobenius norm; batched over leading axes."""
    c = np.asarray(c, dtype=float)
    return np.sqrt(np.sqrt(np.sum(c * c, axis=(-2, -1))))


def psd_sqrt(c):
    """Symmetric square root factor ``L`` with ``L @ L.T == c`` for PSD ``c``.

    Tolerates singular and slightly indefinite inputs by clipping eigenvalues.
    """
    c = np.asarray(c, dtype=float)
    c = 0.5 * (c + np.swapaxes(c, -1, -2))
    w, v = np.linalg.eigh(c)
    return v * np.sqrt(np.clip(w, 0.0, None))[..., None, :]
