"""Continuous-time prism trajectories under a white-noise-on-acceleration prior.

The GP posterior with this prior is Markov in the state ``[position, velocity]``,
so the exact regression reduces to a Kalman filter followed by a
Rauch-Tung-Striebel smoother, O(N) in the number of measurements. Queries
between two measurement times only need the joint posterior of the two
bracketing states.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ExtrapolationError, OrderingError
from .montecarlo import PointEstimate

REGULARIZATION = 1e-12
DEFAULT_GUARD = 1.0


class RegularizationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class GpPrior:
    """Power spectral density of the acceleration noise, per axis (m^2/s^3)."""

    qc: tuple = (1.0, 1.0, 1.0)
    initial_position_var: float = 1e2
    initial_velocity_var: float = 1e2

    def __post_init__(self):
        qc = np.broadcast_to(np.asarray(self.qc, dtype=float), (3,))
        if np.any(qc <= 0) or not np.all(np.isfinite(qc)):
            raise ConfigError("qc must be positive on every axis")
        object.__setattr__(self, "qc", tuple(float(q) for q in qc))

    @property
    def qc_matrix(self):
        return np.diag(self.qc)


def transition(dt):
    phi = np.eye(6)
    phi[:3, 3:] = dt * np.eye(3)
    return phi


def process_noise(dt, qc_matrix):
    q = np.empty((6, 6))
    q[:3, :3] = dt**3 / 3.0 * qc_matrix
    q[:3, 3:] = dt**2 / 2.0 * qc_matrix
    q[3:, :3] = q[:3, 3:]
    q[3:, 3:] = dt * qc_matrix
    return q


def _sym(m):
    return 0.5 * (m + np.swapaxes(m, -1, -2))


@dataclass(frozen=True)
class TrajectoryGp:
    times: np.ndarray
    means: np.ndarray  # (N, 6) posterior [p, v]
    covs: np.ndarray  # (N, 6, 6)
    cross: np.ndarray  # (N-1, 6, 6), Cov(x_n, x_{n+1})
    prior: GpPrior
    guard: float = DEFAULT_GUARD
    frame: str = "world"

    @property
    def start(self):
        return float(self.times[0])

    @property
    def end(self):
        return float(self.times[-1])

    def covers(self, t):
        return self.start - self.guard <= t <= self.end + self.guard


def fit(points, prior: GpPrior = GpPrior(), guard: float = DEFAULT_GUARD) -> TrajectoryGp:
    """Smooth time-ordered :class:`PointEstimate` measurements."""
    points = list(points)
    if len(points) < 2:
        raise ConfigError("a trajectory fit needs at least two points")
    times = np.array([p.t for p in points], dtype=float)
    if np.any(np.diff(times) <= 0):
        raise OrderingError("measurement times must be strictly increasing")
    ys = np.array([p.position for p in points], dtype=float)
    rs = np.array([p.covariance for p in points], dtype=float)
    rs = _regularize(rs)

    n = len(points)
    qc = prior.qc_matrix
    h = np.hstack([np.eye(3), np.zeros((3, 3))])

    x_pred = np.empty((n, 6))
    p_pred = np.empty((n, 6, 6))
    x_filt = np.empty((n, 6))
    p_filt = np.empty((n, 6, 6))

    # Diffuse start centred on the first finite difference, so that exactly
    # linear data is reproduced without shrinkage towards zero velocity.
    x = np.concatenate([ys[0], (ys[1] - ys[0]) / (times[1] - times[0])])
    p = np.diag([prior.initial_position_var] * 3 + [prior.initial_velocity_var] * 3)
    for k in range(n):
        if k > 0:
            dt = times[k] - times[k - 1]
            phi = transition(dt)
            x = phi @ x
            p = _sym(phi @ p @ phi.T + process_noise(dt, qc))
        x_pred[k], p_pred[k] = x, p
        s = p[:3, :3] + rs[k]
        gain = np.linalg.solve(s, p[:3, :]).T
        x = x + gain @ (ys[k] - x[:3])
        a = np.eye(6) - gain @ h
        p = _sym(a @ p @ a.T + gain @ rs[k] @ gain.T)
        x_filt[k], p_filt[k] = x, p

    means = np.empty((n, 6))
    covs = np.empty((n, 6, 6))
    cross = np.empty((max(n - 1, 0), 6, 6))
    means[-1], covs[-1] = x_filt[-1], p_filt[-1]
    for k in range(n - 2, -1, -1):
        phi = transition(times[k + 1] - times[k])
        g = np.linalg.solve(p_pred[k + 1], phi @ p_filt[k]).T
        means[k] = x_filt[k] + g @ (means[k + 1] - x_pred[k + 1])
        covs[k] = _sym(p_filt[k] + g @ (covs[k + 1] - p_pred[k + 1]) @ g.T)
        cross[k] = g @ covs[k + 1]
    return TrajectoryGp(times, means, covs, cross, prior, guard, points[0].frame)


def _regularize(rs):
    bad = []
    for k, r in enumerate(rs):
        try:
            np.linalg.cholesky(r)
        except np.linalg.LinAlgError:
            bad.append(k)
    if bad:
        warnings.warn(
            f"{len(bad)} singular measurement covariance(s) regularized by {REGULARIZATION} m^2",
            RegularizationWarning,
            stacklevel=3,
        )
        rs = rs.copy()
        rs[bad] += REGULARIZATION * np.eye(3)
    return rs


def query_state(gp: TrajectoryGp, t: float):
    """Posterior mean and covariance of the full ``[p, v]`` state at ``t``."""
    t = float(t)
    if not gp.covers(t):
        raise ExtrapolationError(
            f"t={t:.6f} outside [{gp.start - gp.guard:.6f}, {gp.end + gp.guard:.6f}]"
        )
    times = gp.times
    k = int(np.searchsorted(times, t))
    if k < len(times) and times[k] == t:
        return gp.means[k].copy(), gp.covs[k].copy()
    qc = gp.prior.qc_matrix
    if k == len(times):
        dt = t - times[-1]
        phi = transition(dt)
        return phi @ gp.means[-1], _sym(phi @ gp.covs[-1] @ phi.T + process_noise(dt, qc))
    if k == 0:
        # Run the prior backwards from the first state.
        dt = times[0] - t
        back = transition(-dt)
        cov = back @ (gp.covs[0] + process_noise(dt, qc)) @ back.T
        return back @ gp.means[0], _sym(cov)

    t1, t2 = times[k - 1], times[k]
    q1 = process_noise(t - t1, qc)
    q12 = process_noise(t2 - t1, qc)
    psi = np.linalg.solve(q12, transition(t2 - t) @ q1).T
    lam = transition(t - t1) - psi @ transition(t2 - t1)
    a = np.hstack([lam, psi])
    joint = np.block([[gp.covs[k - 1], gp.cross[k - 1]], [gp.cross[k - 1].T, gp.covs[k]]])
    mean = lam @ gp.means[k - 1] + psi @ gp.means[k]
    cov = a @ joint @ a.T + q1 - psi @ q12 @ psi.T
    return mean, _sym(cov)


def query(gp: TrajectoryGp, t: float) -> PointEstimate:
    """Interpolated position and its 3x3 covariance at ``t``."""
    mean, cov = query_state(gp, t)
    return PointEstimate(mean[:3], cov[:3, :3].copy(), float(t), gp.frame)
