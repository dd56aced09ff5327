"""Interpolation uncertainty across an occlusion.

Fits the white-noise-on-acceleration GP to a 1 m/s drive sampled at 2.5 Hz
with one gap, and prints the position std at the middle of the gap. Past
roughly 1.5 s the spread crosses the 20 cm gate and the pose is dropped.
"""

import numpy as np

from rts_uncertainty.filtering import FilterParams
from rts_uncertainty.geometry import sqrt_frobenius
from rts_uncertainty.gp import fit, query
from rts_uncertainty.montecarlo import PointEstimate

cov = np.eye(3) * 0.002**2
gate = FilterParams().max_uncertainty
before = np.arange(0.0, 10.0, 0.4)

print(f"{'gap s':>6} {'std mm':>10} {'gated':>6}")
for gap in (0.4, 1.0, 1.5, 2.0, 5.0, 10.0):
    times = np.concatenate([before, before[-1] + gap + np.arange(0.0, 10.0, 0.4)])
    gp = fit([PointEstimate(np.array([t, 0.0, 0.0]), cov, t) for t in times])
    q = query(gp, before[-1] + gap / 2)
    sd = np.sqrt(np.diag(q.covariance)).max()
    print(f"{gap:6.1f} {1e3 * sd:10.1f} {str(sqrt_frobenius(q.covariance) > gate):>6}")
