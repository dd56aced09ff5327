"""How each noise source grows with range.

Prints the median sqrt-Frobenius spread (mm) of single prism readings per
noise source at a handful of ranges, using the datasheet budget. Instrument
noise dominates everywhere; time synchronisation is flat because it only
depends on the prism velocity; tilt and atmospheric terms grow linearly.
"""

import numpy as np

from rts_uncertainty.geometry import sqrt_frobenius
from rts_uncertainty.montecarlo import RAW_SOURCES, NoiseSourceMask, measurement_covariance
from rts_uncertainty.noise import AtmosphericConditions, NoiseBudget, RawMeasurement, VelocityStats

budget = NoiseBudget.datasheet()
cond = AtmosphericConditions()
# A robot cruising at 0.5 m/s across the line of sight.
v = VelocityStats(np.array([0.5, 0.0, 0.0]), np.array([0.01, 0.01, 0.01]))

print(f"{'range m':>8}" + "".join(f"{s:>13}" for s in RAW_SOURCES))
for rho in (10.0, 50.0, 100.0, 200.0, 300.0):
    m = RawMeasurement(rho, 1.3, 1.5, 0.0)
    row = []
    for k, source in enumerate(RAW_SOURCES):
        est = measurement_covariance(m, budget, cond, NoiseSourceMask.single(source), v, 20_000, k)
        row.append(1e3 * sqrt_frobenius(est.covariance))
    print(f"{rho:8.0f}" + "".join(f"{x:13.3f}" for x in row))
