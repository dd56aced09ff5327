"""Noise sources of a robotic total station measurement.

The instrument returns a range ``rho`` and two angles. Five perturbations are
modelled: instrument noise on all three readings, the tilt compensator (one draw
shared by both angles), atmospheric conditions (through the first-velocity
correction), time synchronisation (a Cartesian offset driven by prism
velocity), and extrinsic calibration (handled in :mod:`montecarlo`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import ConfigError, DegenerateTimestepError, OrderingError, SingularGeometryError

ARCSEC = math.pi / 648000.0
COT_GUARD = 1e-9


@dataclass(frozen=True)
class RawMeasurement:
    rho: float
    theta: float
    phi: float
    t: float = 0.0
    rts_id: int = 1


@dataclass(frozen=True)
class AtmosphericConditions:
    temperature: float = 12.0
    pressure: float = 1013.25
    humidity: float = 60.0

    def __post_init__(self):
        if not self.pressure > 0:
            raise ConfigError("pressure must be positive")
        if not 0.0 <= self.humidity <= 100.0:
            raise ConfigError("relative humidity must lie in [0, 100]")

    def to_dict(self):
        return {
            "temperature_c": self.temperature,
            "pressure_hpa": self.pressure,
            "humidity_pct": self.humidity,
        }

    @classmethod
    def from_dict(cls, d):
        _reject_unknown(d, {"temperature_c", "pressure_hpa", "humidity_pct"}, "atmosphere")
        return cls(
            temperature=float(d.get("temperature_c", 12.0)),
            pressure=float(d.get("pressure_hpa", 1013.25)),
            humidity=float(d.get("humidity_pct", 60.0)),
        )


@dataclass(frozen=True)
class FirstVelocityConstants:
    """Constant set of the closed-form ppm correction (manufacturer form)."""

    a0: float = 286.34
    pressure_coeff: float = 0.29525
    humidity_coeff: float = 4.126e-4
    expansion: float = 0.003661


DEFAULT_CONSTANTS = FirstVelocityConstants()


def atmospheric_correction_ppm(cond: AtmosphericConditions, constants=DEFAULT_CONSTANTS):
    """First-velocity correction in ppm.

    ``alpha = A - (B P - C h 10^x) / (1 + a T)`` with
    ``x = 7.5 T / (237.3 + T) + 0.7857``. Vectorises over array-valued fields.
    """
    return _ppm(cond.temperature, cond.pressure, cond.humidity, constants)


def _ppm(temperature, pressure, humidity, k=DEFAULT_CONSTANTS):
    temperature = np.asarray(temperature, dtype=float)
    x = 7.5 * temperature / (237.3 + temperature) + 0.7857
    div = 1.0 + k.expansion * temperature
    return k.a0 - (k.pressure_coeff * pressure - k.humidity_coeff * humidity * 10.0**x) / div


# Values of the instrument datasheet, stated at 2 sigma.
_DATASHEET = {
    "sigma_rho_const_m": 0.004,
    "sigma_rho_ppm": 2.0,
    "sigma_phi_rad": 2.0 * ARCSEC,
    "sigma_theta_rad": 2.0 * ARCSEC,
    "sigma_tilt_rad": 0.5 * ARCSEC,
    "temp_halfwidth_c": 1.0,
    "pressure_halfwidth_hpa": 10.0,
    "humidity_halfwidth_pct": 2.0,
    "mu_ts_s": 0.0012,
    "sigma_ts_s": 0.0008,
    "two_sigma_inputs": True,
    "one_sided_atmosphere": False,
}

_BUDGET_KEYS = {
    "sigma_rho_const_m": "sigma_rho_const",
    "sigma_rho_ppm": "sigma_rho_ppm",
    "sigma_phi_rad": "sigma_phi",
    "sigma_theta_rad": "sigma_theta",
    "sigma_tilt_rad": "sigma_tilt",
    "temp_halfwidth_c": "temp_halfwidth",
    "pressure_halfwidth_hpa": "pressure_halfwidth",
    "humidity_halfwidth_pct": "humidity_halfwidth",
    "mu_ts_s": "mu_ts",
    "sigma_ts_s": "sigma_ts",
}

# Fields rescaled when a budget is declared at 2 sigma. Atmospheric bounds are
# uniform ranges and the time-sync statistics are empirical, so they stay.
_TWO_SIGMA_FIELDS = ("sigma_rho_const", "sigma_rho_ppm", "sigma_phi", "sigma_theta", "sigma_tilt")


@dataclass(frozen=True)
class NoiseBudget:
    """One-sigma noise parameters (SI units, ppm for the proportional range term)."""

    sigma_rho_const: float = 0.0
    sigma_rho_ppm: float = 0.0
    sigma_phi: float = 0.0
    sigma_theta: float = 0.0
    sigma_tilt: float = 0.0
    temp_halfwidth: float = 0.0
    pressure_halfwidth: float = 0.0
    humidity_halfwidth: float = 0.0
    mu_ts: float = 0.0
    sigma_ts: float = 0.0
    two_sigma_inputs: bool = False
    one_sided_atmosphere: bool = False

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                continue
            if not (np.isfinite(v) and v >= 0):
                raise ConfigError(f"budget field {f.name} must be finite and non-negative")

    @classmethod
    def zero(cls):
        return cls()

    @classmethod
    def datasheet(cls):
        """Datasheet budget of the reference instrument, converted to 1 sigma."""
        return cls.from_dict(_DATASHEET)

    @classmethod
    def from_dict(cls, d):
        """Load a JSON ``budget`` section; 2-sigma inputs are halved here."""
        allowed = set(_BUDGET_KEYS) | {"two_sigma_inputs", "one_sided_atmosphere"}
        _reject_unknown(d, allowed, "budget")
        kwargs = {attr: float(d.get(key, 0.0)) for key, attr in _BUDGET_KEYS.items()}
        two_sigma = bool(d.get("two_sigma_inputs", False))
        if two_sigma:
            for name in _TWO_SIGMA_FIELDS:
                kwargs[name] *= 0.5
        return cls(
            **kwargs,
            two_sigma_inputs=two_sigma,
            one_sided_atmosphere=bool(d.get("one_sided_atmosphere", False)),
        )

    def to_dict(self):
        """Serialise as stored 1-sigma values (``two_sigma_inputs`` is cleared)."""
        out = {key: getattr(self, attr) for key, attr in _BUDGET_KEYS.items()}
        out["two_sigma_inputs"] = False
        out["one_sided_atmosphere"] = self.one_sided_atmosphere
        return out

    def sigma_rho(self, rho):
        return self.sigma_rho_const + self.sigma_rho_ppm * 1e-6 * np.asarray(rho, dtype=float)

    def only(self, source: str) -> "NoiseBudget":
        """Copy keeping the parameters of a single source."""
        keep = {
            "instrument": ("sigma_rho_const", "sigma_rho_ppm", "sigma_phi", "sigma_theta"),
            "tilt": ("sigma_tilt",),
            "atmospheric": ("temp_halfwidth", "pressure_halfwidth", "humidity_halfwidth"),
            "time_sync": ("mu_ts", "sigma_ts"),
        }[source]
        zeroed = {f: 0.0 for f in _BUDGET_KEYS.values() if f not in keep}
        return replace(self, **zeroed)


def _reject_unknown(d, allowed, section):
    if not isinstance(d, dict):
        raise ConfigError(f"{section}: expected an object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")


@dataclass(frozen=True)
class VelocityStats:
    mu_v: np.ndarray
    sigma_v: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu_v, dtype=float).reshape(3)
        sd = np.asarray(self.sigma_v, dtype=float).reshape(3)
        if np.any(sd < 0):
            raise ConfigError("velocity standard deviations must be non-negative")
        object.__setattr__(self, "mu_v", mu)
        object.__setattr__(self, "sigma_v", sd)

    @classmethod
    def zero(cls):
        return cls(np.zeros(3), np.zeros(3))


def sample_atmosphere_offsets(budget: NoiseBudget, rng, n):
    """Uniform offsets ``(dT, dP, dH)`` within the budget bounds, shape ``(n,)`` each."""
    lo = 0.0 if budget.one_sided_atmosphere else -1.0
    u = rng.uniform(lo, 1.0, size=(3, n))
    return (
        u[0] * budget.temp_halfwidth,
        u[1] * budget.pressure_halfwidth,
        u[2] * budget.humidity_halfwidth,
    )


def _cot_checked(theta_hat):
    s = np.sin(theta_hat)
    if np.any(np.abs(s) < COT_GUARD):
        raise SingularGeometryError("angle too close to 0 or pi: cot() is singular")
    return np.cos(theta_hat) / s


def perturb_arrays(
    rho,
    theta,
    phi,
    budget: NoiseBudget,
    cond: AtmosphericConditions,
    rng,
    n,
    instrument=True,
    tilt=True,
    atmospheric=True,
    atmosphere_offsets=None,
):
    """Draw ``n`` perturbed copies of one raw reading.

    Returns arrays ``(rho_hat, theta_hat, phi_hat)``. The nominal correction
    factor is always applied; ``atmospheric`` only controls whether the
    conditions are jittered. ``atmosphere_offsets`` lets a caller share one set
    of offsets between simultaneous readings.
    """
    z = rng.standard_normal(size=(4, n))
    e_rho = z[0] * float(budget.sigma_rho(rho)) if instrument else np.zeros(n)
    e_theta = z[1] * budget.sigma_theta if instrument else np.zeros(n)
    e_phi = z[2] * budget.sigma_phi if instrument else np.zeros(n)
    e_tilt = z[3] * budget.sigma_tilt if tilt else np.zeros(n)

    if atmospheric:
        if atmosphere_offsets is None:
            atmosphere_offsets = sample_atmosphere_offsets(budget, rng, n)
        d_t, d_p, d_h = atmosphere_offsets
        alpha = _ppm(cond.temperature + d_t, cond.pressure + d_p, cond.humidity + d_h)
    else:
        alpha = np.full(n, float(atmospheric_correction_ppm(cond)))

    rho_hat = (rho + e_rho) * (1.0 + alpha * 1e-6)
    theta_hat = theta + e_theta + e_tilt
    if tilt and budget.sigma_tilt > 0:
        phi_hat = phi + e_phi + e_tilt * _cot_checked(theta_hat)
    else:
        phi_hat = phi + e_phi
    return rho_hat, theta_hat, phi_hat


def perturb_raw(m: RawMeasurement, budget: NoiseBudget, cond: AtmosphericConditions, rng):
    """One noisy copy of ``m`` with all raw-measurement sources active."""
    r, th, ph = perturb_arrays(m.rho, m.theta, m.phi, budget, cond, rng, 1)
    return replace(m, rho=float(r[0]), theta=float(th[0]), phi=float(ph[0]))


def corrected_range(rho, cond: AtmosphericConditions):
    return np.asarray(rho, dtype=float) * (1.0 + atmospheric_correction_ppm(cond) * 1e-6)


def estimate_velocity(points, times):
    """Forward-difference velocities; the last point reuses the previous value."""
    p = np.asarray(points, dtype=float)
    t = np.asarray(times, dtype=float)
    if len(p) < 2:
        raise DegenerateTimestepError("need at least two points to difference")
    dt = np.diff(t)
    if np.any(dt == 0):
        raise DegenerateTimestepError("duplicate timestamps")
    if np.any(dt < 0):
        raise OrderingError("timestamps must be strictly increasing")
    v = np.diff(p, axis=0) / dt[:, None]
    return np.vstack([v, v[-1:]])


def time_sync_noise(budget: NoiseBudget, v: VelocityStats):
    """Mean and per-axis std of the position offset caused by clock error."""
    mu_t = budget.mu_ts * v.mu_v
    var_t = budget.mu_ts**2 * v.sigma_v**2 + budget.sigma_ts**2 * v.mu_v**2
    return mu_t, np.sqrt(var_t)
