"""Longitudinal car-following error dynamics and a fixed-step integrator.

State is kept in error coordinates x = (x1, x2, x3): leader speed error,
spacing error and follower speed error.  The control input u is the force
error of the follower.  All operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidStateError

__all__ = [
    "VehicleParams",
    "ErrorState",
    "SimState",
    "DEFAULT_VEHICLE",
    "error_deriv",
    "decoupled_deriv",
    "rk4_step",
]


@dataclass(frozen=True)
class VehicleParams:
    """Masses (kg) and linear drag coefficients (N*s/m) of both cars."""

    m1: float = 200.0
    m2: float = 200.0
    alpha1: float = 40.0
    alpha2: float = 40.0

    def __post_init__(self):
        for name in ("m1", "m2", "alpha1", "alpha2"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0.0:
                raise ValueError(f"{name} must be finite and > 0, got {v!r}")


#: Desk-scale defaults: plant time constant m/alpha = 5 s.
DEFAULT_VEHICLE = VehicleParams()


@dataclass(frozen=True)
class ErrorState:
    """Error coordinates: x1 = vbar - v1, x2 = sbar - s, x3 = vbar - v2."""

    x1: float
    x2: float
    x3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.x3], dtype=float)

    @classmethod
    def from_array(cls, x) -> "ErrorState":
        x1, x2, x3 = np.asarray(x, dtype=float)
        return cls(float(x1), float(x2), float(x3))


@dataclass(frozen=True)
class SimState:
    """Physical coordinates kept alongside the error state for rendering."""

    s: float
    v1: float
    v2: float
    vbar: float
    sbar: float
    f2bar: float
    t: float = 0.0

    def __post_init__(self):
        if self.s <= 0.0:
            raise ValueError(f"spacing must be > 0, got {self.s!r}")
        if self.sbar <= 0.0:
            raise ValueError(f"desired spacing must be > 0, got {self.sbar!r}")

    def error_state(self) -> ErrorState:
        return ErrorState(self.vbar - self.v1, self.sbar - self.s, self.vbar - self.v2)

    def with_error_state(self, x, t: float) -> "SimState":
        x1, x2, x3 = np.asarray(x, dtype=float)
        return SimState(
            s=self.sbar - float(x2),
            v1=self.vbar - float(x1),
            v2=self.vbar - float(x3),
            vbar=self.vbar,
            sbar=self.sbar,
            f2bar=self.f2bar,
            t=t,
        )


def _as_state(x, n: int) -> np.ndarray:
    if isinstance(x, ErrorState):
        x = x.as_array()
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise ValueError(f"expected state of shape ({n},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidStateError(f"non-finite state {x}")
    return x


def error_deriv(x, u: float, p: VehicleParams = DEFAULT_VEHICLE) -> np.ndarray:
    """Time derivative of the full error state (x1, x2, x3).

    Returns (-alpha1/m1 * x1, x1 - x3, -alpha2/m2 * x3 + u/m2).
    """
    x = _as_state(x, 3)
    if not np.isfinite(u):
        raise InvalidStateError(f"non-finite control {u!r}")
    return np.array(
        [
            -(p.alpha1 / p.m1) * x[0],
            x[0] - x[2],
            -(p.alpha2 / p.m2) * x[2] + u / p.m2,
        ]
    )


def decoupled_deriv(x2: float, x3: float, u: float,
                    p: VehicleParams = DEFAULT_VEHICLE) -> tuple[float, float]:
    """Derivatives of the controllable (x2, x3) subsystem with x1 removed."""
    if not (np.isfinite(x2) and np.isfinite(x3) and np.isfinite(u)):
        raise InvalidStateError(f"non-finite input ({x2!r}, {x3!r}, {u!r})")
    return (-x3, -(p.alpha2 / p.m2) * x3 + u / p.m2)


def rk4_step(x, deriv, dt: float) -> np.ndarray:
    """One classical 4th-order Runge-Kutta step of size dt.

    ``deriv`` maps a state vector to its rate; any control input must be
    bound into it and is therefore held constant over the step (zero-order
    hold).
    """
    if not (np.isfinite(dt) and dt > 0.0):
        raise ValueError(f"dt must be finite and > 0, got {dt!r}")
    x = np.asarray(x, dtype=float)
    k1 = np.asarray(deriv(x), dtype=float)
    k2 = np.asarray(deriv(x + 0.5 * dt * k1), dtype=float)
    k3 = np.asarray(deriv(x + 0.5 * dt * k2), dtype=float)
    k4 = np.asarray(deriv(x + dt * k3), dtype=float)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
