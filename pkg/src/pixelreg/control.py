"""Pixel-space proportional controllers and static-output-feedback synthesis.

The controllers act directly on images: a scalar gain replicated over all
pixels, applied either to the raw reference error (plain mode) or to the
background-referenced absolute deviations (generalized mode, invariant to
object/background intensity polarity).

SOF synthesis solves the kernel-constrained Riccati pair for the 3-state
car-following plant with scalar output c*x2.  The value-matrix structure
makes the kernel equation hold identically; the remaining Riccati entry is
linear in p11, covered by a closed form validated through its residual and
a one-dimensional residual-minimizing fallback.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import VehicleParams
from .errors import SynthesisInconsistencyError
from .scene import SceneParams, background_image, render

__all__ = [
    "ControllerConfig",
    "SofSolution",
    "PolicyReduction",
    "pixel_control",
    "generalized_pixel_control",
    "ideal_control",
    "sof_synthesize",
    "sof_policy",
]

CONTROLLER_MODES = ("plain", "generalized")


@dataclass(frozen=True)
class ControllerConfig:
    """Scalar pixel gain, loop mode and optional force clamp."""

    gain: float = 1.0
    mode: str = "plain"
    s0: float = 200.0
    clamp: float | None = None

    def __post_init__(self):
        if not np.isfinite(self.gain):
            raise ValueError(f"gain must be finite, got {self.gain!r}")
        if self.mode not in CONTROLLER_MODES:
            raise ValueError(f"unknown controller mode {self.mode!r}")
        if self.mode == "generalized" and self.s0 < 200.0:
            raise ValueError("generalized mode needs s0 >= 200")
        if self.clamp is not None and self.clamp <= 0.0:
            raise ValueError("clamp must be positive when set")


def _apply_clamp(u: float, cfg: ControllerConfig) -> float:
    if cfg.clamp is not None:
        return float(np.clip(u, -cfg.clamp, cfg.clamp))
    return float(u)


def _check_shapes(*imgs: np.ndarray) -> None:
    shapes = {np.asarray(i).shape for i in imgs}
    if len(shapes) != 1:
        raise ValueError(f"image dimensions differ: {sorted(shapes)}")


def pixel_control(y: np.ndarray, ybar_hat: np.ndarray,
                  cfg: ControllerConfig) -> float:
    """u = gain * sum over all pixels and channels of (ybar_hat - y)."""
    _check_shapes(y, ybar_hat)
    u = cfg.gain * float(np.sum(np.asarray(ybar_hat) - np.asarray(y)))
    return _apply_clamp(u, cfg)


def generalized_pixel_control(y: np.ndarray, ybar_hat: np.ndarray,
                              y0: np.ndarray, cfg: ControllerConfig) -> float:
    """u = gain * sum of (-|ybar_hat - y0| + |y - y0|).

    Referencing both images to the background view y0 makes the sign of u
    independent of whether the object is brighter or darker than the
    background.
    """
    _check_shapes(y, ybar_hat, y0)
    y = np.asarray(y, dtype=float)
    ybar_hat = np.asarray(ybar_hat, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    u = cfg.gain * float(np.sum(-np.abs(ybar_hat - y0) + np.abs(y - y0)))
    return _apply_clamp(u, cfg)


def ideal_control(x2: float, s_bar: float, scene: SceneParams,
                  cfg: ControllerConfig) -> float:
    """Controller output with the ground-truth reference in place of the
    synthesized one: u*(x2) for the Lyapunov construction."""
    y = render(s_bar - x2, scene)
    ybar = render(s_bar, scene)
    if cfg.mode == "generalized":
        return generalized_pixel_control(y, ybar, background_image(scene), cfg)
    return pixel_control(y, ybar, cfg)


@dataclass(frozen=True)
class SofSolution:
    """Kernel-constrained Riccati solution for the car-following plant."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    P: np.ndarray
    G: np.ndarray
    N: np.ndarray
    riccati_residual: float
    kernel_residual: float
    reduced_gain: float
    c: float
    params: VehicleParams
    p11_fallback: bool


@dataclass(frozen=True)
class PolicyReduction:
    """State-feedback coefficients of u(x) = G x - B^T P x and the reduced
    static output feedback they collapse to."""

    coeff_x1: float
    coeff_x2: float
    coeff_x3: float
    reduced_gain: float


def _riccati_residual(A, B, C, P, G) -> float:
    R = A.T @ P + P @ A - P @ B @ B.T @ P + C.T @ C + G.T @ G
    return float(np.linalg.norm(R))


def _assemble(p: VehicleParams, c: float, p11: float):
    """Build (P, G) from p11 with the kernel structure and closed forms."""
    r1 = p.alpha1 / p.m1
    r2 = p.alpha2 / p.m2
    ca = abs(c)
    p22 = ca * p.alpha2 + c * c * p.m2 / p.alpha2
    p33 = ca * p.m2 * p.m2 / p.alpha2
    p12 = r1 * p11
    p23 = -r2 * p33
    p13 = -(r1 * p11 + r2 * p33) / (r1 + r2)
    P = np.array([[p11, p12, p13], [p12, p22, p23], [p13, p23, p33]])
    g1 = -(p.alpha1 * p.m2 * p11 + p.alpha2 * p.m1 * p33) / (
        p.alpha1 * p.m2**2 + p.alpha2 * p.m1 * p.m2
    )
    G = np.array([[g1, 0.0, ca * p.m2 / p.alpha2]])
    return P, G


def _p11_printed(p: VehicleParams, c: float) -> float:
    # closed form as printed, repeated m1/alpha1 term included; validated
    # through the Riccati residual below and replaced numerically if it
    # does not hold for the given parameter ratios
    ca = abs(c)
    ratio1 = p.m1 / p.alpha1
    ratio2 = p.m2 / p.alpha2
    num = ca * p.alpha2 + ca**2 * ratio2 - ca**2 * (ratio1 * ratio2) / (ratio1 + ratio1)
    den = ca * p.alpha1 / (p.alpha1 * p.m2 + p.alpha2 * p.m1) + (p.alpha1 / p.m1) ** 2
    return num / den


def _p11_minimize(p: VehicleParams, c: float, A, B, C, guess: float) -> float:
    """1D residual minimization over p11.

    The residual norm squared is an exact quadratic in p11 (a single
    Riccati entry depends on it, linearly), so the vertex of the parabola
    through three wide-spread samples is the minimizer.
    """

    def obj(p11: float) -> float:
        P, G = _assemble(p, c, p11)
        return _riccati_residual(A, B, C, P, G) ** 2

    center = float(guess)
    span = max(1.0, abs(center))
    xs = np.array([center - span, center, center + span])
    coeffs = np.polyfit(xs, [obj(x) for x in xs], 2)
    if coeffs[0] > 0.0:
        center = float(-coeffs[1] / (2.0 * coeffs[0]))
    return center


def sof_synthesize(p: VehicleParams, c: float,
                   residual_tol: float = 1e-6) -> SofSolution:
    """Solve the kernel-constrained Riccati pair for output gain c.

    Returns the value matrix P, the auxiliary row G, the kernel projector N
    and both residual norms.  The printed p11 closed form is accepted only
    if it leaves a Riccati residual below ``residual_tol``; otherwise p11
    is recomputed by one-dimensional residual minimization.
    """
    if c == 0.0 or not np.isfinite(c):
        raise ValueError("output gain c must be nonzero and finite")

    A = np.array(
        [
            [-p.alpha1 / p.m1, 0.0, 0.0],
            [1.0, 0.0, -1.0],
            [0.0, 0.0, -p.alpha2 / p.m2],
        ]
    )
    B = np.array([[0.0], [0.0], [1.0 / p.m2]])
    C = np.array([[0.0, float(c), 0.0]])
    N = np.eye(3) - C.T @ np.linalg.inv(C @ C.T) @ C

    p11 = _p11_printed(p, c)
    P, G = _assemble(p, c, p11)
    fallback = False
    if _riccati_residual(A, B, C, P, G) > residual_tol:
        p11 = _p11_minimize(p, c, A, B, C, p11)
        P, G = _assemble(p, c, p11)
        fallback = True

    M = A.T @ P + P @ A
    return SofSolution(
        A=A,
        B=B,
        C=C,
        P=P,
        G=G,
        N=N,
        riccati_residual=_riccati_residual(A, B, C, P, G),
        kernel_residual=float(np.linalg.norm(N @ M @ N)),
        reduced_gain=abs(c) / c,
        c=float(c),
        params=p,
        p11_fallback=fallback,
    )


def sof_policy(sol: SofSolution, rel_tol: float = 1e-8) -> PolicyReduction:
    """Reduce u(x) = G x - B^T P x to static output feedback.

    The x1 and x3 coefficients must vanish, leaving u = |c| * x2, i.e.
    ``reduced_gain`` times the measured output c * x2.
    """
    scale = max(1.0, abs(sol.c))
    if sol.riccati_residual > 1e-4 * scale**2 or sol.kernel_residual > 1e-6 * scale:
        raise SynthesisInconsistencyError(
            f"residuals too large for reduction: riccati "
            f"{sol.riccati_residual:.3g}, kernel {sol.kernel_residual:.3g}"
        )
    coeffs = (sol.G - sol.B.T @ sol.P).ravel()
    ref = max(abs(coeffs[1]), 1e-30)
    if abs(coeffs[0]) > rel_tol * ref or abs(coeffs[2]) > rel_tol * ref:
        raise SynthesisInconsistencyError(
            f"state coefficients do not vanish: {coeffs}"
        )
    return PolicyReduction(
        coeff_x1=float(coeffs[0]),
        coeff_x2=float(coeffs[1]),
        coeff_x3=float(coeffs[2]),
        reduced_gain=float(coeffs[1] / sol.c),
    )
