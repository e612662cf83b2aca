"""Numerical verification of the structural assumptions, constants of the
error model, Lyapunov function evaluation and ultimate-boundedness
certification.

Everything here works on the procedural renderer, so the checks are sharp:
background invariance and the null space hold by construction, direction
and monotonicity are swept on grids, and the locally-quadratic constant c
is recovered by least squares together with the range over which the
quadratic model explains the data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicSpline

from .control import (
    ControllerConfig,
    generalized_pixel_control,
    ideal_control,
    pixel_control,
)
from .dynamics import VehicleParams, decoupled_deriv
from .errors import AssumptionViolationError, SpacingRangeError
from .scene import BACKGROUND_STYLES, BackgroundParams, SceneParams, render
from .viewsynth import background_view, synthesize

__all__ = [
    "ErrorSignal",
    "CheckResult",
    "AssumptionReport",
    "QuadraticFit",
    "Eps1Report",
    "Eps2Report",
    "LyapunovWeights",
    "UubCertificate",
    "error_signal",
    "pixel_output_surrogate",
    "swap_polarity",
    "background_family",
    "check_assumptions",
    "fit_c",
    "estimate_eps1",
    "estimate_eps2",
    "lyapunov_weights",
    "ustar_table",
    "lyapunov_V",
    "lyapunov_Vdot",
    "uub_certify",
]


@dataclass(frozen=True)
class ErrorSignal:
    """Flattened pixel error h(x2) with its norm and generalized signed sum."""

    h: np.ndarray
    x2: float
    s_bar: float
    norm_sq: float
    signed_sum: float


def error_signal(x2: float, s_bar: float, scene: SceneParams) -> ErrorSignal:
    """Pixel error between the reference view and the view at spacing
    s_bar - x2, plus the polarity-invariant signed sum of the generalized
    error computed against the synthesized background view."""
    ybar = render(s_bar, scene)
    y = render(s_bar - x2, scene)
    h = (ybar - y).ravel()
    y0 = background_view(y, scene)
    signed = float(np.sum(-np.abs(ybar - y0) + np.abs(y - y0)))
    return ErrorSignal(
        h=h,
        x2=float(x2),
        s_bar=float(s_bar),
        norm_sq=float(h @ h),
        signed_sum=signed,
    )


def pixel_output_surrogate(x2: float, s_bar: float, scene: SceneParams) -> float:
    """Signed scalar surrogate of the pixel error: sign(signed sum) * ||h||.

    Within the locally quadratic range this tracks c * x2, which is the
    scalar output the SOF synthesis assumes.
    """
    sig = error_signal(x2, s_bar, scene)
    return float(np.sign(sig.signed_sum) * math.sqrt(sig.norm_sq))


def swap_polarity(scene: SceneParams) -> SceneParams:
    """Exchange object and background colors (bright object on dark ground
    instead of the reverse): the polarity swap of the generalized error."""
    bg = scene.background
    return replace(
        scene,
        object_color=bg.base_color,
        background=BackgroundParams(
            bg.style, scene.object_color, bg.accent_color, bg.seed
        ),
    )


def background_family(scene: SceneParams) -> list[SceneParams]:
    """Background variants sharing the corridor color: every style with two
    accent palettes.  This is the family over which invariance is checked."""
    bg = scene.background
    alt_accent = (0.30, 0.42, 0.58)
    variants = {}
    for style in BACKGROUND_STYLES:
        for accent, seed in ((bg.accent_color, bg.seed), (alt_accent, bg.seed + 3)):
            v = scene.with_background(
                BackgroundParams(style, bg.base_color, accent, seed)
            )
            variants[v] = None
    return list(variants)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    counterexamples: tuple = ()


@dataclass(frozen=True)
class AssumptionReport:
    background_invariance: CheckResult
    null_space: CheckResult
    direction: CheckResult
    monotonic: CheckResult

    def checks(self) -> tuple[CheckResult, ...]:
        return (
            self.background_invariance,
            self.null_space,
            self.direction,
            self.monotonic,
        )

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks())


def check_assumptions(s_bar: float, scene: SceneParams, grid,
                      variants: list[SceneParams] | None = None,
                      tol: float = 1e-9) -> AssumptionReport:
    """Verdicts with counterexamples for the four structural checks:
    background invariance, null space, error direction and monotonicity.

    Monotonicity is checked non-strictly (rasterization can plateau).
    """
    grid = np.asarray(sorted(float(g) for g in grid))
    if variants is None:
        variants = background_family(scene)

    # background invariance: H(x2) identical across the variant family
    bad_bg = []
    ybar = {v: render(s_bar, v) for v in variants}
    ybar_base = render(s_bar, scene)
    for x2 in grid:
        h_base = ybar_base - render(s_bar - x2, scene)
        for v in variants:
            gap = float(np.max(np.abs((ybar[v] - render(s_bar - x2, v)) - h_base)))
            if gap > tol:
                bad_bg.append((float(x2), v.background.style, gap))
    bg_check = CheckResult(
        "background_invariance",
        not bad_bg,
        f"{len(variants)} variants, {grid.size} grid points",
        tuple(bad_bg[:5]),
    )

    signals = {float(x2): error_signal(x2, s_bar, scene) for x2 in grid}

    bad_null = []
    for x2, sig in signals.items():
        ok = sig.norm_sq <= tol if x2 == 0.0 else sig.norm_sq > tol
        if not ok:
            bad_null.append((x2, sig.norm_sq))
    null_check = CheckResult(
        "null_space", not bad_null, "||h|| = 0 iff x2 = 0", tuple(bad_null[:5])
    )

    bad_dir = [
        (x2, sig.signed_sum)
        for x2, sig in signals.items()
        if x2 != 0.0 and np.sign(sig.signed_sum) != np.sign(x2)
    ]
    dir_check = CheckResult(
        "direction", not bad_dir, "sign of generalized sum", tuple(bad_dir[:5])
    )

    bad_mono = []

    def scan(values):
        # values ordered by increasing |x2|, one sign at a time
        prev = -math.inf
        for x2 in values:
            n = signals[float(x2)].norm_sq
            if n < prev - tol:
                bad_mono.append((float(x2), n, prev))
            prev = max(prev, n)

    scan(np.sort(grid[grid >= 0.0]))
    scan(-np.sort(np.abs(grid[grid <= 0.0])))
    mono_check = CheckResult(
        "monotonic", not bad_mono, "non-strict in |x2|", tuple(bad_mono[:5])
    )

    return AssumptionReport(bg_check, null_check, dir_check, mono_check)


@dataclass(frozen=True)
class QuadraticFit:
    """Least-squares fit of ||h||^2 against x2^2."""

    c: float
    slope: float
    r_squared: float
    validity_range: float


def _fit_slope(xs: np.ndarray, ys: np.ndarray) -> tuple[float, float]:
    z = xs**2
    denom = float(z @ z)
    slope = float(z @ ys) / denom if denom > 0.0 else 0.0
    ss_res = float(np.sum((ys - slope * z) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 0.0
    return slope, r2


def fit_c(s_bar: float, scene: SceneParams, x2_max: float,
          n_samples: int = 33, r2_target: float = 0.95) -> QuadraticFit:
    """Locally-quadratic constant: fit ||h||^2 ~ c^2 x2^2 over symmetric
    samples in [-x2_max, x2_max].

    Also sweeps sub-ranges to report the largest half-width keeping the fit
    quality at or above ``r2_target``.  Raises when the slope is not
    positive or the fit explains less than half the variance.
    """
    if x2_max <= 0.0:
        raise ValueError("x2_max must be > 0")

    def samples(half: float) -> tuple[np.ndarray, np.ndarray]:
        xs = np.linspace(-half, half, n_samples)
        ys = np.array(
            [error_signal(x, s_bar, scene).norm_sq for x in xs]
        )
        return xs, ys

    xs, ys = samples(x2_max)
    slope, r2 = _fit_slope(xs, ys)
    if slope <= 0.0 or r2 < 0.5:
        raise AssumptionViolationError(
            f"quadratic model rejected: slope {slope:.3g}, R^2 {r2:.3f}"
        )

    validity = 0.0
    for half in np.linspace(x2_max / 10.0, x2_max, 10):
        _, r2_sub = _fit_slope(*samples(float(half)))
        if r2_sub >= r2_target:
            validity = float(half)
    return QuadraticFit(
        c=math.sqrt(slope), slope=slope, r_squared=r2, validity_range=validity
    )


@dataclass(frozen=True)
class Eps1Report:
    """View-synthesis error bound over a spacing grid (Assumption 6)."""

    value: float
    grid: tuple
    samples: tuple
    ref_norm: float

    @property
    def relative(self) -> float:
        return self.value / self.ref_norm


def estimate_eps1(s_bar: float, scene: SceneParams, grid) -> Eps1Report:
    """Max over the grid of || vec(render(s_bar) - synthesize(s_bar,
    render(s))) ||_2."""
    ybar = render(s_bar, scene)
    samples = []
    for s in grid:
        rep = synthesize(s_bar, render(float(s), scene), scene, reference=ybar)
        samples.append(rep.eps1_sample)
    return Eps1Report(
        value=float(max(samples)),
        grid=tuple(float(s) for s in grid),
        samples=tuple(samples),
        ref_norm=float(np.linalg.norm(ybar.ravel())),
    )


@dataclass(frozen=True)
class Eps2Report:
    """Bound on the controller mismatch |u - u*(x2)| over an x2 grid."""

    value: float
    grid: tuple
    samples: tuple


def estimate_eps2(s_bar: float, scene: SceneParams, cfg: ControllerConfig,
                  grid, synthesizer=None) -> Eps2Report:
    """Max over the grid of the gap between the pixel-loop control (using
    the view synthesizer) and the ideal control using the true reference.

    ``synthesizer(s_bar, y, scene) -> image`` can replace the real one, e.g.
    with the ground-truth renderer to check the zero-mismatch oracle.
    """
    if synthesizer is None:
        def synthesizer(sb, y, sc):
            return synthesize(sb, y, sc).output
    samples = []
    for x2 in grid:
        y = render(s_bar - float(x2), scene)
        ybar_hat = synthesizer(s_bar, y, scene)
        if cfg.mode == "generalized":
            y0 = background_view(y, scene, cfg.s0)
            u = generalized_pixel_control(y, ybar_hat, y0, cfg)
        else:
            u = pixel_control(y, ybar_hat, cfg)
        samples.append(abs(u - ideal_control(float(x2), s_bar, scene, cfg)))
    return Eps2Report(
        value=float(max(samples)),
        grid=tuple(float(x) for x in grid),
        samples=tuple(samples),
    )


@dataclass(frozen=True)
class LyapunovWeights:
    """Weights of V = w1 x2^2 + w2 x2 x3 + w3 x3^2 + w4 int_0^x2 u*."""

    w1: float
    w2: float
    w3: float
    w4: float
    margin: float


def lyapunov_weights(p: VehicleParams, w1: float = 1.0,
                     margin: float = 1.25) -> LyapunovWeights:
    """Weight choices that cancel the x2 x3 cross term and make the leading
    x3^2 coefficient of V-dot negative:

        w2 = -2 (m2/alpha2) w1,   w4 = 2 w3 / m2,
        w3 = margin * (m2/alpha2)^2 * w1    with margin > 1.
    """
    if w1 <= 0.0:
        raise ValueError("w1 must be > 0")
    if margin <= 1.0:
        raise ValueError("margin must be > 1")
    ratio = p.m2 / p.alpha2
    w2 = -2.0 * ratio * w1
    w3 = margin * ratio**2 * w1
    w4 = 2.0 * w3 / p.m2
    return LyapunovWeights(w1=w1, w2=w2, w3=w3, w4=w4, margin=margin)


class UStarTable:
    """Cached u*(z) samples on a uniform grid with a composite-Simpson
    cumulative integral, both interpolated by cubic splines."""

    def __init__(self, s_bar: float, scene: SceneParams, cfg: ControllerConfig,
                 step: float = 0.05):
        z_lo = s_bar - scene.s_max
        z_hi = s_bar - scene.s_min
        ks = np.arange(math.ceil(z_lo / step), math.floor(z_hi / step) + 1)
        zs = ks * step
        us = np.array([ideal_control(float(z), s_bar, scene, cfg) for z in zs])
        F = cumulative_simpson(us, x=zs, initial=0.0)
        F -= float(np.interp(0.0, zs, F))  # anchor the integral at x2 = 0
        self.z_lo = float(zs[0])
        self.z_hi = float(zs[-1])
        self._u = CubicSpline(zs, us)
        self._F = CubicSpline(zs, F)

    def _check(self, z: float) -> float:
        z = float(z)
        if not (self.z_lo <= z <= self.z_hi):
            raise SpacingRangeError(
                f"x2 = {z!r} outside the tabulated range "
                f"[{self.z_lo}, {self.z_hi}]"
            )
        return z

    def ustar(self, z: float) -> float:
        return float(self._u(self._check(z)))

    def integral(self, x2: float) -> float:
        return float(self._F(self._check(x2)))


@lru_cache(maxsize=4)
def ustar_table(s_bar: float, scene: SceneParams,
                cfg: ControllerConfig, step: float = 0.05) -> UStarTable:
    return UStarTable(s_bar, scene, cfg, step)


def lyapunov_V(x2: float, x3: float, w: LyapunovWeights, s_bar: float,
               scene: SceneParams, cfg: ControllerConfig) -> float:
    """V(x2, x3) with the integral term from the cached u* quadrature."""
    table = ustar_table(float(s_bar), scene, cfg)
    return (
        w.w1 * x2 * x2
        + w.w2 * x2 * x3
        + w.w3 * x3 * x3
        + w.w4 * table.integral(x2)
    )


def lyapunov_Vdot(x2: float, x3: float, u: float, w: LyapunovWeights,
                  p: VehicleParams, s_bar: float, scene: SceneParams,
                  cfg: ControllerConfig) -> float:
    """Time derivative of V along the decoupled dynamics under control u,
    evaluated in expanded form."""
    table = ustar_table(float(s_bar), scene, cfg)
    d2, d3 = decoupled_deriv(x2, x3, u, p)
    return (
        2.0 * w.w1 * x2 * d2
        + w.w2 * d2 * x3
        + w.w2 * x2 * d3
        + 2.0 * w.w3 * x3 * d3
        + w.w4 * d2 * table.ustar(x2)
    )


@dataclass(frozen=True)
class UubCertificate:
    """Grid certificate of uniform ultimate boundedness.

    Outside the exclusion ball of radius r the sampled V-dot is
    nonpositive; every trajectory enters the sublevel set {V <= max V on
    the r-circle} by time T and keeps its state norm at or below epsilon
    afterwards.
    """

    r: float
    epsilon: float
    T: float
    delta_max: float
    eps1: float
    eps2: float
    ok: bool
    message: str = ""
    failures: tuple = ()


def uub_certify(trajectories, w: LyapunovWeights, eps1: float, eps2: float,
                v_fn, r_step_frac: float = 0.05, angles: int = 32,
                r_cap_frac: float = 1.0) -> UubCertificate:
    """Certify UUB from simulated trajectories.

    ``trajectories`` is a sequence of records with arrays ``t``, ``x2``,
    ``x3``, ``V`` and ``Vdot``; ``v_fn(x2, x3)`` evaluates the Lyapunov
    function (for the boundary of the exclusion ball).  Failure is reported
    in the certificate, never silently.
    """
    t = [np.asarray(tr.t, dtype=float) for tr in trajectories]
    x2 = [np.asarray(tr.x2, dtype=float) for tr in trajectories]
    x3 = [np.asarray(tr.x3, dtype=float) for tr in trajectories]
    V = [np.asarray(tr.V, dtype=float) for tr in trajectories]
    Vd = [np.asarray(tr.Vdot, dtype=float) for tr in trajectories]
    norms = [np.hypot(a, b) for a, b in zip(x2, x3)]

    all_norm = np.concatenate(norms)
    all_vdot = np.concatenate(Vd)
    vdot_tol = 1e-9 * max(1.0, float(np.max(np.abs(all_vdot), initial=0.0)))
    scale = float(np.max(all_norm, initial=0.0))
    delta_max = max(float(n[0]) for n in norms)

    fail = UubCertificate(
        r=math.nan, epsilon=math.nan, T=math.nan, delta_max=delta_max,
        eps1=eps1, eps2=eps2, ok=False,
    )
    if scale == 0.0:
        candidates = np.array([0.0])
    else:
        step = r_step_frac * scale
        candidates = np.arange(0.0, r_cap_frac * scale + step, step)

    r = None
    for cand in candidates:
        outside = all_norm > cand
        if not np.any(all_vdot[outside] > vdot_tol):
            r = float(cand)
            break
    if r is None:
        worst = int(np.argmax(all_vdot))
        return replace(
            fail,
            message="no exclusion radius below the cap: V-dot positive at "
                    f"norm {all_norm[worst]:.4g}",
            failures=((float(all_norm[worst]), float(all_vdot[worst])),),
        )

    theta = np.linspace(0.0, 2.0 * math.pi, angles, endpoint=False)
    v_r = max(v_fn(r * math.cos(a), r * math.sin(a)) for a in theta) if r > 0 else v_fn(0.0, 0.0)
    level = v_r * (1.0 + 1e-9) + 1e-12

    epsilon = 0.0
    T = 0.0
    for tt, vv, nn in zip(t, V, norms):
        above = np.nonzero(vv > level)[0]
        entry = int(above[-1]) + 1 if above.size else 0
        if entry >= vv.size:
            return replace(
                fail,
                message=f"a trajectory never enters the V <= {v_r:.4g} "
                        "sublevel set",
                failures=((float(nn[-1]), float(vv[-1])),),
            )
        epsilon = max(epsilon, float(np.max(nn[entry:])))
        T = max(T, float(tt[entry] - tt[0]))

    return UubCertificate(
        r=r, epsilon=epsilon, T=T, delta_max=delta_max,
        eps1=float(eps1), eps2=float(eps2), ok=True,
        message=f"certified on {len(trajectories)} trajectories",
    )
