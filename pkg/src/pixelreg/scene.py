"""Procedural pinhole camera: a flat-colored lead-vehicle rectangle over a
static background, with Gaussian edge anti-aliasing.

Images are ``(H, W, 3)`` float64 arrays with values in [0, 1].  The
flattening convention for treating an image as a measurement vector is
C-order ``ravel()``: row-major with the channel index varying fastest.

The lead object is drawn by alpha compositing a separable, analytically
blurred rectangle over the background:

    image = alpha * object_color + (1 - alpha) * background

Backgrounds are constant within each row, and every background style shares
one common color on the "corridor" band of rows that the object (plus its
blur halo) can reach at spacings >= ``corridor_spacing``.  Styles differ
only in the border bands above and below the corridor.  Consequently the
pixel error between two renders of the same scene at different spacings is
exactly independent of the background style on the corridor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.special import erf

from .errors import SpacingRangeError

__all__ = [
    "BackgroundParams",
    "SceneParams",
    "DEFAULT_SCENE",
    "BACKGROUND_STYLES",
    "object_footprint",
    "coverage_profiles",
    "render",
    "background_image",
    "corridor_rows",
    "write_ppm",
    "ppm_bytes",
]

BACKGROUND_STYLES = ("solid", "gradient", "stripes")


@dataclass(frozen=True)
class BackgroundParams:
    """Static background descriptor (the Omega of the measurement model).

    ``base_color`` fills the corridor band on every style; ``accent_color``
    and ``seed`` shape the border-band texture.
    """

    style: str = "solid"
    base_color: tuple[float, float, float] = (0.82, 0.84, 0.87)
    accent_color: tuple[float, float, float] = (0.55, 0.62, 0.70)
    seed: int = 0

    def __post_init__(self):
        if self.style not in BACKGROUND_STYLES:
            raise ValueError(f"unknown background style {self.style!r}")
        for c in (*self.base_color, *self.accent_color):
            if not (0.0 <= c <= 1.0):
                raise ValueError("background colors must lie in [0, 1]")


@dataclass(frozen=True)
class SceneParams:
    """Scene geometry, lead-object appearance and camera intrinsics."""

    object_color: tuple[float, float, float] = (0.10, 0.08, 0.12)
    object_width: float = 2.0
    object_height: float = 1.2
    focal: float = 256.0
    image_width: int = 128
    image_height: int = 96
    center_dx: float = 0.0
    center_dy: float = 0.0
    blur_sigma: float = 2.0
    s_min: float = 4.0
    s_max: float = 60.0
    corridor_spacing: float = 5.0
    background: BackgroundParams = BackgroundParams()

    def __post_init__(self):
        if self.focal <= 0.0:
            raise ValueError("focal length must be > 0")
        if self.object_width <= 0.0 or self.object_height <= 0.0:
            raise ValueError("object dimensions must be > 0")
        if self.blur_sigma < 0.0:
            raise ValueError("blur_sigma must be >= 0")
        if self.image_width < 8 or self.image_height < 8:
            raise ValueError("image must be at least 8x8")
        if not (0.0 < self.s_min < self.s_max):
            raise ValueError("need 0 < s_min < s_max")
        for c in self.object_color:
            if not (0.0 <= c <= 1.0):
                raise ValueError("object color must lie in [0, 1]")

    @property
    def center(self) -> tuple[float, float]:
        cx = (self.image_width - 1) / 2.0 + self.center_dx
        cy = (self.image_height - 1) / 2.0 + self.center_dy
        return cx, cy

    def with_background(self, bg: BackgroundParams) -> "SceneParams":
        return replace(self, background=bg)


DEFAULT_SCENE = SceneParams()


def _check_range(s: float, scene: SceneParams) -> float:
    s = float(s)
    if not (np.isfinite(s) and scene.s_min <= s <= scene.s_max):
        raise SpacingRangeError(
            f"spacing {s!r} outside renderable range "
            f"[{scene.s_min}, {scene.s_max}]"
        )
    return s


def object_footprint(s: float, scene: SceneParams) -> tuple[float, float, float, float]:
    """Continuous bounding box (x0, x1, y0, y1) of the object before blur.

    Coordinates are pixel-center based: pixel (row i, col j) sits at
    (x=j, y=i).
    """
    s = _check_range(s, scene)
    cx, cy = scene.center
    half_w = scene.focal * scene.object_width / (2.0 * s)
    half_h = scene.focal * scene.object_height / (2.0 * s)
    return (cx - half_w, cx + half_w, cy - half_h, cy + half_h)


def _axis_coverage(coords: np.ndarray, lo: float, hi: float, sigma: float) -> np.ndarray:
    """1D coverage of the interval [lo, hi] blurred by a Gaussian of width sigma.

    This is the exact continuous convolution of the box indicator with the
    Gaussian, point-sampled at pixel centers; sigma = 0 degenerates to a
    hard center-in test.
    """
    if sigma == 0.0:
        return ((coords >= lo) & (coords <= hi)).astype(float)
    q = 1.0 / (sigma * math.sqrt(2.0))
    return 0.5 * (erf((hi - coords) * q) - erf((lo - coords) * q))


def coverage_profiles(s: float, scene: SceneParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis anti-aliased coverage (ax over columns, ay over rows)."""
    x0, x1, y0, y1 = object_footprint(s, scene)
    xs = np.arange(scene.image_width, dtype=float)
    ys = np.arange(scene.image_height, dtype=float)
    ax = _axis_coverage(xs, x0, x1, scene.blur_sigma)
    ay = _axis_coverage(ys, y0, y1, scene.blur_sigma)
    return ax, ay


def corridor_rows(scene: SceneParams) -> tuple[int, int]:
    """Inclusive row band [lo, hi] on which all background styles agree."""
    _, cy = scene.center
    half_h = scene.focal * scene.object_height / (2.0 * scene.corridor_spacing)
    margin = math.ceil(4.0 * scene.blur_sigma) + 2
    lo = max(0, math.floor(cy - half_h) - margin)
    hi = min(scene.image_height - 1, math.ceil(cy + half_h) + margin)
    return lo, hi


def _stripe_pattern(width: int, seed: int) -> np.ndarray:
    # deterministic alternating column blocks; block width set by the seed
    block = 6 + 2 * (seed % 4)
    phase = (seed // 4) % block
    return ((np.arange(width) + phase) // block) % 2


def background_image(scene: SceneParams) -> np.ndarray:
    """Render the pure background (no lead object)."""
    H, W = scene.image_height, scene.image_width
    bg = scene.background
    base = np.asarray(bg.base_color, dtype=float)
    accent = np.asarray(bg.accent_color, dtype=float)
    img = np.broadcast_to(base, (H, W, 3)).copy()
    if bg.style == "solid":
        return img

    lo, hi = corridor_rows(scene)
    if bg.style == "gradient":
        # border rows fade from the corridor color toward the accent
        for rows, edge in ((np.arange(0, lo), lo), (np.arange(hi + 1, H), hi)):
            if rows.size == 0 or edge in (0, H - 1):
                continue
            span = max(abs(float(rows[0] - edge)), abs(float(rows[-1] - edge)))
            t = np.abs(rows - edge) / span
            img[rows, :, :] = base + t[:, None, None] * (accent - base)
    else:  # stripes
        pattern = _stripe_pattern(W, bg.seed).astype(bool)
        for rows in (np.arange(0, lo), np.arange(hi + 1, H)):
            if rows.size == 0:
                continue
            band = img[rows, :, :]
            band[:, pattern, :] = accent
            img[rows, :, :] = band
    return img


@lru_cache(maxsize=16)
def _background_cached(scene: SceneParams) -> np.ndarray:
    img = background_image(scene)
    img.setflags(write=False)
    return img


def render(s: float, scene: SceneParams = DEFAULT_SCENE) -> np.ndarray:
    """Camera measurement of the scene with the lead object at spacing s."""
    ax, ay = coverage_profiles(s, scene)
    alpha = np.outer(ay, ax)[:, :, None]
    obj = np.asarray(scene.object_color, dtype=float)
    bg = _background_cached(scene)
    return bg + alpha * (obj - bg)


def ppm_bytes(img: np.ndarray) -> bytes:
    """Encode an image as binary PPM (P6, maxval 255, round half up)."""
    img = np.asarray(img, dtype=float)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {img.shape}")
    data = np.floor(img * 255.0 + 0.5).clip(0, 255).astype(np.uint8)
    header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    return header + data.tobytes()


def write_ppm(img: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(ppm_bytes(img))
