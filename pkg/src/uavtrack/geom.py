"""Shared geometric and probabilistic value types plus homography primitives.

Conventions used across the package:
  * pixel coordinates are floating point, x to the right, y down;
  * luminance values live in [0, 1];
  * homographies are 3x3, row major, gauge-fixed to h33 = 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GaugeSingular, PointAtInfinity

_W_EPS = 1e-9
_DET_EPS = 1e-12


@dataclass(frozen=True)
class Frame:
    """A grayscale frame with its logical timestamp.

    pixels is an (height, width) float array in [0, 1], frozen against writes.
    """

    pixels: np.ndarray
    index: int
    timestamp: float

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"frame must be a 2D image, got shape {px.shape}")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("frame luminance must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box given by top-left and bottom-right corners (pixels)."""

    x_tl: float
    y_tl: float
    x_br: float
    y_br: float

    def __post_init__(self):
        for name in ("x_tl", "y_tl", "x_br", "y_br"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.x_tl < self.x_br and self.y_tl < self.y_br):
            raise ValueError(f"degenerate box {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_tl, self.y_tl, self.x_br, self.y_br)

    @property
    def width(self) -> float:
        return self.x_br - self.x_tl

    @property
    def height(self) -> float:
        return self.y_br - self.y_tl

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_tl + self.x_br) / 2.0, (self.y_tl + self.y_br) / 2.0)


@dataclass(frozen=True)
class Pmf:
    """Discrete probability mass function over N bins."""

    bins: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bins, dtype=np.float64)
        if b.ndim != 1 or b.size < 1:
            raise ValueError("pmf needs a 1D bin array")
        if b.min() < 0.0:
            raise ValueError("pmf bins must be nonnegative")
        if abs(b.sum() - 1.0) > 1e-6:
            raise ValueError(f"pmf bins sum to {b.sum():.8f}, expected 1")
        b.setflags(write=False)
        object.__setattr__(self, "bins", b)

    @classmethod
    def from_weights(cls, weights) -> "Pmf":
        """Build a Pmf from nonnegative weights, normalizing their sum to 1."""
        w = np.asarray(weights, dtype=np.float64)
        total = w.sum()
        if total <= 0.0:
            raise ValueError("weights must have positive sum")
        return cls(w / total)

    @property
    def n(self) -> int:
        return self.bins.size


@dataclass(frozen=True)
class Pmf4:
    """One Pmf per box coordinate; all four share the same bin count."""

    x_tl: Pmf
    y_tl: Pmf
    x_br: Pmf
    y_br: Pmf

    def __post_init__(self):
        ns = {self.x_tl.n, self.y_tl.n, self.x_br.n, self.y_br.n}
        if len(ns) != 1:
            raise ValueError(f"coordinate pmfs disagree on bin count: {sorted(ns)}")

    @property
    def n(self) -> int:
        return self.x_tl.n

    def as_dict(self) -> dict[str, Pmf]:
        return {"x_tl": self.x_tl, "y_tl": self.y_tl, "x_br": self.x_br, "y_br": self.y_br}


@dataclass(frozen=True)
class Homography:
    """3x3 projective transform, h33-normalized and nonsingular."""

    m: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64).reshape(3, 3)
        if abs(m[2, 2] - 1.0) > 1e-9:
            raise ValueError("homography must be h33-normalized (use normalize_h33)")
        if abs(np.linalg.det(m)) <= _DET_EPS:
            raise ValueError("homography is singular")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @property
    def flat(self) -> np.ndarray:
        """Row-major 9-vector (h11 .. h33)."""
        return self.m.reshape(9)

    def inverse(self) -> "Homography":
        return normalize_h33(np.linalg.inv(self.m))


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union with continuous areas; 0 for disjoint boxes."""
    ix = min(a.x_br, b.x_br) - max(a.x_tl, b.x_tl)
    iy = min(a.y_br, b.y_br) - max(a.y_tl, b.y_tl)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def warp_point(h: Homography, p) -> tuple[float, float]:
    """Apply the projective map to a 2D point."""
    x, y = float(p[0]), float(p[1])
    m = h.m
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if abs(w) <= _W_EPS:
        raise PointAtInfinity(f"point ({x}, {y}) maps to infinity")
    return (
        (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w,
        (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w,
    )


def warp_points(h: Homography, pts: np.ndarray) -> np.ndarray:
    """Vectorized warp of an (n, 2) point array. Raises on any vanishing denominator."""
    pts = np.asarray(pts, dtype=np.float64)
    m = h.m
    w = m[2, 0] * pts[:, 0] + m[2, 1] * pts[:, 1] + m[2, 2]
    if np.any(np.abs(w) <= _W_EPS):
        raise PointAtInfinity("some points map to infinity")
    out = np.empty_like(pts)
    out[:, 0] = (m[0, 0] * pts[:, 0] + m[0, 1] * pts[:, 1] + m[0, 2]) / w
    out[:, 1] = (m[1, 0] * pts[:, 0] + m[1, 1] * pts[:, 1] + m[1, 2]) / w
    return out


def jacobian_at(h: Homography, p) -> np.ndarray:
    """2x2 derivative of the projective map with respect to (x, y) at p.

    With w = h31 x + h32 y + h33 and (gx, gy) the warped point,
    d(gx)/dx = (h11 - gx h31) / w and analogously for the other entries.
    """
    x, y = float(p[0]), float(p[1])
    m = h.m
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if abs(w) <= _W_EPS:
        raise PointAtInfinity(f"point ({x}, {y}) maps to infinity")
    gx = (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w
    gy = (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w
    return np.array(
        [
            [(m[0, 0] - gx * m[2, 0]) / w, (m[0, 1] - gx * m[2, 1]) / w],
            [(m[1, 0] - gy * m[2, 0]) / w, (m[1, 1] - gy * m[2, 1]) / w],
        ]
    )


def normalize_h33(raw) -> Homography:
    """Divide a raw 3x3 (or 9-vector) by its h33 entry, fixing the gauge."""
    m = np.asarray(raw, dtype=np.float64).reshape(3, 3)
    if abs(m[2, 2]) <= _W_EPS:
        raise GaugeSingular(f"h33 = {m[2, 2]} is too close to zero")
    return Homography(m / m[2, 2])
