"""Deterministic synthetic occlusion events over sequences.

Each event picks one occluder shape, samples its parameters scaled to the
target size, and moves it along a piecewise-linear trajectory that enters
from outside the image, passes through one to three "hit points" at the
target's annotated centers, and leaves on the other side. The trajectory
gets integrated acceleration jitter that is bridged to zero at the
waypoints, so hit frames stay pinned to the target. Masks are alpha-blended
with a flat fill; ground truth is never modified.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateShape, NoGroundTruth, SizeMismatch
from .geom import BBox, Frame

SHAPE_KINDS = ("rectangle", "ellipse", "circle", "blob", "polygon", "stripe")

ACCEL_SIGMA = 0.5  # px / frame^2
HIT_JITTER_CLIP = 1.5  # px, keeps hit poses within 2 px of the target center


@dataclass(frozen=True)
class OcclusionEventSpec:
    start_frame: int
    end_frame: int
    shape_kind: str

    def __post_init__(self):
        if not 0 <= self.start_frame < self.end_frame:
            raise ValueError("need 0 <= start_frame < end_frame")
        if self.shape_kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.shape_kind!r}")


@dataclass(frozen=True)
class ShapeParams:
    kind: str
    data: dict

    def bounding_radius(self) -> float:
        d = self.data
        if self.kind == "rectangle":
            return math.hypot(d["w"], d["h"]) / 2.0
        if self.kind == "ellipse":
            return max(d["a"], d["b"])
        if self.kind == "circle":
            return d["r"]
        if self.kind == "blob":
            return max(math.hypot(cx, cy) + r for cx, cy, r in d["circles"])
        if self.kind == "polygon":
            return max(math.hypot(x, y) for x, y in d["vertices"])
        return math.hypot(d["length"], d["width"]) / 2.0  # stripe


@dataclass(frozen=True)
class OcclusionPlan:
    spec: OcclusionEventSpec
    shape: ShapeParams
    alpha: float
    fill_value: float
    frames: tuple[int, ...]  # start..end inclusive
    centers: np.ndarray  # (n, 2)
    angles: np.ndarray  # (n,)
    hit_frames: tuple[int, ...]
    hit_points: np.ndarray  # (k, 2)

    def pose_at(self, frame: int) -> tuple[float, float, float]:
        i = frame - self.frames[0]
        return (float(self.centers[i, 0]), float(self.centers[i, 1]), float(self.angles[i]))


def _event_rng(seed: int, sequence_id: str, event_index: int) -> np.random.Generator:
    """Stable stream per (seed, sequence, event), independent of run order."""
    digest = hashlib.sha256(sequence_id.encode("utf-8")).digest()
    seq_key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng([seed, seq_key, event_index])


def _sample_shape(kind: str, rng: np.random.Generator, size: float) -> ShapeParams:
    if kind == "rectangle":
        return ShapeParams(kind, {"w": size, "h": size * rng.uniform(0.5, 1.0)})
    if kind == "ellipse":
        a = size / 2.0
        return ShapeParams(kind, {"a": a, "b": a * rng.uniform(0.45, 1.0)})
    if kind == "circle":
        return ShapeParams(kind, {"r": size / 2.0})
    if kind == "blob":
        k = int(rng.integers(3, 7))
        circles = [
            (rng.uniform(-0.3, 0.3) * size, rng.uniform(-0.3, 0.3) * size, rng.uniform(0.25, 0.45) * size)
            for _ in range(k)
        ]
        return ShapeParams(kind, {"circles": circles})
    if kind == "polygon":
        k = int(rng.integers(5, 10))
        angles = np.sort(rng.uniform(0.0, 2.0 * math.pi, size=k))
        radii = rng.uniform(0.55, 1.0, size=k) * (size / 2.0)
        pts = np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
        return ShapeParams(kind, {"vertices": [tuple(p) for p in _convex_hull(pts)]})
    length = size * rng.uniform(2.0, 3.0)
    aspect = rng.uniform(5.5, 9.0)
    return ShapeParams("stripe", {"length": length, "width": length / aspect})


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns CCW hull vertices."""
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def _half(points):
        out = []
        for p in points:
            while len(out) >= 2:
                a = out[-1] - out[-2]
                b = p - out[-2]
                if a[0] * b[1] - a[1] * b[0] > 0:
                    break
                out.pop()
            out.append(p)
        return out

    lower = _half(pts)
    upper = _half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def rasterize_shape(kind: str, params: ShapeParams, pose, image_size) -> np.ndarray:
    """Binary occluder mask at the given (cx, cy, angle) pose.

    Raises DegenerateShape for intrinsically zero-area parameters; a pose
    outside the image legitimately yields an empty mask (the occluder has
    not entered the view yet).
    """
    w, h = image_size
    cx, cy, angle = pose
    d = params.data
    if kind == "rectangle" and (d["w"] <= 0 or d["h"] <= 0):
        raise DegenerateShape("zero-area rectangle")
    if kind == "ellipse" and (d["a"] <= 0 or d["b"] <= 0):
        raise DegenerateShape("zero-area ellipse")
    if kind == "circle" and d["r"] <= 0:
        raise DegenerateShape("zero-area circle")
    if kind == "blob" and all(r <= 0 for _, _, r in d["circles"]):
        raise DegenerateShape("zero-area blob")
    if kind == "polygon" and len(d["vertices"]) < 3:
        raise DegenerateShape("degenerate polygon")
    if kind == "stripe" and (d["length"] <= 0 or d["width"] <= 0):
        raise DegenerateShape("zero-area stripe")

    mask = np.zeros((h, w), dtype=bool)
    r = params.bounding_radius()
    x0 = max(0, int(math.floor(cx - r)))
    x1 = min(w, int(math.ceil(cx + r)) + 1)
    y0 = max(0, int(math.floor(cy - r)))
    y1 = min(h, int(math.ceil(cy + r)) + 1)
    if x0 >= x1 or y0 >= y1:
        return mask

    xs, ys = np.meshgrid(np.arange(x0, x1, dtype=np.float64), np.arange(y0, y1, dtype=np.float64))
    dx = xs - cx
    dy = ys - cy
    ca, sa = math.cos(angle), math.sin(angle)
    u = ca * dx + sa * dy
    v = -sa * dx + ca * dy

    if kind == "rectangle":
        inside = (u >= -d["w"] / 2) & (u < d["w"] / 2) & (v >= -d["h"] / 2) & (v < d["h"] / 2)
    elif kind == "ellipse":
        inside = (u / d["a"]) ** 2 + (v / d["b"]) ** 2 <= 1.0
    elif kind == "circle":
        inside = u * u + v * v <= d["r"] ** 2
    elif kind == "blob":
        inside = np.zeros_like(u, dtype=bool)
        for bx, by, br in d["circles"]:
            inside |= (u - bx) ** 2 + (v - by) ** 2 <= br * br
    elif kind == "polygon":
        verts = np.asarray(d["vertices"])
        inside = np.ones_like(u, dtype=bool)
        for i in range(len(verts)):
            ax, ay = verts[i]
            bx, by = verts[(i + 1) % len(verts)]
            inside &= (bx - ax) * (v - ay) - (by - ay) * (u - ax) >= 0.0
    else:  # stripe
        inside = (np.abs(u) < d["length"] / 2) & (np.abs(v) < d["width"] / 2)

    mask[y0:y1, x0:x1] = inside
    return mask


def _bridged_jitter(n: int, rng: np.random.Generator) -> np.ndarray:
    """Integrated acceleration noise pinned to zero at both ends (n >= 2)."""
    acc = rng.normal(0.0, ACCEL_SIGMA, size=(n, 2))
    vel = np.cumsum(acc, axis=0)
    dev = np.cumsum(vel, axis=0)
    ramp = np.linspace(0.0, 1.0, n)[:, None]
    return dev - ramp * dev[-1] - (1.0 - ramp) * dev[0]


def _coverage(mask: np.ndarray, box: BBox) -> float:
    """Fraction of the box's pixel area covered by the mask."""
    h, w = mask.shape
    x0 = max(0, int(math.floor(box.x_tl)))
    x1 = min(w, int(math.ceil(box.x_br)))
    y0 = max(0, int(math.floor(box.y_tl)))
    y1 = min(h, int(math.ceil(box.y_br)))
    if x0 >= x1 or y0 >= y1:
        return 0.0
    area = (x1 - x0) * (y1 - y0)
    return float(mask[y0:y1, x0:x1].sum()) / area


def plan_occlusion(
    spec: OcclusionEventSpec,
    gt: dict[int, BBox | None],
    image_size: tuple[int, int],
    seed: int,
    sequence_id: str = "",
    event_index: int = 0,
) -> OcclusionPlan:
    """Sample one occlusion event; deterministic per (seed, sequence, event)."""
    w, h = image_size
    rng = _event_rng(seed, sequence_id, event_index)
    interior = [
        f for f in range(spec.start_frame + 1, spec.end_frame) if gt.get(f) is not None
    ]
    if not interior:
        raise NoGroundTruth(
            f"no annotated frames strictly inside [{spec.start_frame}, {spec.end_frame}]"
        )

    n_hits = int(rng.integers(1, 4))
    n_hits = min(n_hits, len(interior))
    hit_frames = tuple(sorted(int(f) for f in rng.choice(interior, size=n_hits, replace=False)))
    hit_points = np.array(
        [
            np.asarray(gt[f].center)
            + np.clip(rng.normal(0.0, 0.5, size=2), -HIT_JITTER_CLIP, HIT_JITTER_CLIP)
            for f in hit_frames
        ]
    )

    ref_box = gt[hit_frames[0]]
    diag = math.hypot(ref_box.width, ref_box.height)
    alpha = float(rng.uniform(0.8, 1.0))
    fill_value = float(rng.uniform(0.2, 0.8))
    theta0 = float(rng.uniform(0.0, 2.0 * math.pi))
    omega = float(rng.uniform(-math.radians(2.0), math.radians(2.0)))

    size = diag * float(rng.uniform(1.0, 2.0))
    shape = _sample_shape(spec.shape_kind, rng, size)
    # the event must actually occlude: grow/resample until the first hit
    # frame is at least half covered
    for _ in range(20):
        probe = rasterize_shape(
            spec.shape_kind,
            shape,
            (hit_points[0, 0], hit_points[0, 1], theta0 + omega * (hit_frames[0] - spec.start_frame)),
            image_size,
        )
        if _coverage(probe, ref_box) >= 0.5:
            break
        size *= 1.2
        shape = _sample_shape(spec.shape_kind, rng, size)
    else:
        raise DegenerateShape("could not reach 50% target coverage")

    def _outside_point() -> np.ndarray:
        margin = shape.bounding_radius() + float(rng.uniform(5.0, 30.0))
        side = int(rng.integers(0, 4))
        along = float(rng.uniform(0.0, 1.0))
        if side == 0:  # left
            return np.array([-margin, along * h])
        if side == 1:  # right
            return np.array([w - 1 + margin, along * h])
        if side == 2:  # top
            return np.array([along * w, -margin])
        return np.array([along * w, h - 1 + margin])

    frames = tuple(range(spec.start_frame, spec.end_frame + 1))
    way_f = np.array([spec.start_frame, *hit_frames, spec.end_frame], dtype=np.float64)
    way_p = np.vstack([_outside_point(), hit_points, _outside_point()])
    t = np.arange(spec.start_frame, spec.end_frame + 1, dtype=np.float64)
    centers = np.column_stack(
        [np.interp(t, way_f, way_p[:, 0]), np.interp(t, way_f, way_p[:, 1])]
    )

    # jitter each leg independently, pinned to zero at the waypoints
    for a, b in zip(way_f[:-1], way_f[1:]):
        i0 = int(a - spec.start_frame)
        i1 = int(b - spec.start_frame)
        if i1 - i0 >= 2:
            centers[i0 : i1 + 1] += _bridged_jitter(i1 - i0 + 1, rng)

    angles = theta0 + omega * (t - spec.start_frame)
    return OcclusionPlan(
        spec=spec,
        shape=shape,
        alpha=alpha,
        fill_value=fill_value,
        frames=frames,
        centers=centers,
        angles=angles,
        hit_frames=hit_frames,
        hit_points=hit_points,
    )


def apply_occlusion(frame: Frame, mask: np.ndarray, alpha: float, fill_value: float) -> Frame:
    """Alpha-blend the fill value into the masked pixels. Never touches GT."""
    if mask.shape != frame.pixels.shape:
        raise SizeMismatch(f"mask {mask.shape} vs frame {frame.pixels.shape}")
    out = np.where(mask, (1.0 - alpha) * frame.pixels + alpha * fill_value, frame.pixels)
    return Frame(out, index=frame.index, timestamp=frame.timestamp)


def plan_metadata(plan: OcclusionPlan) -> dict:
    """JSON-friendly audit record of every sampled parameter."""
    return {
        "start_frame": plan.spec.start_frame,
        "end_frame": plan.spec.end_frame,
        "shape_kind": plan.spec.shape_kind,
        "shape_params": {
            k: (v if not isinstance(v, list) else [list(map(float, c)) if isinstance(c, (tuple, list)) else c for c in v])
            for k, v in plan.shape.data.items()
        },
        "alpha": plan.alpha,
        "fill_value": plan.fill_value,
        "hit_frames": list(plan.hit_frames),
        "hit_points": plan.hit_points.tolist(),
        "centers": plan.centers.tolist(),
        "angles": plan.angles.tolist(),
    }


def augment_frames(
    seq_frames,
    gt: dict[int, BBox | None],
    image_size: tuple[int, int],
    specs: list[OcclusionEventSpec],
    seed: int,
    sequence_id: str = "",
) -> tuple[list[np.ndarray], list[OcclusionPlan]]:
    """Apply all events to a sequence of Frames; returns new pixel arrays.

    seq_frames is indexable by frame number and must cover every event.
    """
    n = len(seq_frames)
    plans = []
    for k, spec in enumerate(specs):
        if spec.end_frame >= n:
            raise ValueError(f"event {k} ends at {spec.end_frame}, sequence has {n} frames")
        plans.append(plan_occlusion(spec, gt, image_size, seed, sequence_id, event_index=k))
    out = []
    for i in range(n):
        frame = seq_frames[i]
        px = frame.pixels
        for plan in plans:
            if plan.frames[0] <= i <= plan.frames[-1]:
                mask = rasterize_shape(plan.spec.shape_kind, plan.shape, plan.pose_at(i), image_size)
                if mask.any():
                    px = np.where(mask, (1.0 - plan.alpha) * px + plan.alpha * plan.fill_value, px)
        out.append(px)
    return out, plans
