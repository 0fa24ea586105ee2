"""Dataset ingestion, PGM frame I/O, and the synthetic sequence generator.

Annotation files follow the x,y,w,h convention (top-left corner plus size,
exclusive bottom-right corner). Dense datasets annotate every frame; sparse
ones annotate every 10th frame (line i belongs to frame 10*i).

The synthetic generator renders a seeded value-noise background warped by a
scripted camera motion, pastes a textured object at scripted positions, and
reports the true inter-frame homographies so estimators can be checked
against exact ground truth.
"""

from __future__ import annotations

import glob as globmod
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import InconsistentLength, InitMissing, MissingInit, ParseError, SpecInvalid
from .geom import BBox, Frame, Homography, normalize_h33
from .imageops import bilinear_sample

# MissingInit and InitMissing are aliases at the error level; sequence loading
# raises MissingInit, protocol runners raise InitMissing.


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) 8-bit PGM into a float image in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ParseError(f"{path}: not a binary PGM (P5) file")
    # header: magic, width, height, maxval, separated by whitespace/comments
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        try:
            fields.append(int(data[start:pos]))
        except ValueError as exc:
            raise ParseError(f"{path}: malformed PGM header") from exc
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise ParseError(f"{path}: only 8-bit PGM supported, maxval={maxval}")
    raw = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    if raw.size != width * height:
        raise ParseError(f"{path}: truncated pixel data")
    return raw.reshape(height, width).astype(np.float64) / 255.0


def write_pgm(path, pixels: np.ndarray) -> None:
    """Write a float image in [0, 1] as binary 8-bit PGM."""
    img = np.asarray(pixels, dtype=np.float64)
    q = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def load_annotations(path, format: str = "uav123") -> dict[int, BBox | None]:
    """Parse an annotation file into {frame_index: box-or-None}.

    A NaN line marks an annotated-but-absent target (None). The sparse
    format assigns line i to frame 10*i.
    """
    if format not in ("uav123", "vtuav"):
        raise ParseError(f"unknown annotation format {format!r}")
    stride = 1 if format == "uav123" else 10
    gt: dict[int, BBox | None] = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            parts = line.replace("\t", ",").split(",")
            if len(parts) != 4:
                raise ParseError(f"{path}:{lineno + 1}: expected 4 fields, got {len(parts)}")
            try:
                x, y, w, h = (float(v) for v in parts)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno + 1}: non-numeric field") from exc
            frame = lineno * stride
            if any(math.isnan(v) for v in (x, y, w, h)):
                gt[frame] = None
                continue
            if w <= 0 or h <= 0:
                raise ParseError(f"{path}:{lineno + 1}: nonpositive size {w}x{h}")
            gt[frame] = BBox(x, y, x + w, y + h)
    return gt


def write_annotations(path, gt: dict[int, BBox | None], stride: int = 1) -> None:
    """Write annotations in x,y,w,h lines; round-trips float values exactly."""
    frames = sorted(gt)
    with open(path, "w", encoding="ascii") as fh:
        for i, frame in enumerate(frames):
            if frame != i * stride:
                raise ValueError(f"annotation frames must be contiguous at stride {stride}")
            box = gt[frame]
            if box is None:
                fh.write("NaN,NaN,NaN,NaN\n")
            else:
                fh.write(f"{box.x_tl!r},{box.y_tl!r},{box.width!r},{box.height!r}\n")


class Sequence:
    """A frame source with per-frame ground truth and challenge tags.

    Frames are loaded lazily from disk (with a cache) or held in memory for
    synthetic sequences.
    """

    def __init__(
        self,
        name: str,
        gt: dict[int, BBox | None],
        tags: tuple[str, ...] = (),
        stride: int = 1,
        camera_hz: float = 30.0,
        frame_paths: list[str] | None = None,
        frame_arrays: list[np.ndarray] | None = None,
    ):
        if (frame_paths is None) == (frame_arrays is None):
            raise ValueError("provide exactly one of frame_paths / frame_arrays")
        self.name = name
        self.gt = gt
        self.tags = tuple(tags)
        self.stride = stride
        self.camera_hz = camera_hz
        self._paths = frame_paths
        self._arrays = frame_arrays
        self._cache: dict[int, Frame] = {}

    def __len__(self) -> int:
        return len(self._paths) if self._paths is not None else len(self._arrays)

    def frame(self, i: int) -> Frame:
        if not 0 <= i < len(self):
            raise IndexError(f"frame {i} outside sequence of {len(self)}")
        if i not in self._cache:
            px = read_pgm(self._paths[i]) if self._paths is not None else self._arrays[i]
            self._cache[i] = Frame(px, index=i, timestamp=i / self.camera_hz)
        return self._cache[i]

    def gt_at(self, i: int) -> BBox | None:
        """Ground-truth box at frame i, None when unannotated or absent."""
        return self.gt.get(i)


_MANIFEST_KEYS = {"name", "frames", "annotations", "format", "tags"}


def load_sequence(manifest_path) -> Sequence:
    """Load a sequence described by a manifest JSON file."""
    with open(manifest_path, "r", encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{manifest_path}: invalid JSON: {exc}") from exc
    unknown = set(manifest) - _MANIFEST_KEYS
    if unknown:
        raise ParseError(f"{manifest_path}: unknown manifest keys {sorted(unknown)}")
    for key in ("name", "frames", "annotations", "format"):
        if key not in manifest:
            raise ParseError(f"{manifest_path}: missing manifest key {key!r}")
    base = os.path.dirname(os.path.abspath(manifest_path))
    paths = sorted(globmod.glob(os.path.join(base, manifest["frames"])))
    if not paths:
        raise ParseError(f"{manifest_path}: frame glob matched nothing")
    gt = load_annotations(os.path.join(base, manifest["annotations"]), manifest["format"])
    stride = 1 if manifest["format"] == "uav123" else 10
    if stride == 1 and len(gt) != len(paths):
        raise InconsistentLength(
            f"{manifest_path}: {len(paths)} frames but {len(gt)} dense annotations"
        )
    if gt.get(0) is None:
        raise MissingInit(f"{manifest_path}: no ground truth at frame 0")
    return Sequence(
        name=manifest["name"],
        gt=gt,
        tags=tuple(manifest.get("tags", ())),
        stride=stride,
        frame_paths=paths,
    )


@dataclass(frozen=True)
class CameraMotion:
    """One inter-frame camera step: rotation/scale/projective about the image
    center, plus a translation. Applied as p_k = M p_{k-1}."""

    dx: float = 0.0
    dy: float = 0.0
    rot_deg: float = 0.0
    scale: float = 1.0
    p1: float = 0.0
    p2: float = 0.0

    def matrix(self, width: int, height: int) -> Homography:
        cx, cy = width / 2.0, height / 2.0
        th = math.radians(self.rot_deg)
        a = np.array(
            [
                [self.scale * math.cos(th), -self.scale * math.sin(th), 0.0],
                [self.scale * math.sin(th), self.scale * math.cos(th), 0.0],
                [self.p1, self.p2, 1.0],
            ]
        )
        t_fwd = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1]], dtype=np.float64)
        t_back = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], dtype=np.float64)
        m = t_fwd @ a @ t_back
        m[0, 2] += self.dx
        m[1, 2] += self.dy
        return normalize_h33(m)


@dataclass(frozen=True)
class SynthSpec:
    """Script for a synthetic sequence.

    object_waypoints are (frame, cx, cy) in world coordinates (= frame-0
    pixel coordinates), interpolated piecewise-linearly; the rendered frame
    position is the waypoint pushed through the cumulative camera motion,
    so a static waypoint shows the pure camera-induced apparent motion.
    camera is either one CameraMotion repeated every frame or a list with
    one entry per transition. occlusion_windows are [start, end) frame
    ranges during which the object is not rendered (ground truth is still
    emitted).
    """

    width: int = 320
    height: int = 180
    n_frames: int = 30
    object_size: tuple[int, int] = (24, 16)
    object_waypoints: tuple[tuple[int, float, float], ...] = ((0, 80.0, 60.0),)
    camera: CameraMotion | tuple[CameraMotion, ...] = CameraMotion()
    occlusion_windows: tuple[tuple[int, int], ...] = ()
    noise_octaves: int = 5
    base_cell: int = 32

    def __post_init__(self):
        if self.width < 16 or self.height < 16 or self.n_frames < 1:
            raise SpecInvalid("sequence must be at least 16x16 with one frame")
        if self.object_size[0] < 4 or self.object_size[1] < 4:
            raise SpecInvalid("object must be at least 4x4 px")
        if not self.object_waypoints:
            raise SpecInvalid("at least one object waypoint required")
        frames = [w[0] for w in self.object_waypoints]
        if frames != sorted(frames):
            raise SpecInvalid("object waypoints must be sorted by frame")
        if isinstance(self.camera, tuple) and len(self.camera) not in (0, self.n_frames - 1):
            raise SpecInvalid("camera script must give one step per transition")
        for s, e in self.occlusion_windows:
            if not 0 <= s < e <= self.n_frames:
                raise SpecInvalid(f"bad occlusion window [{s}, {e})")


def _value_noise(h: int, w: int, rng: np.random.Generator, octaves: int, base_cell: int) -> np.ndarray:
    """Multi-octave bilinear lattice noise, stretched to [0.05, 0.95].

    The slow 0.7 amplitude decay keeps enough fine-scale gradient that a
    21x21 structure tensor stays comfortably above the flow validity
    threshold everywhere."""
    out = np.zeros((h, w))
    amp, total = 1.0, 0.0
    for o in range(octaves):
        cell = max(2, base_cell >> o)
        lat = rng.random((h // cell + 2, w // cell + 2))
        ys = np.arange(h) / cell
        xs = np.arange(w) / cell
        gx, gy = np.meshgrid(xs, ys)
        out += amp * bilinear_sample(lat, gx, gy)
        total += amp
        amp *= 0.7
    out /= total
    lo, hi = out.min(), out.max()
    return 0.05 + 0.9 * (out - lo) / max(hi - lo, 1e-9)


def _object_centers(spec: SynthSpec) -> np.ndarray:
    """Per-frame object center from the piecewise-linear waypoint script."""
    wps = list(spec.object_waypoints)
    if wps[0][0] != 0:
        wps.insert(0, (0, wps[0][1], wps[0][2]))
    if wps[-1][0] != spec.n_frames - 1:
        wps.append((spec.n_frames - 1, wps[-1][1], wps[-1][2]))
    centers = np.zeros((spec.n_frames, 2))
    fr = np.array([w[0] for w in wps], dtype=np.float64)
    cx = np.array([w[1] for w in wps])
    cy = np.array([w[2] for w in wps])
    t = np.arange(spec.n_frames, dtype=np.float64)
    centers[:, 0] = np.interp(t, fr, cx)
    centers[:, 1] = np.interp(t, fr, cy)
    return centers


def generate_synthetic(spec: SynthSpec, seed: int) -> tuple[Sequence, list[Homography]]:
    """Render a synthetic sequence; returns it with the true inter-frame
    homographies (entry k-1 maps frame k-1 pixels to frame k pixels)."""
    rng = np.random.default_rng(seed)
    steps = (
        list(spec.camera)
        if isinstance(spec.camera, tuple)
        else [spec.camera] * (spec.n_frames - 1)
    )
    true_h = [step.matrix(spec.width, spec.height) for step in steps]

    # cumulative world->frame transforms; world frame = frame 0 coordinates
    cum = [np.eye(3)]
    for h in true_h:
        cum.append(h.m @ cum[-1])

    # world texture extent: frame corners pulled back through every transform
    corners = np.array(
        [[0, 0], [spec.width - 1, 0], [0, spec.height - 1], [spec.width - 1, spec.height - 1]],
        dtype=np.float64,
    )
    world_pts = []
    for m in cum:
        inv = np.linalg.inv(m)
        ph = np.c_[corners, np.ones(4)] @ inv.T
        world_pts.append(ph[:, :2] / ph[:, 2:3])
    world_pts = np.vstack(world_pts)
    pad = 8.0
    x0 = math.floor(world_pts[:, 0].min() - pad)
    y0 = math.floor(world_pts[:, 1].min() - pad)
    x1 = math.ceil(world_pts[:, 0].max() + pad)
    y1 = math.ceil(world_pts[:, 1].max() + pad)
    texture = _value_noise(y1 - y0 + 1, x1 - x0 + 1, rng, spec.noise_octaves, spec.base_cell)

    ow, oh = spec.object_size
    obj_tex = _value_noise(oh, ow, rng, octaves=3, base_cell=8)
    # push object contrast to the extremes so it stands out from background
    obj_tex = np.where(obj_tex > np.median(obj_tex), 0.95, 0.08)

    centers_world = _object_centers(spec)
    gx, gy = np.meshgrid(
        np.arange(spec.width, dtype=np.float64), np.arange(spec.height, dtype=np.float64)
    )

    frames: list[np.ndarray] = []
    gt: dict[int, BBox | None] = {}
    for k in range(spec.n_frames):
        inv = np.linalg.inv(cum[k])
        wdenom = inv[2, 0] * gx + inv[2, 1] * gy + inv[2, 2]
        wx = (inv[0, 0] * gx + inv[0, 1] * gy + inv[0, 2]) / wdenom
        wy = (inv[1, 0] * gx + inv[1, 1] * gy + inv[1, 2]) / wdenom
        img = bilinear_sample(texture, wx - x0, wy - y0)

        cw = np.append(centers_world[k], 1.0)
        cf = cum[k] @ cw
        cx, cy = cf[0] / cf[2], cf[1] / cf[2]
        tlx, tly = cx - ow / 2.0, cy - oh / 2.0
        occluded = any(s <= k < e for s, e in spec.occlusion_windows)
        if not occluded:
            jx0 = max(0, math.floor(tlx))
            jy0 = max(0, math.floor(tly))
            jx1 = min(spec.width, math.ceil(tlx + ow))
            jy1 = min(spec.height, math.ceil(tly + oh))
            if jx1 > jx0 and jy1 > jy0:
                px, py = np.meshgrid(
                    np.arange(jx0, jx1, dtype=np.float64), np.arange(jy0, jy1, dtype=np.float64)
                )
                u = px - tlx
                v = py - tly
                inside = (u >= 0) & (u < ow) & (v >= 0) & (v < oh)
                vals = bilinear_sample(obj_tex, u - 0.5, v - 0.5)
                region = img[jy0:jy1, jx0:jx1]
                img[jy0:jy1, jx0:jx1] = np.where(inside, vals, region)
        gt[k] = BBox(tlx, tly, tlx + ow, tly + oh)
        frames.append(np.clip(img, 0.0, 1.0))

    seq = Sequence(
        name=f"synth-{seed}",
        gt=gt,
        tags=("synthetic",) + (("occlusion",) if spec.occlusion_windows else ()),
        stride=1,
        frame_arrays=frames,
    )
    return seq, true_h


def write_sequence(seq: Sequence, out_dir, true_h: list[Homography] | None = None) -> str:
    """Write a sequence as PGM frames + annotations + manifest; returns the
    manifest path. Optionally dumps the true homographies as NDJSON."""
    os.makedirs(out_dir, exist_ok=True)
    for i in range(len(seq)):
        write_pgm(os.path.join(out_dir, f"{i:06d}.pgm"), seq.frame(i).pixels)
    write_annotations(os.path.join(out_dir, "groundtruth.txt"), seq.gt, stride=seq.stride)
    manifest = {
        "name": seq.name,
        "frames": "*.pgm",
        "annotations": "groundtruth.txt",
        "format": "uav123" if seq.stride == 1 else "vtuav",
        "tags": list(seq.tags),
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    if true_h is not None:
        with open(os.path.join(out_dir, "true_homographies.ndjson"), "w") as fh:
            for k, h in enumerate(true_h, start=1):
                fh.write(json.dumps({"frame": k, "h": list(h.flat)}) + "\n")
    return manifest_path
