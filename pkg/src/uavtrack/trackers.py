"""Measurement sources behind a single tracker contract.

Every tracker exposes initialize(frame, bbox) and
process(frame, search_center) -> TrackerOutput. Three implementations:

  * NccTracker    - normalized cross-correlation template tracker, the
                    built-in desk-scale measurement source;
  * TraceTracker  - replays a recorded NDJSON result trace;
  * ExternTracker - drives an out-of-process tracker over a newline-delimited
                    JSON protocol (stdio subprocess or TCP).

EchoTracker is the in-process reference for protocol conformance: it returns
an init-sized box at the requested search center with score 1.
"""

from __future__ import annotations

import base64
import json
import math
import queue
import shlex
import socket
import subprocess
import threading
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .confidence import GatingConfig, gate_template
from .errors import (
    BoxOutOfFrame,
    MissingFrame,
    ParseError,
    ProcessExited,
    ProtocolError,
    SearchWindowEmpty,
    TrackerTimeout,
)
from .geom import BBox, Frame, Pmf, Pmf4


@dataclass(frozen=True)
class TrackerOutput:
    bbox: BBox
    score: float
    frame_index: int
    pmf: Pmf4 | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


class TrackerContract(Protocol):
    def initialize(self, frame: Frame, bbox: BBox) -> None: ...

    def process(self, frame: Frame, search_center: tuple[float, float] | None) -> TrackerOutput: ...


@dataclass(frozen=True)
class NccConfig:
    search_factor: float = 4.0
    blend: float = 0.1
    pmf_temperature: float = 10.0
    min_area: float = 16.0
    scale_search: bool = False
    scales: tuple = (0.95, 1.0, 1.05)


class NccTracker:
    """Fixed-size template tracker scoring zero-normalized cross-correlation.

    The search window is the template size times search_factor, centered on
    the caller-provided search center (feedback from the estimation filter)
    or on the previous box center. The response map also yields a coordinate
    distribution so the windowed-mass confidence can run end to end.
    """

    def __init__(self, cfg: NccConfig | None = None, gating: GatingConfig | None = None):
        self.cfg = cfg or NccConfig()
        self.gating = gating or GatingConfig()
        self._template: np.ndarray | None = None
        self._size: tuple[float, float] | None = None
        self._center: tuple[float, float] | None = None

    def initialize(self, frame: Frame, bbox: BBox) -> None:
        if bbox.x_tl < 0 or bbox.y_tl < 0 or bbox.x_br > frame.width or bbox.y_br > frame.height:
            raise BoxOutOfFrame(f"init box {bbox.as_tuple()} leaves the {frame.width}x{frame.height} frame")
        ix0, iy0 = int(round(bbox.x_tl)), int(round(bbox.y_tl))
        ix1, iy1 = int(round(bbox.x_br)), int(round(bbox.y_br))
        if (ix1 - ix0) * (iy1 - iy0) < self.cfg.min_area:
            raise BoxOutOfFrame(f"template area below {self.cfg.min_area} px^2")
        self._template = frame.pixels[iy0:iy1, ix0:ix1].copy()
        self._size = (bbox.width, bbox.height)
        self._center = bbox.center

    def process(self, frame: Frame, search_center=None) -> TrackerOutput:
        if self._template is None:
            raise RuntimeError("process before initialize")
        center = search_center if search_center is not None else self._center
        cx, cy = float(center[0]), float(center[1])
        if not (math.isfinite(cx) and math.isfinite(cy)):
            raise SearchWindowEmpty("search center is not finite")
        th, tw = self._template.shape
        sw = min(frame.width, int(round(tw * self.cfg.search_factor)))
        sh = min(frame.height, int(round(th * self.cfg.search_factor)))
        sw, sh = max(sw, tw), max(sh, th)
        if sw > frame.width or sh > frame.height:
            raise SearchWindowEmpty("frame smaller than the template")
        if cx < -sw or cx > frame.width + sw or cy < -sh or cy > frame.height + sh:
            raise SearchWindowEmpty(f"center ({cx:.1f}, {cy:.1f}) beyond clamp recovery")
        x0 = int(round(cx - sw / 2.0))
        y0 = int(round(cy - sh / 2.0))
        x0 = min(max(x0, 0), frame.width - sw)
        y0 = min(max(y0, 0), frame.height - sh)
        window = frame.pixels[y0 : y0 + sh, x0 : x0 + sw]

        if self.cfg.scale_search:
            best = None
            for s in self.cfg.scales:
                resp_s = _zncc_response(window, _rescale(self._template, s))
                peak = resp_s.max()
                if best is None or peak > best[0]:
                    best = (peak, resp_s, s)
            _, resp, scale = best
            if scale != 1.0:
                self._template = _rescale(self._template, scale)
                self._size = (self._size[0] * scale, self._size[1] * scale)
                th, tw = self._template.shape
        else:
            resp = _zncc_response(window, self._template)

        iy, ix = np.unravel_index(int(np.argmax(resp)), resp.shape)
        new_cx = x0 + ix + tw / 2.0
        new_cy = y0 + iy + th / 2.0
        score = (float(resp[iy, ix]) + 1.0) / 2.0
        score = min(max(score, 0.0), 1.0)

        w, h = self._size
        bbox = BBox(new_cx - w / 2.0, new_cy - h / 2.0, new_cx + w / 2.0, new_cy + h / 2.0)
        pmf = _response_pmf(resp, self.cfg.pmf_temperature)

        if gate_template(score, self.gating):
            patch = window[iy : iy + th, ix : ix + tw]
            if patch.shape == self._template.shape:
                self._template = (1.0 - self.cfg.blend) * self._template + self.cfg.blend * patch
        self._center = (new_cx, new_cy)
        return TrackerOutput(bbox=bbox, score=score, frame_index=frame.index, pmf=pmf)


def _rescale(img: np.ndarray, s: float) -> np.ndarray:
    """Bilinear resize by scale factor s (used only by the scale-search mode)."""
    from .imageops import bilinear_sample

    h, w = img.shape
    nh, nw = max(4, int(round(h * s))), max(4, int(round(w * s)))
    ys = np.linspace(0, h - 1, nh)
    xs = np.linspace(0, w - 1, nw)
    gx, gy = np.meshgrid(xs, ys)
    return bilinear_sample(img, gx, gy)


def _zncc_response(window: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Zero-normalized cross-correlation of the template over every placement."""
    th, tw = template.shape
    wins = np.lib.stride_tricks.sliding_window_view(window, (th, tw))
    n = th * tw
    t_mean = template.mean()
    t_zero = template - t_mean
    t_norm = math.sqrt(float((t_zero**2).sum()))
    s1 = np.einsum("ijkl->ij", wins)
    s2 = np.einsum("ijkl,ijkl->ij", wins, wins)
    cross = np.einsum("ijkl,kl->ij", wins, t_zero)
    var = np.maximum(s2 - s1 * s1 / n, 0.0)
    denom = np.sqrt(var) * t_norm
    with np.errstate(invalid="ignore", divide="ignore"):
        resp = np.where(denom > 1e-12, cross / np.where(denom > 1e-12, denom, 1.0), 0.0)
    return np.clip(resp, -1.0, 1.0)


def _response_pmf(resp: np.ndarray, temperature: float) -> Pmf4:
    """Coordinate distributions from the response map's axis max-profiles.

    Placement bin j of the x profile corresponds to box left edge x0 + j
    (and right edge x0 + j + template width); same weights serve both
    corners, shifted in meaning by the box size. Profiles are zero-padded to
    a common bin count.
    """
    prof_x = resp.max(axis=0)
    prof_y = resp.max(axis=1)
    n = max(prof_x.size, prof_y.size)

    def _softmax_padded(p: np.ndarray) -> np.ndarray:
        e = np.exp(temperature * (p - p.max()))
        e /= e.sum()
        out = np.zeros(n)
        out[: p.size] = e
        return out

    px = Pmf(_softmax_padded(prof_x))
    py = Pmf(_softmax_padded(prof_y))
    return Pmf4(x_tl=px, y_tl=py, x_br=px, y_br=py)


class TraceTracker:
    """Replays recorded tracker outputs keyed by frame index."""

    def __init__(self, path):
        self._records: dict[int, TrackerOutput] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"{path}:{lineno + 1}: invalid JSON") from exc
                self._records[_require_int(rec, "index", path, lineno)] = _parse_result(
                    rec, where=f"{path}:{lineno + 1}"
                )

    def initialize(self, frame: Frame, bbox: BBox) -> None:
        pass  # replay needs no template

    def process(self, frame: Frame, search_center=None) -> TrackerOutput:
        if frame.index not in self._records:
            raise MissingFrame(f"trace has no record for frame {frame.index}")
        return self._records[frame.index]


def _require_int(rec: dict, key: str, path, lineno: int) -> int:
    if key not in rec or not isinstance(rec[key], int):
        raise ParseError(f"{path}:{lineno + 1}: missing integer {key!r}")
    return rec[key]


def _parse_result(rec: dict, where: str = "<extern>", expect_index: int | None = None) -> TrackerOutput:
    """Validate a result record (shared by trace replay and the wire client)."""
    err = ParseError if expect_index is None else ProtocolError
    if expect_index is not None:
        if rec.get("type") != "result":
            raise err(f"{where}: expected type 'result', got {rec.get('type')!r}")
        if rec.get("index") != expect_index:
            raise err(f"{where}: index {rec.get('index')} does not match request {expect_index}")
    bbox = rec.get("bbox")
    if (
        not isinstance(bbox, (list, tuple))
        or len(bbox) != 4
        or not all(isinstance(v, (int, float)) and math.isfinite(v) for v in bbox)
    ):
        raise err(f"{where}: bbox must be 4 finite numbers")
    if not (bbox[0] < bbox[2] and bbox[1] < bbox[3]):
        raise err(f"{where}: degenerate bbox {bbox}")
    score = rec.get("score")
    if not isinstance(score, (int, float)) or not 0.0 <= score <= 1.0:
        raise err(f"{where}: score must be in [0, 1], got {score!r}")
    pmf_rec = rec.get("pmf")
    pmf = None
    if pmf_rec is not None:
        if not isinstance(pmf_rec, dict) or set(pmf_rec) != {"x_tl", "y_tl", "x_br", "y_br"}:
            raise err(f"{where}: pmf must map exactly the four coordinate keys")
        try:
            parts = {k: Pmf.from_weights(np.asarray(v, dtype=np.float64)) for k, v in pmf_rec.items()}
            pmf = Pmf4(**parts)
        except (ValueError, TypeError) as exc:
            raise err(f"{where}: bad pmf: {exc}") from exc
    index = rec.get("index")
    return TrackerOutput(
        bbox=BBox(*[float(v) for v in bbox]),
        score=float(score),
        frame_index=int(index) if isinstance(index, int) else -1,
        pmf=pmf,
    )


def encode_frame_payload(frame: Frame) -> str:
    """Inline frame payload: base64 of the 8-bit binary PGM encoding."""
    q = np.clip(np.rint(frame.pixels * 255.0), 0, 255).astype(np.uint8)
    h, w = q.shape
    raw = f"P5\n{w} {h}\n255\n".encode("ascii") + q.tobytes()
    return base64.b64encode(raw).decode("ascii")


class _StdioChannel:
    """Line-oriented channel to a subprocess with timeout-guarded reads."""

    def __init__(self, cmd: str):
        self.proc = subprocess.Popen(
            shlex.split(cmd),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self):
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def send(self, obj: dict) -> None:
        if self.proc.poll() is not None:
            raise ProcessExited(f"tracker process exited with {self.proc.returncode}")
        try:
            self.proc.stdin.write(json.dumps(obj) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProcessExited("tracker process closed its stdin") from exc

    def recv(self, timeout: float) -> str:
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            raise TrackerTimeout(f"no response within {timeout} s") from None
        if line is None:
            raise ProcessExited("tracker process closed its stdout")
        return line

    def close(self):
        try:
            if self.proc.poll() is None:
                self.proc.stdin.close()
                self.proc.wait(timeout=5)
        except Exception:
            self.proc.kill()


class _TcpChannel:
    def __init__(self, host: str, port: int):
        self.sock = socket.create_connection((host, port), timeout=10.0)
        self._file = self.sock.makefile("rw", encoding="utf-8", newline="\n")

    def send(self, obj: dict) -> None:
        try:
            self._file.write(json.dumps(obj) + "\n")
            self._file.flush()
        except OSError as exc:
            raise ProcessExited("tracker connection closed") from exc

    def recv(self, timeout: float) -> str:
        self.sock.settimeout(timeout)
        try:
            line = self._file.readline()
        except socket.timeout:
            raise TrackerTimeout(f"no response within {timeout} s") from None
        if line == "":
            raise ProcessExited("tracker connection closed")
        return line

    def close(self):
        try:
            self._file.close()
            self.sock.close()
        except OSError:
            pass


class ExternTracker:
    """Client for the newline-delimited JSON tracker protocol.

    Messages (one JSON object per line):
      -> {"type": "init", "frame": F, "bbox": [x_tl, y_tl, x_br, y_br]}
      <- {"type": "ready"}
      -> {"type": "frame", "index": i, "frame": F, "search_center": [x, y] | null}
      <- {"type": "result", "index": i, "bbox": [...], "score": s, "pmf": {...} | null}
      -> {"type": "close"}
    F is either a filesystem path or the base64 of a binary 8-bit PGM.
    """

    def __init__(self, target: str, timeout: float = 10.0):
        self.timeout = timeout
        if ":" in target and not target.startswith((".", "/")) and " " not in target:
            host, _, port = target.rpartition(":")
            if port.isdigit():
                self._chan = _TcpChannel(host, int(port))
            else:
                self._chan = _StdioChannel(target)
        else:
            self._chan = _StdioChannel(target)
        self._ready = False

    def initialize(self, frame: Frame, bbox: BBox) -> None:
        self._chan.send(
            {"type": "init", "frame": encode_frame_payload(frame), "bbox": list(bbox.as_tuple())}
        )
        rep = self._read_json()
        if rep.get("type") != "ready":
            raise ProtocolError(f"expected ready, got {rep!r}")
        self._ready = True

    def process(self, frame: Frame, search_center=None) -> TrackerOutput:
        if not self._ready:
            raise RuntimeError("process before initialize")
        self._chan.send(
            {
                "type": "frame",
                "index": frame.index,
                "frame": encode_frame_payload(frame),
                "search_center": list(map(float, search_center)) if search_center is not None else None,
            }
        )
        rep = self._read_json()
        return _parse_result(rep, where="<extern>", expect_index=frame.index)

    def close(self) -> None:
        try:
            self._chan.send({"type": "close"})
        except (ProcessExited, ProtocolError):
            pass
        self._chan.close()

    def _read_json(self) -> dict:
        line = self._chan.recv(self.timeout)
        try:
            rep = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"malformed response line: {line!r}") from exc
        if not isinstance(rep, dict):
            raise ProtocolError(f"response must be a JSON object: {line!r}")
        if rep.get("type") == "error":
            raise ProtocolError(f"tracker reported error: {rep.get('code')}")
        return rep


class EchoTracker:
    """Reference tracker: an init-sized box centered on the search center.

    Mirrors the conformance contract for protocol adapters, so an external
    echo implementation must reproduce its outputs bit for bit.
    """

    def __init__(self):
        self._size: tuple[float, float] | None = None
        self._center: tuple[float, float] | None = None

    def initialize(self, frame: Frame, bbox: BBox) -> None:
        self._size = (bbox.x_br - bbox.x_tl, bbox.y_br - bbox.y_tl)
        self._center = ((bbox.x_tl + bbox.x_br) / 2.0, (bbox.y_tl + bbox.y_br) / 2.0)

    def process(self, frame: Frame, search_center=None) -> TrackerOutput:
        if self._size is None:
            raise RuntimeError("process before initialize")
        if search_center is not None:
            self._center = (float(search_center[0]), float(search_center[1]))
        cx, cy = self._center
        w, h = self._size
        return TrackerOutput(
            bbox=BBox(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0),
            score=1.0,
            frame_index=frame.index,
            pmf=None,
        )
