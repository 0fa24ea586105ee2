"""Evaluation protocols as a deterministic logical-time scheduler.

LTP runs the tracker on every frame with no delay. DSP runs it on every nth
frame and holds the last output in between. EOP simulates an asynchronous
pipeline: camera, tracker, ego-motion and estimation filter each fire at
their own rate (integer divisors of the camera rate), with an optional
one-block-period latency on tracker outputs. Every protocol emits exactly
one prediction per camera frame.

Within one EOP tick the order is fixed: ego-motion measurement, delivery of
delayed tracker outputs, filter predict/update, tracker invocation, record.
A tracker output produced with latency off becomes visible for the recorded
prediction immediately but reaches the filter at the next filter pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import ekf as ekf_mod
from .confidence import EwmaState, GatingConfig, ewma_update, gate_ego, gate_tracker, pmf4_confidence
from .dataio import Sequence
from .egomotion import EgoConfig, estimate_egomotion
from .ekf import EkfConfig, TrackerMeasurement
from .errors import ConfigError, InitMissing, ParseError, UavTrackError
from .geom import BBox
from .trackers import TrackerContract, TrackerOutput


@dataclass(frozen=True)
class ScheduleConfig:
    """Block rates in Hz; the camera rate must be divisible by each of them.

    tracker_latency delays each tracker output by one tracker period.
    fusion_enabled switches the ego-motion + filter stack on or off; without
    it the prediction is a zero-order hold of the last visible tracker
    output. dsp_n is the frame stride of the DSP protocol.
    """

    camera_hz: int = 30
    tracker_hz: int = 30
    ego_hz: int = 30
    filter_hz: int = 30
    tracker_latency: bool = True
    fusion_enabled: bool = True
    dsp_n: int = 1

    def __post_init__(self):
        for name in ("camera_hz", "tracker_hz", "ego_hz", "filter_hz"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        enabled = ("tracker_hz",) + (("ego_hz", "filter_hz") if self.fusion_enabled else ())
        for name in enabled:
            if self.camera_hz % getattr(self, name) != 0:
                raise ConfigError(f"camera_hz={self.camera_hz} not divisible by {name}={getattr(self, name)}")
        if self.dsp_n < 1:
            raise ConfigError("dsp_n must be >= 1")


@dataclass(frozen=True)
class TraceRecord:
    frame: int
    bbox: BBox
    source: str  # tracker | ekf | hold
    score: float | None = None


class ResultTrace:
    """One prediction per camera frame, indices contiguous from 0.

    Fusion runs additionally carry one measurement row per accepted-or-not
    ego estimate (source "ego"); those rows are diagnostics interleaved
    chronologically in the NDJSON file and kept apart from the predictions.
    """

    def __init__(self, records: list[TraceRecord], ego_rows: list[dict] | None = None):
        for i, rec in enumerate(records):
            if rec.frame != i:
                raise ValueError(f"record {i} carries frame index {rec.frame}")
        self.records = records
        self.ego_rows = ego_rows or []

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def bbox_at(self, i: int) -> BBox:
        return self.records[i].bbox

    def write_ndjson(self, path) -> None:
        ego_by_frame: dict[int, list[dict]] = {}
        for row in self.ego_rows:
            ego_by_frame.setdefault(row["frame"], []).append(row)
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                for row in ego_by_frame.get(rec.frame, ()):  # measured before the prediction
                    fh.write(json.dumps(row) + "\n")
                fh.write(
                    json.dumps(
                        {
                            "frame": rec.frame,
                            "bbox": list(rec.bbox.as_tuple()),
                            "source": rec.source,
                            "score": rec.score,
                        }
                    )
                    + "\n"
                )

    @classmethod
    def load_ndjson(cls, path) -> "ResultTrace":
        records = []
        ego_rows = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                    if rec.get("source") == "ego":
                        ego_rows.append(rec)
                        continue
                    records.append(
                        TraceRecord(
                            frame=rec["frame"],
                            bbox=BBox(*rec["bbox"]),
                            source=rec["source"],
                            score=rec.get("score"),
                        )
                    )
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise ParseError(f"{path}:{lineno + 1}: bad trace record: {exc}") from exc
        return cls(records, ego_rows)


def _require_init(seq: Sequence) -> BBox:
    gt0 = seq.gt_at(0)
    if gt0 is None:
        raise InitMissing(f"sequence {seq.name} has no ground truth at frame 0")
    return gt0


def run_ltp(seq: Sequence, tracker: TrackerContract) -> ResultTrace:
    """Initialize once on frame 0, then track every frame with no delay."""
    gt0 = _require_init(seq)
    tracker.initialize(seq.frame(0), gt0)
    records = []
    for i in range(len(seq)):
        out = tracker.process(seq.frame(i), None)
        records.append(TraceRecord(frame=i, bbox=out.bbox, source="tracker", score=out.score))
    return ResultTrace(records)


def run_dsp(seq: Sequence, tracker: TrackerContract, n: int) -> ResultTrace:
    """Track every nth frame; intermediate frames hold the last output."""
    if n < 1:
        raise ConfigError("dsp stride must be >= 1")
    gt0 = _require_init(seq)
    tracker.initialize(seq.frame(0), gt0)
    records = []
    last: TrackerOutput | None = None
    for i in range(len(seq)):
        if i % n == 0:
            last = tracker.process(seq.frame(i), None)
            records.append(TraceRecord(frame=i, bbox=last.bbox, source="tracker", score=last.score))
        else:
            records.append(TraceRecord(frame=i, bbox=last.bbox, source="hold", score=None))
    return ResultTrace(records)


def _measurement_score(out: TrackerOutput, gating: GatingConfig) -> float:
    """Windowed-mass confidence when a coordinate distribution is available,
    otherwise the tracker's own score."""
    if out.pmf is not None:
        return pmf4_confidence(out.pmf, gating.alpha)
    return out.score


def run_eop(
    seq: Sequence,
    tracker: TrackerContract,
    cfg: ScheduleConfig,
    ekf_cfg: EkfConfig | None = None,
    ego_cfg: EgoConfig | None = None,
    gating_cfg: GatingConfig | None = None,
    seed: int = 0,
) -> ResultTrace:
    """Asynchronous logical-time simulation at the camera rate."""
    ekf_cfg = ekf_cfg or EkfConfig(camera_hz=float(cfg.camera_hz))
    ego_cfg = ego_cfg or EgoConfig()
    gating_cfg = gating_cfg or GatingConfig()

    tracker_period = cfg.camera_hz // cfg.tracker_hz
    ego_period = cfg.camera_hz // cfg.ego_hz
    filter_period = cfg.camera_hz // cfg.filter_hz

    gt0 = _require_init(seq)
    tracker.initialize(seq.frame(0), gt0)
    filt = ekf_mod.init(gt0, ekf_cfg) if cfg.fusion_enabled else None
    ewma = EwmaState()

    pending: list[tuple[int, TrackerOutput]] = []  # (visible_at, output)
    filter_inbox: list[TrackerOutput] = []
    held_bbox = gt0
    records: list[TraceRecord] = []
    ego_rows: list[dict] = []

    for t in range(len(seq)):
        # 1. ego-motion block: measurement spans the previous ego period
        ego_meas = None
        if cfg.fusion_enabled and t > 0 and t % ego_period == 0:
            try:
                ego_meas = estimate_egomotion(
                    seq.frame(t - ego_period), seq.frame(t), ego_cfg, seed=seed * 1_000_003 + t
                )
                ego_rows.append(
                    {
                        "frame": t,
                        "source": "ego",
                        "h": list(ego_meas.h.flat),
                        "cov_diag": [float(v) for v in ego_meas.cov.diagonal()],
                        "inliers": ego_meas.inlier_count,
                    }
                )
            except UavTrackError:
                ego_meas = None  # unusable pair; the filter simply coasts

        # 2. delayed tracker outputs become visible
        fresh: TrackerOutput | None = None
        still_pending = []
        for visible_at, out in pending:
            if visible_at <= t:
                fresh = out
                held_bbox = out.bbox
                filter_inbox.append(out)
            else:
                still_pending.append((visible_at, out))
        pending = still_pending

        # 3. estimation filter
        if cfg.fusion_enabled:
            if t > 0 and t % filter_period == 0:
                filt = ekf_mod.predict(filt, filter_period / cfg.camera_hz, ekf_cfg)
            if ego_meas is not None and gate_ego(ego_meas.cov, gating_cfg):
                filt = ekf_mod.update_ego(filt, ego_meas, ekf_cfg)
            for out in filter_inbox:
                p_k = _measurement_score(out, gating_cfg)
                ewma = ewma_update(ewma, p_k, gating_cfg.alpha_ewma)
                if gate_tracker(ewma, p_k, gating_cfg):
                    filt = ekf_mod.update_tracker(
                        filt,
                        TrackerMeasurement(bbox=out.bbox, score=p_k, frame_index=out.frame_index),
                        ekf_cfg,
                    )
            filter_inbox = []

        # 4. tracker block
        if t % tracker_period == 0:
            center = ekf_mod.search_center(filt) if cfg.fusion_enabled else None
            out = tracker.process(seq.frame(t), center)
            if cfg.tracker_latency:
                pending.append((t + tracker_period, out))
            else:
                fresh = out
                held_bbox = out.bbox
                filter_inbox.append(out)

        # 5. record one prediction for frame t
        if cfg.fusion_enabled:
            records.append(
                TraceRecord(
                    frame=t,
                    bbox=ekf_mod.current_bbox(filt),
                    source="ekf",
                    score=fresh.score if fresh is not None else None,
                )
            )
        else:
            records.append(
                TraceRecord(
                    frame=t,
                    bbox=held_bbox,
                    source="tracker" if fresh is not None else "hold",
                    score=fresh.score if fresh is not None else None,
                )
            )
    return ResultTrace(records, ego_rows)
