"""Tracking quality metrics over result traces.

All rate metrics skip frames without ground truth. The time-to-failure
metric scans for the first frame whose overlap drops to the failure
threshold; unannotated frames cannot trigger a failure but still count in
the sequence length (configurable).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySequence, NoEvaluableFrames
from .geom import BBox, iou
from .protocols import ResultTrace

MSR_THRESHOLDS = tuple(round(0.05 * k, 2) for k in range(1, 20))


@dataclass(frozen=True)
class MetricConfig:
    sr_threshold: float = 0.5
    pr_threshold: float = 0.2
    nt2f_tau: float = 0.0
    nt2f_annotated_only: bool = False  # restrict N to annotated frames
    fresh_only: bool = False  # score only frames with a fresh tracker output


@dataclass(frozen=True)
class MetricReport:
    sr: float
    msr: float
    pr: float
    nt2f: float  # percent, like the others
    frames_evaluated: int
    per_challenge: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {
            "sr": self.sr,
            "msr": self.msr,
            "pr": self.pr,
            "nt2f": self.nt2f,
            "frames_evaluated": self.frames_evaluated,
        }
        if self.per_challenge:
            out["per_challenge"] = {k: v.as_dict() for k, v in self.per_challenge.items()}
        return out


def _paired(trace: ResultTrace, gt: dict[int, BBox | None], fresh_only: bool = False):
    pairs = []
    for rec in trace:
        if fresh_only and rec.source == "hold":
            continue
        box = gt.get(rec.frame)
        if box is not None:
            pairs.append((rec.bbox, box))
    return pairs


def success_rate(trace: ResultTrace, gt: dict[int, BBox | None], threshold: float = 0.5, fresh_only: bool = False) -> float:
    """Percent of annotated frames with overlap strictly above the threshold."""
    pairs = _paired(trace, gt, fresh_only)
    if not pairs:
        raise NoEvaluableFrames("no annotated frames to score")
    hits = sum(1 for pred, ref in pairs if iou(pred, ref) > threshold)
    return 100.0 * hits / len(pairs)


def mean_success_rate(trace: ResultTrace, gt: dict[int, BBox | None], fresh_only: bool = False) -> float:
    """Mean of the success rate over overlap thresholds 0.05 .. 0.95."""
    pairs = _paired(trace, gt, fresh_only)
    if not pairs:
        raise NoEvaluableFrames("no annotated frames to score")
    ious = [iou(pred, ref) for pred, ref in pairs]
    rates = [100.0 * sum(1 for v in ious if v > thr) / len(ious) for thr in MSR_THRESHOLDS]
    return float(np.mean(rates))


def normalized_precision(
    trace: ResultTrace, gt: dict[int, BBox | None], threshold: float = 0.2, fresh_only: bool = False
) -> float:
    """Percent of frames whose center error, normalized by the ground-truth
    box size per axis, stays strictly below the threshold."""
    pairs = _paired(trace, gt, fresh_only)
    if not pairs:
        raise NoEvaluableFrames("no annotated frames to score")
    hits = 0
    for pred, ref in pairs:
        (pcx, pcy), (rcx, rcy) = pred.center, ref.center
        err = np.hypot((pcx - rcx) / ref.width, (pcy - rcy) / ref.height)
        if err < threshold:
            hits += 1
    return 100.0 * hits / len(pairs)


def nt2f(
    trace: ResultTrace,
    gt: dict[int, BBox | None],
    tau: float = 0.0,
    annotated_only: bool = False,
) -> float:
    """Fraction of the sequence elapsed before the first failure frame.

    A frame fails when its overlap with the ground truth is <= tau.
    Unannotated frames are skipped in the scan; they count toward the
    sequence length unless annotated_only is set.
    """
    if len(trace) == 0:
        raise EmptySequence("cannot score an empty trace")
    if annotated_only:
        annotated = [rec for rec in trace if gt.get(rec.frame) is not None]
        if not annotated:
            raise NoEvaluableFrames("no annotated frames to scan")
        n = len(annotated)
        for j, rec in enumerate(annotated):
            if iou(rec.bbox, gt[rec.frame]) <= tau:
                return j / n
        return 1.0
    n = len(trace)
    for rec in trace:
        box = gt.get(rec.frame)
        if box is not None and iou(rec.bbox, box) <= tau:
            return rec.frame / n
    return 1.0


def evaluate_sequence(trace: ResultTrace, gt: dict[int, BBox | None], cfg: MetricConfig | None = None) -> MetricReport:
    """All four metrics for one sequence."""
    cfg = cfg or MetricConfig()
    pairs = _paired(trace, gt, cfg.fresh_only)
    return MetricReport(
        sr=success_rate(trace, gt, cfg.sr_threshold, cfg.fresh_only),
        msr=mean_success_rate(trace, gt, cfg.fresh_only),
        pr=normalized_precision(trace, gt, cfg.pr_threshold, cfg.fresh_only),
        nt2f=100.0 * nt2f(trace, gt, cfg.nt2f_tau, cfg.nt2f_annotated_only),
        frames_evaluated=len(pairs),
    )


def aggregate(reports: list[MetricReport], tags: list[tuple[str, ...]]) -> MetricReport:
    """Unweighted mean over sequences, plus per-challenge means over the
    sequences carrying each tag."""
    if not reports:
        raise NoEvaluableFrames("nothing to aggregate")
    if len(tags) != len(reports):
        raise ValueError("one tag tuple per report required")

    def _mean(rs: list[MetricReport]) -> MetricReport:
        return MetricReport(
            sr=float(np.mean([r.sr for r in rs])),
            msr=float(np.mean([r.msr for r in rs])),
            pr=float(np.mean([r.pr for r in rs])),
            nt2f=float(np.mean([r.nt2f for r in rs])),
            frames_evaluated=int(sum(r.frames_evaluated for r in rs)),
        )

    overall = _mean(reports)
    per_challenge = {}
    for tag in sorted({t for ts in tags for t in ts}):
        tagged = [r for r, ts in zip(reports, tags) if tag in ts]
        per_challenge[tag] = _mean(tagged)
    return MetricReport(
        sr=overall.sr,
        msr=overall.msr,
        pr=overall.pr,
        nt2f=overall.nt2f,
        frames_evaluated=overall.frames_evaluated,
        per_challenge=per_challenge,
    )
