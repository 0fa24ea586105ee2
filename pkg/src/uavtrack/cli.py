"""Command-line surface: evaluate, augment, synthesize, score, overlay,
and check external trackers for protocol conformance.

Every command prints a machine-readable {"error": {"code", "message"}}
envelope on stderr and exits nonzero when a module error occurs (exit 2 for
usage/config problems, 1 for runtime failures).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import augment as augment_mod
from . import metrics as metrics_mod
from .config import RunConfig, config_to_dict, config_from_dict, describe_config, load_config
from .dataio import SynthSpec, CameraMotion, generate_synthetic, load_sequence, write_pgm, write_sequence
from .errors import ConfigError, MissingFrame, UavTrackError
from .geom import BBox, Frame
from .protocols import ResultTrace, run_dsp, run_eop, run_ltp
from .trackers import EchoTracker, ExternTracker, NccTracker, TraceTracker


def _usage_error(code: str, message: str) -> ConfigError:
    err = ConfigError(message)
    err.code = code
    return err


def build_tracker(spec: str, cfg: RunConfig):
    if spec == "ncc":
        return NccTracker(cfg.ncc, cfg.gating)
    if spec.startswith("trace:"):
        return TraceTracker(spec[len("trace:") :])
    if spec.startswith("extern:"):
        return ExternTracker(spec[len("extern:") :])
    raise _usage_error("bad_tracker", f"unknown tracker {spec!r} (want ncc | trace:PATH | extern:CMD)")


def run_protocol(protocol: str, seq, tracker, cfg: RunConfig) -> ResultTrace:
    if protocol == "ltp":
        return run_ltp(seq, tracker)
    if protocol == "dsp" or protocol.startswith("dsp:"):
        n = cfg.schedule.dsp_n if protocol == "dsp" else int(protocol.split(":", 1)[1])
        return run_dsp(seq, tracker, n)
    if protocol == "eop":
        return run_eop(seq, tracker, cfg.schedule, cfg.ekf, cfg.ego, cfg.gating, seed=cfg.seed)
    raise _usage_error("bad_protocol", f"unknown protocol {protocol!r} (want ltp | dsp:N | eop)")


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = config_from_dict({**config_to_dict(cfg), "seed": args.seed})
    return cfg


def _eval_worker(job: tuple) -> tuple[str, dict, tuple[str, ...]]:
    manifest, tracker_spec, protocol, cfg_dict, out_dir = job
    cfg = config_from_dict(cfg_dict)
    seq = load_sequence(manifest)
    tracker = build_tracker(tracker_spec, cfg)
    try:
        trace = run_protocol(protocol, seq, tracker, cfg)
    finally:
        if hasattr(tracker, "close"):
            tracker.close()
    trace.write_ndjson(os.path.join(out_dir, f"{seq.name}.trace.ndjson"))
    report = metrics_mod.evaluate_sequence(trace, seq.gt, cfg.metrics)
    return seq.name, report.as_dict(), seq.tags


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    # surface tracker/protocol spec typos before any heavy work
    if not (
        args.tracker == "ncc"
        or args.tracker.startswith("trace:")
        or args.tracker.startswith("extern:")
    ):
        raise _usage_error("bad_tracker", f"unknown tracker {args.tracker!r}")
    if not (args.protocol in ("ltp", "dsp", "eop") or args.protocol.startswith("dsp:")):
        raise _usage_error("bad_protocol", f"unknown protocol {args.protocol!r}")
    os.makedirs(args.out, exist_ok=True)
    jobs = [(m, args.tracker, args.protocol, config_to_dict(cfg), args.out) for m in args.manifests]

    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_eval_worker, jobs))
    else:
        results = [_eval_worker(job) for job in jobs]

    names = [r[0] for r in results]
    reports = [metrics_mod.MetricReport(**{k: v for k, v in r[1].items() if k != "per_challenge"}) for r in results]
    tags = [r[2] for r in results]
    agg = metrics_mod.aggregate(reports, [tuple(t) for t in tags])

    with open(os.path.join(args.out, "metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "sequences": {name: rep for name, rep, _ in results},
                "aggregate": agg.as_dict(),
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    with open(os.path.join(args.out, "metrics.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sequence", "sr", "msr", "pr", "nt2f", "frames_evaluated"])
        for name, rep, _ in results:
            writer.writerow([name, rep["sr"], rep["msr"], rep["pr"], rep["nt2f"], rep["frames_evaluated"]])
        writer.writerow(["aggregate", agg.sr, agg.msr, agg.pr, agg.nt2f, agg.frames_evaluated])
    print(json.dumps({"sequences": names, "aggregate": agg.as_dict()}))
    return 0


def cmd_synth(args) -> int:
    spec_dict = {}
    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec_dict = json.load(fh)
    spec = synth_spec_from_dict(spec_dict)
    seq, true_h = generate_synthetic(spec, args.seed)
    manifest = write_sequence(seq, args.out, true_h)
    print(json.dumps({"manifest": manifest, "frames": len(seq)}))
    return 0


_SYNTH_KEYS = {
    "width", "height", "n_frames", "object_size", "object_waypoints",
    "camera", "occlusion_windows", "noise_octaves", "base_cell",
}


def synth_spec_from_dict(data: dict) -> SynthSpec:
    unknown = set(data) - _SYNTH_KEYS
    if unknown:
        raise ConfigError(f"unknown synth spec keys {sorted(unknown)}")
    kwargs = dict(data)
    if "object_size" in kwargs:
        kwargs["object_size"] = tuple(kwargs["object_size"])
    if "object_waypoints" in kwargs:
        kwargs["object_waypoints"] = tuple(tuple(wp) for wp in kwargs["object_waypoints"])
    if "occlusion_windows" in kwargs:
        kwargs["occlusion_windows"] = tuple(tuple(wi) for wi in kwargs["occlusion_windows"])
    if "camera" in kwargs:
        cam = kwargs["camera"]
        if isinstance(cam, list):
            kwargs["camera"] = tuple(CameraMotion(**step) for step in cam)
        else:
            kwargs["camera"] = CameraMotion(**cam)
    try:
        return SynthSpec(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad synth spec: {exc}") from exc


def cmd_augment(args) -> int:
    cfg = _load_run_config(args)
    seq = load_sequence(args.manifest)
    with open(args.events, "r", encoding="utf-8") as fh:
        events_raw = json.load(fh)
    specs = [
        augment_mod.OcclusionEventSpec(ev["start"], ev["end"], ev["shape"]) for ev in events_raw
    ]
    frames = [seq.frame(i) for i in range(len(seq))]
    size = (frames[0].width, frames[0].height)
    out_frames, plans = augment_mod.augment_frames(frames, seq.gt, size, specs, cfg.seed, seq.name)

    os.makedirs(args.out, exist_ok=True)
    for i, px in enumerate(out_frames):
        write_pgm(os.path.join(args.out, f"{i:06d}.pgm"), px)
    # ground truth must stay byte-identical: copy the original file
    base = os.path.dirname(os.path.abspath(args.manifest))
    with open(args.manifest, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    shutil.copyfile(os.path.join(base, manifest["annotations"]), os.path.join(args.out, "groundtruth.txt"))
    new_manifest = {
        "name": manifest["name"] + "+occ",
        "frames": "*.pgm",
        "annotations": "groundtruth.txt",
        "format": manifest["format"],
        "tags": sorted(set(manifest.get("tags", [])) | {"occlusion"}),
    }
    with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(new_manifest, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(args.out, "events.json"), "w", encoding="utf-8") as fh:
        json.dump([augment_mod.plan_metadata(p) for p in plans], fh, indent=2)
        fh.write("\n")
    print(json.dumps({"frames": len(out_frames), "events": len(plans)}))
    return 0


def cmd_metrics(args) -> int:
    cfg = _load_run_config(args)
    seq = load_sequence(args.manifest)
    trace = ResultTrace.load_ndjson(args.trace)
    report = metrics_mod.evaluate_sequence(trace, seq.gt, cfg.metrics)
    print(json.dumps(report.as_dict(), indent=2))
    return 0


def _draw_box(px: np.ndarray, box: BBox, value: float) -> None:
    h, w = px.shape
    x0 = max(0, min(w - 1, int(round(box.x_tl))))
    x1 = max(0, min(w - 1, int(round(box.x_br))))
    y0 = max(0, min(h - 1, int(round(box.y_tl))))
    y1 = max(0, min(h - 1, int(round(box.y_br))))
    px[y0, x0 : x1 + 1] = value
    px[y1, x0 : x1 + 1] = value
    px[y0 : y1 + 1, x0] = value
    px[y0 : y1 + 1, x1] = value


def cmd_overlay(args) -> int:
    seq = load_sequence(args.manifest)
    trace = ResultTrace.load_ndjson(args.trace)
    os.makedirs(args.out, exist_ok=True)
    for i in range(len(seq)):
        if i >= len(trace):
            raise MissingFrame(f"trace has no record for frame {i}")
        px = np.array(seq.frame(i).pixels)
        gt = seq.gt_at(i)
        if gt is not None:
            _draw_box(px, gt, 0.0)
        _draw_box(px, trace.bbox_at(i), 1.0)
        write_pgm(os.path.join(args.out, f"{i:06d}.pgm"), px)
    print(json.dumps({"frames": len(seq)}))
    return 0


def cmd_conformance(args) -> int:
    rng = np.random.default_rng(args.seed)
    frames = [
        Frame(rng.random((24, 32)), index=i, timestamp=i / 30.0) for i in range(args.exchanges + 1)
    ]
    init_box = BBox(8.0, 6.0, 24.0, 18.0)

    reference = EchoTracker()
    reference.initialize(frames[0], init_box)
    extern = ExternTracker(args.cmd, timeout=args.timeout)
    mismatches = []
    try:
        extern.initialize(frames[0], init_box)
        for i in range(1, args.exchanges + 1):
            if i % 3 == 0:
                center = None
            else:
                center = (
                    float(np.round(rng.uniform(4.0, 28.0), 3)),
                    float(np.round(rng.uniform(4.0, 20.0), 3)),
                )
            want = reference.process(frames[i], center)
            try:
                got = extern.process(frames[i], center)
            except UavTrackError as exc:
                mismatches.append({"exchange": i, "error": f"{exc.code}: {exc}"})
                break
            if got.bbox.as_tuple() != want.bbox.as_tuple() or got.score != want.score or got.pmf is not None:
                mismatches.append(
                    {
                        "exchange": i,
                        "got": list(got.bbox.as_tuple()),
                        "want": list(want.bbox.as_tuple()),
                    }
                )
    finally:
        extern.close()
    print(json.dumps({"exchanges": args.exchanges, "mismatches": mismatches}))
    return 0 if not mismatches else 1


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uavtrack",
        description="Asynchronous tracking pipeline simulation and evaluation toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser(
        "eval",
        help="run a protocol over sequences and score the traces",
        epilog=describe_config(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p_eval.add_argument("manifests", nargs="+", help="sequence manifest JSON paths")
    p_eval.add_argument("--tracker", default="ncc", help="ncc | trace:PATH | extern:CMD-or-host:port")
    p_eval.add_argument("--protocol", default="eop", help="ltp | dsp:N | eop")
    p_eval.add_argument("--config", help="run config JSON path")
    p_eval.add_argument("--seed", type=int, help="override the config seed")
    p_eval.add_argument("--jobs", type=int, default=1, help="sequence-level parallel workers")
    p_eval.add_argument("--out", required=True, help="output directory")
    p_eval.set_defaults(func=cmd_eval)

    p_synth = sub.add_parser("synth", help="generate a synthetic sequence with true homographies")
    p_synth.add_argument("--spec", help="synth spec JSON path (defaults when omitted)")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_aug = sub.add_parser("augment", help="apply synthetic occlusion events to a sequence")
    p_aug.add_argument("--manifest", required=True)
    p_aug.add_argument("--events", required=True, help='events JSON: [{"start","end","shape"}]')
    p_aug.add_argument("--config", help="run config JSON path")
    p_aug.add_argument("--seed", type=int, help="override the config seed")
    p_aug.add_argument("--out", required=True)
    p_aug.set_defaults(func=cmd_augment)

    p_met = sub.add_parser("metrics", help="re-score an existing trace")
    p_met.add_argument("--manifest", required=True)
    p_met.add_argument("--trace", required=True)
    p_met.add_argument("--config", help="run config JSON path")
    p_met.set_defaults(func=cmd_metrics)

    p_ovl = sub.add_parser("overlay", help="burn prediction and GT boxes into frames")
    p_ovl.add_argument("--manifest", required=True)
    p_ovl.add_argument("--trace", required=True)
    p_ovl.add_argument("--out", required=True)
    p_ovl.set_defaults(func=cmd_overlay)

    p_conf = sub.add_parser("conformance", help="check an external tracker against the protocol")
    p_conf.add_argument("--cmd", required=True, help="adapter command line or host:port")
    p_conf.add_argument("--exchanges", type=int, default=100)
    p_conf.add_argument("--seed", type=int, default=0)
    p_conf.add_argument("--timeout", type=float, default=10.0)
    p_conf.set_defaults(func=cmd_conformance)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(json.dumps({"error": {"code": exc.code, "message": str(exc)}}), file=sys.stderr)
        return 2
    except UavTrackError as exc:
        print(json.dumps({"error": {"code": exc.code, "message": str(exc)}}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
