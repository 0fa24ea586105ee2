import json
import sys

import numpy as np
import pytest

from uavtrack.cli import main, make_parser
from uavtrack.config import RunConfig, config_from_dict, config_to_dict, describe_config, load_config
from uavtrack.dataio import CameraMotion, SynthSpec, generate_synthetic, read_pgm, write_sequence
from uavtrack.errors import ConfigError


@pytest.fixture()
def synth_dir(tmp_path):
    spec = SynthSpec(
        width=160,
        height=120,
        n_frames=10,
        camera=CameraMotion(dx=1.0),
        object_waypoints=((0, 60.0, 50.0), (9, 80.0, 60.0)),
    )
    seq, true_h = generate_synthetic(spec, seed=4)
    manifest = write_sequence(seq, tmp_path / "seq", true_h)
    return tmp_path / "seq" / "manifest.json"


class TestConfig:
    def test_defaults(self):
        cfg = config_from_dict({})
        assert cfg.schedule.camera_hz == 30
        assert cfg.gating.alpha == 0.03

    def test_unknown_root_key(self):
        with pytest.raises(ConfigError):
            config_from_dict({"nope": {}})

    def test_unknown_nested_key(self):
        with pytest.raises(ConfigError):
            config_from_dict({"ekf": {"bogus": 1}})

    def test_bad_value_surfaces_section(self):
        with pytest.raises(ConfigError, match="gating"):
            config_from_dict({"gating": {"alpha": 2.0}})

    def test_round_trip(self):
        cfg = config_from_dict(
            {"seed": 9, "schedule": {"tracker_hz": 10}, "ego": {"grid_rows": 8}}
        )
        again = config_from_dict(config_to_dict(cfg))
        assert again == cfg

    def test_file_load(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"seed": 5, "gating": {"tau_sigma": 1.0}}))
        cfg = load_config(p)
        assert cfg.seed == 5 and cfg.gating.tau_sigma == 1.0

    def test_seed_flag_beats_config_file(self, tmp_path):
        import argparse

        from uavtrack.cli import _load_run_config

        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"seed": 5}))
        args = argparse.Namespace(config=str(p), seed=9)
        assert _load_run_config(args).seed == 9
        args = argparse.Namespace(config=str(p), seed=None)
        assert _load_run_config(args).seed == 5

    def test_describe_lists_every_key(self):
        text = describe_config()
        from dataclasses import fields

        for section in ("gating", "ego", "ekf", "schedule", "metrics", "ncc"):
            cfg = getattr(RunConfig(), section)
            for f in fields(cfg):
                assert f"{section}.{f.name}" in text


class TestEval:
    def test_ltp_ncc_end_to_end(self, synth_dir, tmp_path, capsys):
        out = tmp_path / "out"
        rc = main(["eval", str(synth_dir), "--tracker", "ncc", "--protocol", "ltp", "--out", str(out)])
        assert rc == 0
        assert (out / "synth-4.trace.ndjson").exists()
        assert (out / "metrics.json").exists()
        assert (out / "metrics.csv").exists()
        payload = json.loads((out / "metrics.json").read_text())
        assert payload["aggregate"]["sr"] > 50.0

    def test_deterministic_outputs(self, synth_dir, tmp_path):
        cfgp = tmp_path / "cfg.json"
        cfgp.write_text(
            json.dumps(
                {
                    "seed": 3,
                    "gating": {"tau_sigma": 1.0},
                    "ego": {"grid_rows": 6, "grid_cols": 8, "lk_window": 15},
                    "schedule": {"tracker_hz": 10},
                }
            )
        )
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            rc = main(
                [
                    "eval", str(synth_dir), "--tracker", "ncc", "--protocol", "eop",
                    "--config", str(cfgp), "--out", str(out),
                ]
            )
            assert rc == 0
            outs.append((out / "synth-4.trace.ndjson").read_bytes())
        assert outs[0] == outs[1]

    def test_bad_tracker_exit_2(self, synth_dir, tmp_path, capsys):
        rc = main(["eval", str(synth_dir), "--tracker", "wat", "--out", str(tmp_path / "o")])
        assert rc == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"]["code"] == "bad_tracker"

    def test_bad_protocol_exit_2(self, synth_dir, tmp_path, capsys):
        rc = main(
            ["eval", str(synth_dir), "--protocol", "nope", "--out", str(tmp_path / "o")]
        )
        assert rc == 2
        assert json.loads(capsys.readouterr().err)["error"]["code"] == "bad_protocol"

    def test_eval_help_lists_config_keys(self, capsys):
        with pytest.raises(SystemExit):
            make_parser().parse_args(["eval", "--help"])
        text = capsys.readouterr().out
        for key in ("gating.tau_sigma", "ego.ransac_threshold", "ekf.q_diag", "schedule.fusion_enabled"):
            assert key in text

    def test_trace_tracker_replay(self, synth_dir, tmp_path):
        out1 = tmp_path / "o1"
        main(["eval", str(synth_dir), "--tracker", "ncc", "--protocol", "ltp", "--out", str(out1)])
        trace_path = out1 / "synth-4.trace.ndjson"
        # re-score the recorded trace through the replay tracker
        records = [json.loads(l) for l in trace_path.read_text().splitlines()]
        replay = tmp_path / "replay.ndjson"
        replay.write_text(
            "\n".join(
                json.dumps(
                    {"index": r["frame"], "bbox": r["bbox"], "score": r["score"], "pmf": None}
                )
                for r in records
            )
        )
        out2 = tmp_path / "o2"
        rc = main(
            [
                "eval", str(synth_dir), "--tracker", f"trace:{replay}", "--protocol", "ltp",
                "--out", str(out2),
            ]
        )
        assert rc == 0
        a = json.loads((out1 / "metrics.json").read_text())
        b = json.loads((out2 / "metrics.json").read_text())
        assert a["aggregate"] == b["aggregate"]

    def test_parallel_jobs_match_serial(self, tmp_path):
        manifests = []
        for k in range(2):
            spec = SynthSpec(width=128, height=96, n_frames=6)
            seq, th = generate_synthetic(spec, seed=30 + k)
            manifests.append(str(write_sequence(seq, tmp_path / f"s{k}", th)))
        outs = []
        for jobs, sub in ((1, "ser"), (2, "par")):
            out = tmp_path / sub
            rc = main(
                ["eval", *manifests, "--protocol", "ltp", "--jobs", str(jobs), "--out", str(out)]
            )
            assert rc == 0
            outs.append((out / "metrics.json").read_bytes())
        assert outs[0] == outs[1]


class TestSynthCmd:
    def test_writes_layout(self, tmp_path, capsys):
        rc = main(["synth", "--out", str(tmp_path / "seq"), "--seed", "2"])
        assert rc == 0
        assert (tmp_path / "seq" / "manifest.json").exists()
        assert (tmp_path / "seq" / "true_homographies.ndjson").exists()
        assert (tmp_path / "seq" / "groundtruth.txt").exists()

    def test_spec_file(self, tmp_path):
        spec = {"width": 96, "height": 64, "n_frames": 3, "camera": {"dx": 2.0}}
        p = tmp_path / "spec.json"
        p.write_text(json.dumps(spec))
        rc = main(["synth", "--spec", str(p), "--out", str(tmp_path / "seq")])
        assert rc == 0
        lines = (tmp_path / "seq" / "true_homographies.ndjson").read_text().splitlines()
        assert len(lines) == 2
        assert json.loads(lines[0])["h"][2] == 2.0

    def test_unknown_spec_key(self, tmp_path, capsys):
        p = tmp_path / "spec.json"
        p.write_text(json.dumps({"wat": 1}))
        rc = main(["synth", "--spec", str(p), "--out", str(tmp_path / "seq")])
        assert rc == 2


class TestAugmentCmd:
    def test_gt_bytes_identical_and_deterministic(self, synth_dir, tmp_path):
        events = tmp_path / "events.json"
        events.write_text(json.dumps([{"start": 2, "end": 8, "shape": "circle"}]))
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            rc = main(
                [
                    "augment", "--manifest", str(synth_dir), "--events", str(events),
                    "--seed", "6", "--out", str(out),
                ]
            )
            assert rc == 0
            outs.append(out)
        import os

        gt_src = synth_dir.parent / "groundtruth.txt"
        assert (outs[0] / "groundtruth.txt").read_bytes() == gt_src.read_bytes()
        for name in sorted(os.listdir(outs[0])):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
        meta = json.loads((outs[0] / "events.json").read_text())
        assert meta[0]["shape_kind"] == "circle"

    def test_augmented_sequence_still_loads(self, synth_dir, tmp_path):
        events = tmp_path / "events.json"
        events.write_text(json.dumps([{"start": 2, "end": 8, "shape": "stripe"}]))
        out = tmp_path / "occ"
        main(["augment", "--manifest", str(synth_dir), "--events", str(events), "--out", str(out)])
        from uavtrack.dataio import load_sequence

        seq = load_sequence(out / "manifest.json")
        assert "occlusion" in seq.tags


class TestMetricsCmd:
    def test_rescore(self, synth_dir, tmp_path, capsys):
        out = tmp_path / "o"
        main(["eval", str(synth_dir), "--protocol", "ltp", "--out", str(out)])
        capsys.readouterr()
        rc = main(
            [
                "metrics", "--manifest", str(synth_dir),
                "--trace", str(out / "synth-4.trace.ndjson"),
            ]
        )
        assert rc == 0
        rep = json.loads(capsys.readouterr().out)
        assert set(rep) >= {"sr", "msr", "pr", "nt2f", "frames_evaluated"}


class TestOverlayCmd:
    def test_renders_every_frame(self, synth_dir, tmp_path):
        out = tmp_path / "o"
        main(["eval", str(synth_dir), "--protocol", "ltp", "--out", str(out)])
        ovl = tmp_path / "ovl"
        rc = main(
            [
                "overlay", "--manifest", str(synth_dir),
                "--trace", str(out / "synth-4.trace.ndjson"), "--out", str(ovl),
            ]
        )
        assert rc == 0
        import os

        assert len([n for n in os.listdir(ovl) if n.endswith(".pgm")]) == 10

    def test_gt_trace_coincides(self, synth_dir, tmp_path):
        # a trace equal to GT draws both rectangles onto the same pixels
        from uavtrack.dataio import load_sequence
        from uavtrack.protocols import ResultTrace, TraceRecord

        seq = load_sequence(synth_dir)
        records = [
            TraceRecord(frame=i, bbox=seq.gt_at(i), source="tracker", score=1.0)
            for i in range(len(seq))
        ]
        tp = tmp_path / "gt_trace.ndjson"
        ResultTrace(records).write_ndjson(tp)
        ovl = tmp_path / "ovl"
        rc = main(["overlay", "--manifest", str(synth_dir), "--trace", str(tp), "--out", str(ovl)])
        assert rc == 0
        img = read_pgm(ovl / "000000.pgm")
        # prediction (white) overdraws every GT (black) pixel exactly
        assert not np.any(img == 0.0)

    def test_missing_record_error(self, synth_dir, tmp_path, capsys):
        from uavtrack.protocols import ResultTrace, TraceRecord
        from uavtrack.geom import BBox

        records = [TraceRecord(frame=0, bbox=BBox(0, 0, 5, 5), source="tracker", score=1.0)]
        tp = tmp_path / "short.ndjson"
        ResultTrace(records).write_ndjson(tp)
        rc = main(
            ["overlay", "--manifest", str(synth_dir), "--trace", str(tp), "--out", str(tmp_path / "o")]
        )
        assert rc == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"]["code"] == "missing_frame"
        assert "1" in err["error"]["message"]


class TestConformanceCmd:
    def test_python_echo_passes(self, tmp_path, capsys):
        script = tmp_path / "echo.py"
        from tests.test_trackers import ECHO_SCRIPT

        script.write_text(ECHO_SCRIPT)
        rc = main(
            ["conformance", "--cmd", f"{sys.executable} {script}", "--exchanges", "25"]
        )
        assert rc == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep["exchanges"] == 25 and rep["mismatches"] == []
