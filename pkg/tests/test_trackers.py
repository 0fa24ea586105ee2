import json
import sys

import numpy as np
import pytest

from uavtrack.dataio import SynthSpec, generate_synthetic
from uavtrack.errors import (
    BoxOutOfFrame,
    MissingFrame,
    ProcessExited,
    ProtocolError,
    SearchWindowEmpty,
    TrackerTimeout,
)
from uavtrack.geom import BBox, Frame
from uavtrack.trackers import EchoTracker, ExternTracker, NccTracker, TraceTracker

ECHO_SCRIPT = r"""
import sys, json
size = None
center = None
for line in sys.stdin:
    msg = json.loads(line)
    t = msg["type"]
    if t == "init":
        b = msg["bbox"]
        size = (b[2] - b[0], b[3] - b[1])
        center = ((b[0] + b[2]) / 2, (b[1] + b[3]) / 2)
        print(json.dumps({"type": "ready"}), flush=True)
    elif t == "frame":
        sc = msg["search_center"]
        if sc is not None:
            center = (sc[0], sc[1])
        bbox = [center[0] - size[0] / 2, center[1] - size[1] / 2,
                center[0] + size[0] / 2, center[1] + size[1] / 2]
        print(json.dumps({"type": "result", "index": msg["index"], "bbox": bbox,
                          "score": 1.0, "pmf": None}), flush=True)
    else:
        break
"""


def textured(seed=0, w=160, h=120, index=0):
    seq, _ = generate_synthetic(SynthSpec(width=w, height=h, n_frames=1), seed=seed)
    return Frame(seq.frame(0).pixels, index=index, timestamp=index / 30.0)


def rolled(frame: Frame, dx: int, dy: int, index=1) -> Frame:
    return Frame(np.roll(frame.pixels, (dy, dx), axis=(0, 1)), index=index, timestamp=index / 30.0)


class TestNccInitialize:
    def test_full_frame_template(self):
        f = textured()
        t = NccTracker()
        t.initialize(f, BBox(0, 0, f.width, f.height))
        assert t._template.shape == (f.height, f.width)

    def test_tiny_box_rejected(self):
        f = textured()
        with pytest.raises(BoxOutOfFrame):
            NccTracker().initialize(f, BBox(10, 10, 11, 11))

    def test_partially_outside_rejected(self):
        f = textured()
        with pytest.raises(BoxOutOfFrame):
            NccTracker().initialize(f, BBox(-5, 10, 30, 40))


class TestNccProcess:
    def test_same_frame_perfect_match(self):
        f = textured(3)
        box = BBox(40, 30, 72, 54)
        t = NccTracker()
        t.initialize(f, box)
        out = t.process(f, box.center)
        assert out.bbox.as_tuple() == box.as_tuple()
        assert out.score == pytest.approx(1.0, abs=1e-9)

    def test_translation_recovered(self):
        f = textured(5)
        box = BBox(60, 45, 92, 69)
        t = NccTracker()
        t.initialize(f, box)
        out = t.process(rolled(f, 7, 3), None)
        assert out.bbox.x_tl == box.x_tl + 7
        assert out.bbox.y_tl == box.y_tl + 3

    def test_translation_consistency(self):
        # shifting content and search center by integers shifts the output
        f = textured(7)
        box = BBox(48, 40, 80, 64)
        outs = []
        for dx, dy in ((0, 0), (5, 2), (11, -6)):
            t = NccTracker()
            t.initialize(f, box)
            c = box.center
            out = t.process(rolled(f, dx, dy), (c[0] + dx, c[1] + dy))
            outs.append((out.bbox.x_tl - dx, out.bbox.y_tl - dy, out.score))
        assert outs[0] == outs[1] == outs[2]

    def test_noise_window_scores_low(self):
        f = textured(9)
        box = BBox(40, 30, 64, 54)
        scores = []
        for k in range(100):
            t = NccTracker()
            t.initialize(f, box)
            rng = np.random.default_rng(1000 + k)
            noise = Frame(rng.random(f.pixels.shape), index=1, timestamp=0.0)
            scores.append(t.process(noise, box.center).score)
        assert max(scores) < 0.75

    def test_pmf_argmax_matches_bbox(self):
        f = textured(11)
        box = BBox(60, 45, 92, 69)
        t = NccTracker()
        t.initialize(f, box)
        out = t.process(rolled(f, 6, -4), None)
        pmf = out.pmf
        assert pmf is not None
        # window origin back-computed from the placement geometry
        kx = int(np.argmax(pmf.x_tl.bins))
        ky = int(np.argmax(pmf.y_tl.bins))
        tw = 92 - 60
        sw = int(round(tw * 4.0))
        x0 = int(round(box.center[0] - sw / 2))
        th = 69 - 45
        sh = int(round(th * 4.0))
        y0 = int(round(box.center[1] - sh / 2))
        assert abs((x0 + kx) - out.bbox.x_tl) <= 1.0
        assert abs((y0 + ky) - out.bbox.y_tl) <= 1.0

    def test_search_window_empty(self):
        f = textured(13)
        box = BBox(40, 30, 72, 54)
        t = NccTracker()
        t.initialize(f, box)
        with pytest.raises(SearchWindowEmpty):
            t.process(f, (5000.0, 5000.0))

    def test_deterministic(self):
        f = textured(15)
        box = BBox(40, 30, 72, 54)
        shifted = rolled(f, 4, 4)
        a = NccTracker()
        a.initialize(f, box)
        b = NccTracker()
        b.initialize(f, box)
        oa = a.process(shifted, None)
        ob = b.process(shifted, None)
        assert oa.bbox.as_tuple() == ob.bbox.as_tuple()
        assert oa.score == ob.score

    def test_scale_search_prefers_unit_scale_on_same_frame(self):
        from uavtrack.trackers import NccConfig

        f = textured(17)
        box = BBox(40, 30, 72, 54)
        plain = NccTracker()
        plain.initialize(f, box)
        scaled = NccTracker(NccConfig(scale_search=True))
        scaled.initialize(f, box)
        oa = plain.process(f, box.center)
        ob = scaled.process(f, box.center)
        assert ob.bbox.as_tuple() == oa.bbox.as_tuple()
        assert ob.score == pytest.approx(1.0, abs=1e-9)


class TestTraceTracker:
    def _write(self, tmp_path, records):
        p = tmp_path / "trace.ndjson"
        p.write_text("\n".join(json.dumps(r) for r in records) + "\n")
        return p

    def test_replay_verbatim(self, tmp_path):
        p = self._write(
            tmp_path, [{"index": 0, "bbox": [10, 20, 40, 60], "score": 0.9, "pmf": None}]
        )
        t = TraceTracker(p)
        f = textured(1)
        t.initialize(f, BBox(0, 0, 10, 10))
        out = t.process(f, None)
        assert out.bbox.as_tuple() == (10, 20, 40, 60)
        assert out.score == 0.9

    def test_missing_frame(self, tmp_path):
        p = self._write(tmp_path, [{"index": 0, "bbox": [10, 20, 40, 60], "score": 0.9}])
        t = TraceTracker(p)
        f = textured(1, index=5)
        with pytest.raises(MissingFrame):
            t.process(f, None)

    def test_pmf_reconstructed_and_renormalized(self, tmp_path):
        w = (np.ones(96) * (1.0 + 3e-7)).tolist()  # slightly off-unit sum
        rec = {
            "index": 0,
            "bbox": [1, 2, 3, 4],
            "score": 0.5,
            "pmf": {"x_tl": w, "y_tl": w, "x_br": w, "y_br": w},
        }
        t = TraceTracker(self._write(tmp_path, [rec]))
        out = t.process(textured(1), None)
        assert out.pmf is not None
        assert out.pmf.n == 96
        assert abs(out.pmf.x_tl.bins.sum() - 1.0) <= 1e-6

    def test_replay_independent_of_order(self, tmp_path):
        p = self._write(
            tmp_path,
            [
                {"index": i, "bbox": [i, i, i + 10, i + 10], "score": 0.5}
                for i in range(5)
            ],
        )
        t = TraceTracker(p)
        f4 = textured(1, index=4)
        f1 = textured(1, index=1)
        assert t.process(f4, None).bbox.x_tl == 4
        assert t.process(f1, None).bbox.x_tl == 1
        assert t.process(f4, None).bbox.x_tl == 4


def _script_cmd(tmp_path, body: str) -> str:
    script = tmp_path / "responder.py"
    script.write_text(body)
    return f"{sys.executable} {script}"


class TestExternTracker:
    def test_echo_conformance(self, tmp_path):
        cmd = _script_cmd(tmp_path, ECHO_SCRIPT)
        ext = ExternTracker(cmd, timeout=10.0)
        ref = EchoTracker()
        f = textured(1)
        box = BBox(20.0, 15.0, 52.0, 39.0)
        ext.initialize(f, box)
        ref.initialize(f, box)
        try:
            for i, sc in enumerate([(30.5, 22.25), None, (77.125, 41.0)]):
                fi = textured(1, index=i + 1)
                got = ext.process(fi, sc)
                want = ref.process(fi, sc)
                assert got.bbox.as_tuple() == want.bbox.as_tuple()
                assert got.score == want.score == 1.0
        finally:
            ext.close()

    def test_missing_bbox_key(self, tmp_path):
        body = (
            "import sys, json\n"
            "for line in sys.stdin:\n"
            "    m = json.loads(line)\n"
            "    if m['type'] == 'init':\n"
            "        print(json.dumps({'type': 'ready'}), flush=True)\n"
            "    elif m['type'] == 'frame':\n"
            "        print(json.dumps({'type': 'result', 'index': m['index'], 'score': 0.5}), flush=True)\n"
            "    else:\n"
            "        break\n"
        )
        ext = ExternTracker(_script_cmd(tmp_path, body), timeout=10.0)
        f = textured(1)
        ext.initialize(f, BBox(0, 0, 10, 10))
        try:
            with pytest.raises(ProtocolError):
                ext.process(textured(1, index=1), None)
        finally:
            ext.close()

    def test_out_of_range_score(self, tmp_path):
        body = (
            "import sys, json\n"
            "for line in sys.stdin:\n"
            "    m = json.loads(line)\n"
            "    if m['type'] == 'init':\n"
            "        print(json.dumps({'type': 'ready'}), flush=True)\n"
            "    elif m['type'] == 'frame':\n"
            "        print(json.dumps({'type': 'result', 'index': m['index'],"
            " 'bbox': [0, 0, 5, 5], 'score': 1.5}), flush=True)\n"
            "    else:\n"
            "        break\n"
        )
        ext = ExternTracker(_script_cmd(tmp_path, body), timeout=10.0)
        ext.initialize(textured(1), BBox(0, 0, 10, 10))
        try:
            with pytest.raises(ProtocolError):
                ext.process(textured(1, index=1), None)
        finally:
            ext.close()

    def test_timeout(self, tmp_path):
        body = (
            "import sys, json, time\n"
            "line = sys.stdin.readline()\n"
            "print(json.dumps({'type': 'ready'}), flush=True)\n"
            "sys.stdin.readline()\n"
            "time.sleep(30)\n"
        )
        ext = ExternTracker(_script_cmd(tmp_path, body), timeout=0.5)
        ext.initialize(textured(1), BBox(0, 0, 10, 10))
        try:
            with pytest.raises(TrackerTimeout):
                ext.process(textured(1, index=1), None)
        finally:
            ext._chan.proc.kill()

    def test_process_exited(self, tmp_path):
        body = "import sys\nsys.exit(3)\n"
        ext = ExternTracker(_script_cmd(tmp_path, body), timeout=2.0)
        with pytest.raises(ProcessExited):
            ext.initialize(textured(1), BBox(0, 0, 10, 10))


class TestExternTcp:
    def test_tcp_transport(self):
        import json as jsonmod
        import socket
        import threading

        srv = socket.create_server(("127.0.0.1", 0))
        port = srv.getsockname()[1]

        def serve():
            conn, _ = srv.accept()
            fh = conn.makefile("rw", encoding="utf-8", newline="\n")
            size = center = None
            for line in fh:
                msg = jsonmod.loads(line)
                if msg["type"] == "init":
                    b = msg["bbox"]
                    size = (b[2] - b[0], b[3] - b[1])
                    center = ((b[0] + b[2]) / 2, (b[1] + b[3]) / 2)
                    fh.write(jsonmod.dumps({"type": "ready"}) + "\n")
                    fh.flush()
                elif msg["type"] == "frame":
                    if msg["search_center"] is not None:
                        center = tuple(msg["search_center"])
                    bbox = [center[0] - size[0] / 2, center[1] - size[1] / 2,
                            center[0] + size[0] / 2, center[1] + size[1] / 2]
                    fh.write(jsonmod.dumps({"type": "result", "index": msg["index"],
                                            "bbox": bbox, "score": 1.0, "pmf": None}) + "\n")
                    fh.flush()
                else:
                    break
            conn.close()

        thread = threading.Thread(target=serve, daemon=True)
        thread.start()
        ext = ExternTracker(f"127.0.0.1:{port}", timeout=5.0)
        try:
            ext.initialize(textured(1), BBox(10.0, 10.0, 30.0, 26.0))
            out = ext.process(textured(1, index=1), (50.0, 40.0))
            assert out.bbox.as_tuple() == (40.0, 32.0, 60.0, 48.0)
        finally:
            ext.close()
            srv.close()


class TestEchoTracker:
    def test_follows_search_center(self):
        t = EchoTracker()
        t.initialize(textured(1), BBox(10, 10, 30, 26))
        out = t.process(textured(1, index=1), (50.0, 40.0))
        assert out.bbox.as_tuple() == (40.0, 32.0, 60.0, 48.0)

    def test_keeps_center_without_feedback(self):
        t = EchoTracker()
        t.initialize(textured(1), BBox(10, 10, 30, 26))
        t.process(textured(1, index=1), (50.0, 40.0))
        out = t.process(textured(1, index=2), None)
        assert out.bbox.as_tuple() == (40.0, 32.0, 60.0, 48.0)
