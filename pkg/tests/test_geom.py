import numpy as np
import pytest

from uavtrack.errors import GaugeSingular, PointAtInfinity
from uavtrack.geom import BBox, Frame, Homography, Pmf, Pmf4, iou, jacobian_at, normalize_h33, warp_point


def random_homography(rng):
    """Near-identity projective map with mild perspective terms."""
    m = np.eye(3)
    m[:2, :2] += rng.normal(0, 0.05, (2, 2))
    m[:2, 2] = rng.normal(0, 10.0, 2)
    m[2, :2] = rng.normal(0, 1e-4, 2)
    return normalize_h33(m)


def fd_jacobian(h, p, step=1e-5):
    """Central finite differences of the warp, the independent oracle."""
    j = np.zeros((2, 2))
    for k in range(2):
        lo = list(p)
        hi = list(p)
        lo[k] -= step
        hi[k] += step
        flo = warp_point(h, lo)
        fhi = warp_point(h, hi)
        j[0, k] = (fhi[0] - flo[0]) / (2 * step)
        j[1, k] = (fhi[1] - flo[1]) / (2 * step)
    return j


class TestIou:
    def test_identity(self):
        a = BBox(3.0, 4.0, 10.0, 12.0)
        assert iou(a, a) == 1.0

    def test_disjoint(self):
        assert iou(BBox(0, 0, 5, 5), BBox(10, 10, 20, 20)) == 0.0

    def test_half_overlap(self):
        # direct area arithmetic: inter 50, union 150
        a = BBox(0, 0, 10, 10)
        b = BBox(5, 0, 15, 10)
        assert iou(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            x0, y0 = rng.uniform(0, 50, 2)
            a = BBox(x0, y0, x0 + rng.uniform(1, 30), y0 + rng.uniform(1, 30))
            x1, y1 = rng.uniform(0, 50, 2)
            b = BBox(x1, y1, x1 + rng.uniform(1, 30), y1 + rng.uniform(1, 30))
            v = iou(a, b)
            assert v == iou(b, a)
            assert 0.0 <= v <= 1.0
            assert (v == 1.0) == (a == b)


class TestWarp:
    def test_identity(self):
        assert warp_point(Homography.identity(), (10, 10)) == (10.0, 10.0)

    def test_translation(self):
        h = Homography(np.array([[1, 0, 5], [0, 1, -3], [0, 0, 1]], dtype=float))
        assert warp_point(h, (10, 10)) == (15.0, 7.0)

    def test_projective_hand_value(self):
        m = np.eye(3)
        m[2, 0] = 0.001
        h = Homography(m)
        x, y = warp_point(h, (100, 0))
        assert x == pytest.approx(100 / 1.1, abs=1e-9)
        assert y == 0.0

    def test_point_at_infinity(self):
        m = np.eye(3)
        m[2, 0] = -0.01
        h = Homography(m)
        with pytest.raises(PointAtInfinity):
            warp_point(h, (100.0, 0.0))  # w = 1 - 1 = 0

    def test_inverse_roundtrip(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            h = random_homography(rng)
            p = rng.uniform(0, 300, 2)
            q = warp_point(h, p)
            back = warp_point(h.inverse(), q)
            assert np.allclose(back, p, atol=1e-6)

    def test_projective_scale_invariance(self):
        rng = np.random.default_rng(13)
        for lam in (0.5, -2.0, 7.3):
            h = random_homography(rng)
            hs = normalize_h33(lam * h.m)
            p = rng.uniform(0, 200, 2)
            assert np.allclose(warp_point(hs, p), warp_point(h, p), atol=1e-9)


class TestJacobian:
    def test_identity(self):
        assert np.allclose(jacobian_at(Homography.identity(), (3, 4)), np.eye(2))

    def test_pure_scale(self):
        h = Homography(np.diag([2.5, 2.5, 1.0]))
        assert np.allclose(jacobian_at(h, (10, 20)), np.diag([2.5, 2.5]))

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        for _ in range(1000):
            h = random_homography(rng)
            p = rng.uniform(0, 400, 2)
            assert np.allclose(jacobian_at(h, p), fd_jacobian(h, p), atol=1e-6)


class TestNormalize:
    def test_identity(self):
        assert np.allclose(normalize_h33(np.eye(3)).m, np.eye(3))

    def test_scale_invariance(self):
        assert np.allclose(normalize_h33(2 * np.eye(3)).m, np.eye(3))

    def test_zero_gauge(self):
        m = np.eye(3)
        m[2, 2] = 0.0
        with pytest.raises(GaugeSingular):
            normalize_h33(m)


class TestTypes:
    def test_frame_invariants(self):
        f = Frame(np.zeros((4, 6)), index=3, timestamp=0.1)
        assert (f.width, f.height) == (6, 4)
        with pytest.raises(ValueError):
            Frame(np.full((4, 4), 1.5), index=0, timestamp=0.0)
        with pytest.raises(ValueError):
            f.pixels[0, 0] = 0.5

    def test_bbox_invariants(self):
        with pytest.raises(ValueError):
            BBox(5, 0, 5, 10)
        with pytest.raises(ValueError):
            BBox(0, 10, 5, 10)

    def test_pmf_invariants(self):
        with pytest.raises(ValueError):
            Pmf(np.array([0.5, 0.4]))
        with pytest.raises(ValueError):
            Pmf(np.array([1.5, -0.5]))
        p = Pmf.from_weights([2.0, 2.0])
        assert np.allclose(p.bins, [0.5, 0.5])

    def test_pmf4_same_n(self):
        a = Pmf.from_weights(np.ones(8))
        b = Pmf.from_weights(np.ones(9))
        with pytest.raises(ValueError):
            Pmf4(a, a, a, b)

    def test_homography_wants_normalized(self):
        with pytest.raises(ValueError):
            Homography(2 * np.eye(3))
        with pytest.raises(ValueError):
            Homography(np.array([[1, 0, 0], [2, 0, 0], [0, 0, 1.0]]))
