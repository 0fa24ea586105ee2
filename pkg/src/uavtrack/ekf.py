"""Trajectory-estimation filter over a 15-dimensional state.

State layout (indices): top-left corner [0:2], bottom-right corner [2:4],
homography entries h11..h33 row-major [4:13], box-center velocity [13:15].

The prediction projects a constant-velocity box model through the current
homography estimate: each corner is warped by the projective map and advected
by the velocity pushed through the map's point Jacobian at the box center;
the homography states are held constant; the velocity itself is propagated
through the same Jacobian. Tracker boxes and ego-motion homographies arrive
asynchronously and update disjoint slices of the state (partial updates).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .egomotion import EgoMeasurement
from .errors import GaugeSingular, PointAtInfinity
from .geom import BBox

TL = slice(0, 2)
BR = slice(2, 4)
HOM = slice(4, 13)
VEL = slice(13, 15)

_MIN_EXTENT = 1e-9


@dataclass(frozen=True)
class EkfConfig:
    """Noise configuration. q_diag is the per-tick process variance at the
    nominal camera rate; predict scales it by dt * camera_hz."""

    p0_diag: tuple = (10.0,) * 4 + (1e-4,) * 8 + (1e-6,) + (100.0,) * 2
    q_diag: tuple = (1.0,) * 4 + (1e-6,) * 9 + (25.0,) * 2
    r_bb_diag: tuple = (4.0,) * 4
    r_h_diag: tuple = (1e-6,) * 9
    camera_hz: float = 30.0

    def __post_init__(self):
        for name, want in (("p0_diag", 15), ("q_diag", 15), ("r_bb_diag", 4), ("r_h_diag", 9)):
            v = getattr(self, name)
            if len(v) != want:
                raise ValueError(f"{name} must have {want} entries")
            if any(x < 0 for x in v):
                raise ValueError(f"{name} entries must be nonnegative")
        if self.camera_hz <= 0:
            raise ValueError("camera_hz must be positive")


@dataclass(frozen=True)
class TrackerMeasurement:
    bbox: BBox
    score: float
    frame_index: int


@dataclass(frozen=True)
class EkfState:
    """Immutable filter state snapshot (mean x, covariance p, logical tick)."""

    x: np.ndarray
    p: np.ndarray
    tick: int = 0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64).reshape(15).copy()
        p = np.asarray(self.p, dtype=np.float64).reshape(15, 15)
        if np.max(np.abs(p - p.T)) > 1e-9:
            raise ValueError("covariance must be symmetric")
        p = (p + p.T) / 2.0
        x, p = _sort_corners(x, p)
        hm = x[HOM].reshape(3, 3)
        if abs(np.linalg.det(hm)) <= 1e-12:
            raise ValueError("homography state is singular")
        x.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)

    @property
    def x_tl(self) -> np.ndarray:
        return self.x[TL]

    @property
    def x_br(self) -> np.ndarray:
        return self.x[BR]

    @property
    def x_h(self) -> np.ndarray:
        return self.x[HOM]

    @property
    def x_v(self) -> np.ndarray:
        return self.x[VEL]


def _sort_corners(x: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Re-sort corner coordinates so tl < br, permuting covariance to match."""
    p = np.array(p)
    for lo, hi in ((0, 2), (1, 3)):
        if x[lo] > x[hi]:
            x[[lo, hi]] = x[[hi, lo]]
            p[[lo, hi], :] = p[[hi, lo], :]
            p[:, [lo, hi]] = p[:, [hi, lo]]
        if x[hi] - x[lo] < _MIN_EXTENT:
            x[hi] = x[lo] + _MIN_EXTENT
    return x, p


def _warp(m: np.ndarray, pt: np.ndarray) -> np.ndarray:
    w = m[2, 0] * pt[0] + m[2, 1] * pt[1] + m[2, 2]
    if abs(w) <= 1e-9:
        raise PointAtInfinity(f"state point {pt} crosses the horizon")
    return np.array(
        [
            (m[0, 0] * pt[0] + m[0, 1] * pt[1] + m[0, 2]) / w,
            (m[1, 0] * pt[0] + m[1, 1] * pt[1] + m[1, 2]) / w,
        ]
    )


def _point_jacobian(m: np.ndarray, pt: np.ndarray) -> np.ndarray:
    w = m[2, 0] * pt[0] + m[2, 1] * pt[1] + m[2, 2]
    if abs(w) <= 1e-9:
        raise PointAtInfinity(f"state point {pt} crosses the horizon")
    g = _warp(m, pt)
    return np.array(
        [
            [(m[0, 0] - g[0] * m[2, 0]) / w, (m[0, 1] - g[0] * m[2, 1]) / w],
            [(m[1, 0] - g[1] * m[2, 0]) / w, (m[1, 1] - g[1] * m[2, 1]) / w],
        ]
    )


def _dh_warp(m: np.ndarray, pt: np.ndarray) -> np.ndarray:
    """2x9 derivative of the warped point with respect to the h entries."""
    x, y = pt
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    g = _warp(m, pt)
    d = np.zeros((2, 9))
    d[0, 0] = x / w
    d[0, 1] = y / w
    d[0, 2] = 1.0 / w
    d[0, 6] = -g[0] * x / w
    d[0, 7] = -g[0] * y / w
    d[0, 8] = -g[0] / w
    d[1, 3] = x / w
    d[1, 4] = y / w
    d[1, 5] = 1.0 / w
    d[1, 6] = -g[1] * x / w
    d[1, 7] = -g[1] * y / w
    d[1, 8] = -g[1] / w
    return d


def init(bbox0: BBox, cfg: EkfConfig) -> EkfState:
    """Start from the given box, identity homography, and zero velocity."""
    x = np.zeros(15)
    x[TL] = (bbox0.x_tl, bbox0.y_tl)
    x[BR] = (bbox0.x_br, bbox0.y_br)
    x[HOM] = np.eye(3).reshape(9)
    return EkfState(x=x, p=np.diag(cfg.p0_diag), tick=0)


def _mean_map(x: np.ndarray, dt: float) -> np.ndarray:
    m = x[HOM].reshape(3, 3)
    c = (x[TL] + x[BR]) / 2.0
    jc = _point_jacobian(m, c)
    adv = jc @ x[VEL]
    out = np.empty(15)
    out[TL] = _warp(m, x[TL]) + adv * dt
    out[BR] = _warp(m, x[BR]) + adv * dt
    out[HOM] = x[HOM]
    out[VEL] = adv
    return out


def transition_jacobian(s: EkfState, dt: float) -> np.ndarray:
    """Analytic 15x15 Jacobian of the prediction mean map.

    With w(p) = h31 px + h32 py + h33, r = (h31, h32), a = J(c) v and
    sv = r . v, the derivative of the advection term with respect to the
    center is T = -(sv J(c) + a r^T) / w(c); its derivative with respect to
    the h entries follows from the quotient rule on (A v - g(c) sv) / w(c).
    """
    x = s.x
    m = x[HOM].reshape(3, 3)
    u = x[TL]
    b = x[BR]
    v = x[VEL]
    c = (u + b) / 2.0

    jc = _point_jacobian(m, c)
    ju = _point_jacobian(m, u)
    jb = _point_jacobian(m, b)
    wc = m[2, 0] * c[0] + m[2, 1] * c[1] + m[2, 2]
    gc = _warp(m, c)
    a = jc @ v
    sv = m[2, 0] * v[0] + m[2, 1] * v[1]
    r = np.array([m[2, 0], m[2, 1]])

    t_c = -(sv * jc + np.outer(a, r)) / wc

    # d(J(c) v)/dh, 2x9
    mat = np.zeros((2, 9))
    mat[0, 0], mat[0, 1] = v[0], v[1]
    mat[1, 3], mat[1, 4] = v[0], v[1]
    ds_dh = np.zeros(9)
    ds_dh[6], ds_dh[7] = v[0], v[1]
    dw_dh = np.zeros(9)
    dw_dh[6], dw_dh[7], dw_dh[8] = c[0], c[1], 1.0
    dh_a = (mat - sv * _dh_warp(m, c) - np.outer(gc, ds_dh) - np.outer(a, dw_dh)) / wc

    f = np.zeros((15, 15))
    f[TL, TL] = ju + 0.5 * dt * t_c
    f[TL, BR] = 0.5 * dt * t_c
    f[TL, HOM] = _dh_warp(m, u) + dt * dh_a
    f[TL, VEL] = dt * jc
    f[BR, TL] = 0.5 * dt * t_c
    f[BR, BR] = jb + 0.5 * dt * t_c
    f[BR, HOM] = _dh_warp(m, b) + dt * dh_a
    f[BR, VEL] = dt * jc
    f[HOM, HOM] = np.eye(9)
    f[VEL, TL] = 0.5 * t_c
    f[VEL, BR] = 0.5 * t_c
    f[VEL, HOM] = dh_a
    f[VEL, VEL] = jc
    return f


def predict(s: EkfState, dt: float, cfg: EkfConfig) -> EkfState:
    """Advance the state mean and covariance by dt seconds."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    f = transition_jacobian(s, dt)
    x = _mean_map(s.x, dt)
    q = np.diag(cfg.q_diag) * (dt * cfg.camera_hz)
    p = f @ s.p @ f.T + q
    return EkfState(x=x, p=(p + p.T) / 2.0, tick=s.tick + 1)


def _kf_update(
    x: np.ndarray, p: np.ndarray, z: np.ndarray, idx: np.ndarray, r_diag: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Joseph-form linear update on the state slice idx."""
    k_dim = len(idx)
    innov = z - x[idx]
    s_mat = p[np.ix_(idx, idx)] + np.diag(r_diag)
    gain = np.linalg.solve(s_mat, p[idx, :]).T  # (15, k)
    x_new = x + gain @ innov
    ikh = np.eye(15)
    ikh[:, idx] -= gain
    p_new = ikh @ p @ ikh.T + gain @ np.diag(r_diag) @ gain.T
    return x_new, (p_new + p_new.T) / 2.0


def update_tracker(s: EkfState, m: TrackerMeasurement, cfg: EkfConfig) -> EkfState:
    """Partial update on the four corner states from a tracker box."""
    z = np.array([m.bbox.x_tl, m.bbox.y_tl, m.bbox.x_br, m.bbox.y_br])
    x, p = _kf_update(s.x, s.p, z, np.arange(0, 4), np.asarray(cfg.r_bb_diag))
    return EkfState(x=x, p=p, tick=s.tick)


def update_ego(s: EkfState, m: EgoMeasurement, cfg: EkfConfig) -> EkfState:
    """Partial update on the nine homography states from an ego measurement.

    The measurement must already be h33-normalized. The posterior h block is
    renormalized to the h33 = 1 gauge with a first-order covariance rescale.
    """
    z = m.h.flat
    x, p = _kf_update(s.x, s.p, z, np.arange(4, 13), np.asarray(cfg.r_h_diag))
    lam = x[12]
    if abs(lam) <= 1e-9:
        raise GaugeSingular("posterior h33 collapsed to zero")
    x = x.copy()
    x[HOM] = x[HOM] / lam
    p = p.copy()
    p[HOM, :] /= lam
    p[:, HOM] /= lam
    return EkfState(x=x, p=p, tick=s.tick)


def current_bbox(s: EkfState) -> BBox:
    return BBox(s.x[0], s.x[1], s.x[2], s.x[3])


def search_center(s: EkfState) -> tuple[float, float]:
    return (float((s.x[0] + s.x[2]) / 2.0), float((s.x[1] + s.x[3]) / 2.0))
