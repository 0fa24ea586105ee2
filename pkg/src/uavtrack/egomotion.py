"""Inter-frame camera motion from grid-sampled pyramidal flow plus robust fitting.

The estimator works in four stages: build box-filter image pyramids, track a
regular grid of points coarse-to-fine with iterative least-squares flow,
fit a homography to the surviving correspondences with a seeded RANSAC over
4-point minimal samples (normalized DLT refit on the consensus set), and
attach a first-order covariance of the 8 free homography parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateConfiguration,
    GridTooDense,
    InsufficientCorrespondences,
    RankDeficient,
    TooSmall,
)
from .geom import Frame, Homography, normalize_h33
from .imageops import gather_patches


@dataclass(frozen=True)
class EgoConfig:
    grid_rows: int = 16
    grid_cols: int = 16
    pyramid_levels: int = 3
    lk_window: int = 21
    lk_max_iters: int = 30
    lk_epsilon: float = 0.01
    min_eigenvalue: float = 1e-4
    ransac_threshold: float = 3.0
    ransac_max_iters: int = 2000
    ransac_confidence: float = 0.995
    noise_sigma: float = 1.0

    def __post_init__(self):
        numeric = (
            self.grid_rows, self.grid_cols, self.pyramid_levels, self.lk_window,
            self.lk_max_iters, self.lk_epsilon, self.min_eigenvalue,
            self.ransac_threshold, self.ransac_max_iters, self.noise_sigma,
        )
        if any(v <= 0 for v in numeric):
            raise ValueError("all EgoConfig values must be positive")
        if self.lk_window % 2 != 1 or self.lk_window < 3:
            raise ValueError("lk_window must be odd and >= 3")
        if not 0.0 < self.ransac_confidence < 1.0:
            raise ValueError("ransac_confidence must be in (0, 1)")


@dataclass(frozen=True)
class Correspondence:
    """A tracked point pair between consecutive frames."""

    p: tuple[float, float]
    p_prime: tuple[float, float]
    valid: bool

    def __post_init__(self):
        if self.valid and not all(map(math.isfinite, (*self.p, *self.p_prime))):
            raise ValueError("valid correspondence must have finite points")


@dataclass(frozen=True)
class EgoMeasurement:
    """Estimated inter-frame homography with its parameter covariance."""

    h: Homography
    cov: np.ndarray
    inlier_count: int
    frame_index: int

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=np.float64).reshape(9, 9)
        if np.max(np.abs(cov - cov.T)) > 1e-9:
            raise ValueError("covariance must be symmetric")
        if np.min(np.diag(cov)) < 0.0:
            raise ValueError("covariance diagonal must be nonnegative")
        if self.inlier_count < 4:
            raise ValueError("a homography needs at least 4 inliers")
        cov.setflags(write=False)
        object.__setattr__(self, "cov", cov)


def build_pyramid(frame: Frame, levels: int) -> list[Frame]:
    """Box-filter pyramid: level l+1 halves level l with 2x2 averaging."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    w, h = frame.width, frame.height
    if (w >> (levels - 1)) < 8 or (h >> (levels - 1)) < 8:
        raise TooSmall(f"{w}x{h} image cannot support {levels} pyramid levels")
    out = [frame]
    px = frame.pixels
    for _ in range(levels - 1):
        he, we = (px.shape[0] // 2) * 2, (px.shape[1] // 2) * 2
        e = px[:he, :we]
        px = (e[0::2, 0::2] + e[0::2, 1::2] + e[1::2, 0::2] + e[1::2, 1::2]) / 4.0
        out.append(Frame(px, index=frame.index, timestamp=frame.timestamp))
    return out


def sample_grid(width: int, height: int, rows: int, cols: int) -> np.ndarray:
    """Cell-center points of a rows x cols partition, as an (n, 2) array.

    Spacing below 2 px is refused; a degenerate point count (< 4) is legal
    here and surfaces downstream when the homography fit needs samples.
    """
    if rows < 1 or cols < 1:
        raise GridTooDense("grid needs at least one row and column")
    if width / cols < 2.0 or height / rows < 2.0:
        raise GridTooDense(f"{rows}x{cols} grid too dense for {width}x{height}")
    xs = (np.arange(cols) + 0.5) * (width / cols)
    ys = (np.arange(rows) + 0.5) * (height / rows)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def lk_flow(
    prev_pyr: list[Frame], next_pyr: list[Frame], pts: np.ndarray, cfg: EgoConfig
) -> list[Correspondence]:
    """Track pts from the previous to the next frame, coarse to fine.

    Each level solves iterative normal equations over an lk_window^2 patch
    with central-difference gradients from the previous image. A point is
    invalidated when its structure tensor is too weak at the finest level
    (area-normalized minimum eigenvalue below cfg.min_eigenvalue) or when it
    tracks outside the image.
    """
    if prev_pyr[0].pixels.shape != next_pyr[0].pixels.shape:
        raise ValueError("pyramids must come from same-size frames")
    pts = np.asarray(pts, dtype=np.float64)
    n = pts.shape[0]
    r = cfg.lk_window // 2
    area = float(cfg.lk_window * cfg.lk_window)

    def _window_inside(img: np.ndarray, centers: np.ndarray) -> np.ndarray:
        hh, ww = img.shape
        rad = r + 1  # gradient support
        return (
            (centers[:, 0] >= rad)
            & (centers[:, 0] <= ww - 1 - rad)
            & (centers[:, 1] >= rad)
            & (centers[:, 1] <= hh - 1 - rad)
        )

    valid = np.ones(n, dtype=bool)
    g = np.zeros((n, 2))
    for level in range(len(prev_pyr) - 1, -1, -1):
        img_p = prev_pyr[level].pixels
        img_n = next_pyr[level].pixels
        p_l = pts / (2.0**level)
        inside = _window_inside(img_p, p_l)

        ext = gather_patches(img_p, p_l, r + 1)
        patch = ext[:, 1:-1, 1:-1]
        ix = (ext[:, 1:-1, 2:] - ext[:, 1:-1, :-2]) / 2.0
        iy = (ext[:, 2:, 1:-1] - ext[:, :-2, 1:-1]) / 2.0
        gxx = np.einsum("nij,nij->n", ix, ix)
        gxy = np.einsum("nij,nij->n", ix, iy)
        gyy = np.einsum("nij,nij->n", iy, iy)
        det = gxx * gyy - gxy * gxy
        trace = gxx + gyy
        min_eig = (trace - np.sqrt(np.maximum(trace * trace - 4.0 * det, 0.0))) / 2.0
        solvable = det > 1e-14
        if level == 0:
            # truncated windows give biased flow; weak texture gives none
            valid &= inside
            valid &= (min_eig / area) >= cfg.min_eigenvalue

        v = np.zeros((n, 2))
        active = solvable & inside
        for _ in range(cfg.lk_max_iters):
            if not active.any():
                break
            idx = np.flatnonzero(active)
            q = p_l[idx] + g[idx] + v[idx]
            ok = _window_inside(img_n, q)
            active[idx[~ok]] = False  # freeze points whose window left the image
            idx = idx[ok]
            if idx.size == 0:
                break
            q = q[ok]
            npatch = gather_patches(img_n, q, r)
            di = patch[idx] - npatch
            bx = np.einsum("nij,nij->n", di, ix[idx])
            by = np.einsum("nij,nij->n", di, iy[idx])
            dvx = (gyy[idx] * bx - gxy[idx] * by) / det[idx]
            dvy = (-gxy[idx] * bx + gxx[idx] * by) / det[idx]
            v[idx, 0] += dvx
            v[idx, 1] += dvy
            active[idx] = np.hypot(dvx, dvy) >= cfg.lk_epsilon
        g = g + v
        if level > 0:
            g *= 2.0

    trailed = pts + g
    h0, w0 = prev_pyr[0].pixels.shape
    inb = (
        np.isfinite(trailed).all(axis=1)
        & (trailed[:, 0] >= 0.0)
        & (trailed[:, 0] <= w0 - 1.0)
        & (trailed[:, 1] >= 0.0)
        & (trailed[:, 1] <= h0 - 1.0)
    )
    valid &= inb
    return [
        Correspondence(
            p=(float(pts[i, 0]), float(pts[i, 1])),
            p_prime=(float(trailed[i, 0]), float(trailed[i, 1])) if valid[i] else (0.0, 0.0),
            valid=bool(valid[i]),
        )
        for i in range(n)
    ]


def _hartley_normalize(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Translate to the centroid and scale mean distance to sqrt(2)."""
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2.0) / max(d, 1e-12)
    t = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    return (pts - c) * s, t


def _dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray | None:
    """Normalized direct linear transform; None for rank-deficient systems."""
    sn, ts = _hartley_normalize(src)
    dn, td = _hartley_normalize(dst)
    n = len(src)
    a = np.zeros((2 * n, 9))
    x, y = sn[:, 0], sn[:, 1]
    u, v = dn[:, 0], dn[:, 1]
    a[0::2] = np.c_[x, y, np.ones(n), np.zeros(n), np.zeros(n), np.zeros(n), -u * x, -u * y, -u]
    a[1::2] = np.c_[np.zeros(n), np.zeros(n), np.zeros(n), x, y, np.ones(n), -v * x, -v * y, -v]
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[7] <= sv[0] * 1e-9:
        return None
    _, _, vt = np.linalg.svd(a)
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ hn @ ts
    if abs(h[2, 2]) <= 1e-12:
        return None
    return h


def _reprojection_errors(h: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """One-way (previous -> next) reprojection distance per correspondence."""
    w = h[2, 0] * src[:, 0] + h[2, 1] * src[:, 1] + h[2, 2]
    w = np.where(np.abs(w) < 1e-12, np.nan, w)
    px = (h[0, 0] * src[:, 0] + h[0, 1] * src[:, 1] + h[0, 2]) / w
    py = (h[1, 0] * src[:, 0] + h[1, 1] * src[:, 1] + h[1, 2]) / w
    err = np.hypot(px - dst[:, 0], py - dst[:, 1])
    return np.where(np.isfinite(err), err, np.inf)


def corr_arrays(corrs: list[Correspondence]) -> tuple[np.ndarray, np.ndarray]:
    """Stack the valid correspondences into (src, dst) arrays."""
    kept = [c for c in corrs if c.valid]
    if not kept:
        return np.zeros((0, 2)), np.zeros((0, 2))
    src = np.array([c.p for c in kept])
    dst = np.array([c.p_prime for c in kept])
    return src, dst


def ransac_homography(
    corrs: list[Correspondence], cfg: EgoConfig, seed: int
) -> tuple[Homography, np.ndarray]:
    """Robust homography fit over the valid correspondences.

    Returns the consensus-refit homography (normalized DLT over the inliers
    of the best minimal hypothesis) and the boolean inlier mask over the
    valid correspondences. Deterministic for a fixed (corrs, cfg, seed).
    """
    src, dst = corr_arrays(corrs)
    n = len(src)
    if n < 4:
        raise InsufficientCorrespondences(f"need >= 4 valid correspondences, got {n}")
    rng = np.random.default_rng(seed)

    best_mask: np.ndarray | None = None
    best_count = 0
    needed = cfg.ransac_max_iters
    it = 0
    while it < min(needed, cfg.ransac_max_iters):
        it += 1
        idx = rng.choice(n, size=4, replace=False)
        h = _dlt(src[idx], dst[idx])
        if h is None:
            continue
        mask = _reprojection_errors(h, src, dst) < cfg.ransac_threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            ratio = count / n
            miss = 1.0 - ratio**4
            if miss <= 1e-12:
                needed = it
            else:
                needed = math.ceil(math.log(1.0 - cfg.ransac_confidence) / math.log(miss))
    if best_mask is None or best_count < 4:
        raise DegenerateConfiguration("no non-degenerate minimal sample found")

    h_ref = _dlt(src[best_mask], dst[best_mask])
    if h_ref is None:
        raise DegenerateConfiguration("inlier set is rank deficient")
    return normalize_h33(h_ref), best_mask


def homography_covariance(
    h: Homography, inliers: list[Correspondence], sigma: float
) -> np.ndarray:
    """First-order covariance of the homography parameters.

    J stacks the derivatives of each inlier's reprojection residual with
    respect to the 8 free entries (h33 fixed by the gauge); the result
    sigma^2 (J^T J)^{-1} is embedded into 9x9 with a zero h33 row/column.
    """
    src, dst = corr_arrays(inliers)
    if len(src) < 5:
        raise InsufficientCorrespondences("covariance needs >= 5 inliers")
    m = h.m
    x, y = src[:, 0], src[:, 1]
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    gx = (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w
    gy = (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w
    n = len(src)
    j = np.zeros((2 * n, 8))
    j[0::2, 0] = x / w
    j[0::2, 1] = y / w
    j[0::2, 2] = 1.0 / w
    j[0::2, 6] = -gx * x / w
    j[0::2, 7] = -gx * y / w
    j[1::2, 3] = x / w
    j[1::2, 4] = y / w
    j[1::2, 5] = 1.0 / w
    j[1::2, 6] = -gy * x / w
    j[1::2, 7] = -gy * y / w
    jtj = j.T @ j
    # Jacobi scaling: the raw columns span orders of magnitude (1/w vs x*gx/w)
    d = np.sqrt(np.diag(jtj))
    if np.any(d <= 0.0):
        raise RankDeficient("degenerate residual Jacobian column")
    scaled = jtj / np.outer(d, d)
    eig = np.linalg.eigvalsh(scaled)
    if eig[0] <= eig[-1] * 1e-12:
        raise RankDeficient("normal equations singular beyond the gauge")
    cov8 = sigma * sigma * (np.linalg.inv(scaled) / np.outer(d, d))
    cov = np.zeros((9, 9))
    cov[:8, :8] = (cov8 + cov8.T) / 2.0
    return cov


def estimate_egomotion(prev: Frame, next: Frame, cfg: EgoConfig, seed: int) -> EgoMeasurement:
    """Grid sampling -> pyramidal flow -> RANSAC fit -> covariance."""
    if prev.pixels.shape != next.pixels.shape:
        raise ValueError("frames must have identical dimensions")
    prev_pyr = build_pyramid(prev, cfg.pyramid_levels)
    next_pyr = build_pyramid(next, cfg.pyramid_levels)
    pts = sample_grid(prev.width, prev.height, cfg.grid_rows, cfg.grid_cols)
    corrs = lk_flow(prev_pyr, next_pyr, pts, cfg)
    h, mask = ransac_homography(corrs, cfg, seed)
    kept = [c for c in corrs if c.valid]
    inliers = [c for c, keep in zip(kept, mask) if keep]
    cov = homography_covariance(h, inliers, cfg.noise_sigma)
    return EgoMeasurement(h=h, cov=cov, inlier_count=len(inliers), frame_index=next.index)
