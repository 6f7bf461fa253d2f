"""Edge-line extraction from B-scans.

threshold -> Canny -> dilation -> progressive probabilistic Hough, keeping
the longest segment. Rasters are ``(height, width)`` arrays indexed
``[v, u]``; ``u`` runs along the image columns.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


class VerticalLineError(ValueError):
    pass


@dataclass
class Frame:
    """One 8-bit B-scan and its pixel size (mm/pixel)."""

    intensities: np.ndarray
    sx: float = 1.0
    sy: float = 1.0

    def __post_init__(self):
        img = np.asarray(self.intensities)
        if img.ndim != 2:
            raise ValueError(f"frame raster must be 2D, got shape {img.shape}")
        if img.dtype != np.uint8:
            if img.min() < 0 or img.max() > 255:
                raise ValueError("frame intensities must fit in 8 bits")
            img = img.astype(np.uint8)
        if not (self.sx > 0 and self.sy > 0):
            raise ValueError(f"pixel sizes must be positive, got sx={self.sx}, sy={self.sy}")
        self.intensities = img

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def width(self) -> int:
        return self.intensities.shape[1]


@dataclass(frozen=True)
class LineParams:
    a: float
    b: float
    length: float
    endpoints: tuple

    @property
    def midpoint(self) -> tuple[float, float]:
        (u1, v1), (u2, v2) = self.endpoints
        return (u1 + u2) / 2.0, (v1 + v2) / 2.0


@dataclass
class LineDetectionConfig:
    thI: float = 0.5
    thCan1: float = 50.0
    thCan2: float = 150.0
    kerSizeCan: int = 3
    kerSizeDil: int = 3
    thHou: int = 50
    minLineLength: float | None = None  # None -> width / 3
    maxLineGap: int = 10
    seed: int = 0
    center_endpoints: bool = True
    min_component_size: int = 10  # speckle removal after thresholding; 0 disables

    def __post_init__(self):
        problems = []
        if not 0 < self.thI < 1:
            problems.append(f"thI must be in (0, 1), got {self.thI}")
        if self.thCan1 > self.thCan2:
            problems.append(f"thCan1 ({self.thCan1}) must not exceed thCan2 ({self.thCan2})")
        for name in ("kerSizeCan", "kerSizeDil"):
            k = getattr(self, name)
            if k < 3 or k % 2 == 0:
                problems.append(f"{name} must be odd and >= 3, got {k}")
        if self.thHou < 1:
            problems.append(f"thHou must be >= 1, got {self.thHou}")
        if problems:
            raise ValueError("; ".join(problems))


def threshold(frame, thI: float) -> np.ndarray:
    img = frame.intensities if isinstance(frame, Frame) else np.asarray(frame)
    max_val = np.iinfo(img.dtype).max if np.issubdtype(img.dtype, np.integer) else 255
    return img > np.round(thI * max_val)


def remove_small_components(binary, min_size: int) -> np.ndarray:
    """Drop 8-connected foreground blobs smaller than ``min_size`` pixels."""
    bw = np.asarray(binary).astype(bool)
    if min_size <= 1:
        return bw
    labels, n = ndimage.label(bw, structure=np.ones((3, 3)))
    if n == 0:
        return bw
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_size
    keep[0] = False
    return keep[labels]


def _sobel_kernels(ksize: int):
    smooth = np.array([1.0])
    for _ in range(ksize - 1):
        smooth = np.convolve(smooth, [1.0, 1.0])
    deriv = np.array([1.0])
    for _ in range(ksize - 3):
        deriv = np.convolve(deriv, [1.0, 1.0])
    deriv = np.convolve(deriv, [-1.0, 0.0, 1.0])
    kx = np.outer(smooth, deriv)  # d/du
    return kx, kx.T


def detect_edges(binary, cfg: LineDetectionConfig | None = None) -> np.ndarray:
    """Canny edge map (L1 gradient norm, 4-sector non-maximum suppression)."""
    cfg = cfg or LineDetectionConfig()
    arr = np.asarray(binary)
    img = arr.astype(float)
    if arr.dtype == bool or img.max(initial=0) <= 1:
        img = img * 255.0
    kx, ky = _sobel_kernels(cfg.kerSizeCan)
    gx = ndimage.correlate(img, kx, mode="nearest")
    gy = ndimage.correlate(img, ky, mode="nearest")
    mag = np.abs(gx) + np.abs(gy)

    H, W = mag.shape
    m = np.pad(mag, 1, mode="constant")
    c = m[1:-1, 1:-1]
    left, right = m[1:-1, :-2], m[1:-1, 2:]
    up, down = m[:-2, 1:-1], m[2:, 1:-1]
    ax, ay = np.abs(gx), np.abs(gy)
    tg22 = np.tan(np.pi / 8)
    tg67 = np.tan(3 * np.pi / 8)
    horiz = ay < ax * tg22
    vert = ~horiz & (ay > ax * tg67)
    diag = ~horiz & ~vert
    same_sign = (gx * gy) >= 0
    # s = +1: compare (v-1, u-1) and (v+1, u+1); s = -1: (v-1, u+1) and (v+1, u-1)
    d_pos = (c > m[:-2, :-2]) & (c > m[2:, 2:])
    d_neg = (c > m[:-2, 2:]) & (c > m[2:, :-2])
    keep = (
        (horiz & (c > left) & (c >= right))
        | (vert & (c > up) & (c >= down))
        | (diag & np.where(same_sign, d_pos, d_neg))
    )
    cand = keep & (mag > cfg.thCan1)
    strong = cand & (mag > cfg.thCan2)
    labels, n = ndimage.label(cand, structure=np.ones((3, 3)))
    if n == 0:
        return np.zeros((H, W), dtype=bool)
    has_strong = np.zeros(n + 1, dtype=bool)
    has_strong[labels[strong]] = True
    has_strong[0] = False
    return has_strong[labels]


def dilate(raster, kerSizeDil: int = 3) -> np.ndarray:
    r = np.asarray(raster).astype(bool)
    return ndimage.binary_dilation(r, structure=np.ones((kerSizeDil, kerSizeDil), dtype=bool))


def hough_segments(raster, threshold_votes: int, min_length: float, max_gap: int,
                   seed: int = 0, rho: float = 1.0, theta: float = np.pi / 180):
    """Progressive probabilistic Hough transform.

    Returns a list of ``((u1, v1), (u2, v2))`` integer segments. Each edge
    point is visited once in a seeded random order; once an accumulator bin
    reaches ``threshold_votes`` the corresponding corridor is walked in both
    directions (tolerating gaps up to ``max_gap``) and its pixels removed.
    """
    mask = np.asarray(raster).astype(bool).copy()
    H, W = mask.shape
    numangle = int(round(np.pi / theta))
    numrho = int(round(((W + H) * 2 + 1) / rho))
    angles = np.arange(numangle) * theta
    cos_t = np.cos(angles) / rho
    sin_t = np.sin(angles) / rho
    accum = np.zeros((numangle, numrho), dtype=np.int32)
    ang_idx = np.arange(numangle)
    offset = (numrho - 1) // 2
    shift = 16

    vs, us = np.nonzero(mask)
    pts = np.stack([us, vs], axis=1)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pts))
    segments = []

    def bins(u, v):
        return np.rint(u * cos_t + v * sin_t).astype(np.int64) + offset

    for k in order:
        u, v = int(pts[k, 0]), int(pts[k, 1])
        if not mask[v, u]:
            continue
        r = bins(u, v)
        accum[ang_idx, r] += 1
        vals = accum[ang_idx, r]
        best = int(np.argmax(vals))
        if vals[best] < threshold_votes:
            continue

        a = -np.sin(angles[best])
        b = np.cos(angles[best])
        if abs(a) > abs(b):
            xflag = True
            dx0 = 1 if a > 0 else -1
            dy0 = int(round(b * (1 << shift) / abs(a)))
            x0, y0 = u, (v << shift) + (1 << (shift - 1))
        else:
            xflag = False
            dy0 = 1 if b > 0 else -1
            dx0 = int(round(a * (1 << shift) / abs(b)))
            x0, y0 = (u << shift) + (1 << (shift - 1)), v

        ends = [(u, v), (u, v)]
        for side in (0, 1):
            gap = 0
            x, y = x0, y0
            dx, dy = (dx0, dy0) if side == 0 else (-dx0, -dy0)
            while True:
                if xflag:
                    j, i = x, y >> shift
                else:
                    j, i = x >> shift, y
                if j < 0 or j >= W or i < 0 or i >= H:
                    break
                if mask[i, j]:
                    gap = 0
                    ends[side] = (j, i)
                else:
                    gap += 1
                    if gap > max_gap:
                        break
                x += dx
                y += dy

        good = (abs(ends[1][0] - ends[0][0]) >= min_length
                or abs(ends[1][1] - ends[0][1]) >= min_length)

        for side in (0, 1):
            x, y = x0, y0
            dx, dy = (dx0, dy0) if side == 0 else (-dx0, -dy0)
            while True:
                if xflag:
                    j, i = x, y >> shift
                else:
                    j, i = x >> shift, y
                if mask[i, j]:
                    if good:
                        accum[ang_idx, bins(j, i)] -= 1
                    mask[i, j] = False
                if (j, i) == ends[side]:
                    break
                x += dx
                y += dy

        if good:
            segments.append((ends[0], ends[1]))
    return segments


def _refine_on_band(band: np.ndarray, p1, p2, radius: int):
    """Re-fit a segment to the middle of the bright band it runs along.

    In every column the segment spans, the run of ``band`` pixels nearest
    to the segment (within ``radius`` rows) is located and its midpoint
    kept; a least-squares line through the midpoints replaces the segment.
    Steep segments are handled on the transposed raster.
    """
    (u1, v1), (u2, v2) = p1, p2
    steep = abs(v2 - v1) > abs(u2 - u1)
    img = band.T if steep else band
    if steep:
        (u1, v1), (u2, v2) = (v1, u1), (v2, u2)
    slope = (v2 - v1) / (u2 - u1)
    rows = img.shape[0]
    cols, mids = [], []
    for c in range(int(min(u1, u2)), int(max(u1, u2)) + 1):
        pred = v1 + slope * (c - u1)
        lo, hi = max(int(round(pred)) - radius, 0), min(int(round(pred)) + radius, rows - 1)
        if hi < lo:
            continue
        hits = np.flatnonzero(img[lo:hi + 1, c]) + lo
        if len(hits) == 0:
            continue
        r = int(hits[np.argmin(np.abs(hits - pred))])
        top = bot = r
        while top > 0 and img[top - 1, c]:
            top -= 1
        while bot < rows - 1 and img[bot + 1, c]:
            bot += 1
        cols.append(c)
        mids.append(0.5 * (top + bot))
    if len(cols) < 2:
        return p1, p2
    k, b0 = np.polyfit(cols, mids, 1)
    q1 = (float(cols[0]), float(k * cols[0] + b0))
    q2 = (float(cols[-1]), float(k * cols[-1] + b0))
    if steep:
        q1, q2 = q1[::-1], q2[::-1]
    return q1, q2


def _line_from_endpoints(p1, p2) -> LineParams:
    (u1, v1), (u2, v2) = p1, p2
    if u1 == u2:
        raise VerticalLineError(f"vertical segment at u={u1}: slope undefined")
    a = (v1 - v2) / (u1 - u2)
    b = v1 - a * u1
    return LineParams(a=float(a) + 0.0, b=float(b) + 0.0, length=float(np.hypot(u1 - u2, v1 - v2)),
                      endpoints=((float(u1), float(v1)), (float(u2), float(v2))))


def hough_longest_line(raster, cfg: LineDetectionConfig | None = None,
                       band=None) -> LineParams | None:
    """Longest probabilistic-Hough segment as ``v = a*u + b``.

    Ties in length go to the lowest intercept. With ``center_endpoints`` the
    segment is re-fitted to the middle of ``band`` (the thresholded image;
    ``raster`` itself when not given), which removes the bias from walking
    along one edge of a thick band.
    """
    cfg = cfg or LineDetectionConfig()
    raster = np.asarray(raster).astype(bool)
    min_len = cfg.minLineLength if cfg.minLineLength is not None else raster.shape[1] / 3.0
    segs = hough_segments(raster, cfg.thHou, min_len, cfg.maxLineGap, seed=cfg.seed)
    if not segs:
        return None
    best = None
    best_key = None
    for p1, p2 in segs:
        length = float(np.hypot(p1[0] - p2[0], p1[1] - p2[1]))
        if p1[0] == p2[0]:
            key = (-length, np.inf)
        else:
            a = (p1[1] - p2[1]) / (p1[0] - p2[0])
            key = (-length, p1[1] - a * p1[0])
        if best_key is None or key < best_key:
            best, best_key = (p1, p2), key
    p1, p2 = best
    if p1[0] == p2[0]:
        raise VerticalLineError(f"vertical segment at u={p1[0]}: slope undefined")
    if cfg.center_endpoints:
        band = raster if band is None else np.asarray(band, dtype=bool)
        p1, p2 = _refine_on_band(band, p1, p2, cfg.kerSizeDil // 2 + 2)
    return _line_from_endpoints(p1, p2)


def detect_line(frame, cfg: LineDetectionConfig | None = None) -> LineParams | None:
    """Full per-frame pipeline: threshold, edges, dilation, Hough."""
    cfg = cfg or LineDetectionConfig()
    bw = remove_small_components(threshold(frame, cfg.thI), cfg.min_component_size)
    edges = detect_edges(bw, cfg)
    return hough_longest_line(dilate(edges, cfg.kerSizeDil), cfg, band=bw)
