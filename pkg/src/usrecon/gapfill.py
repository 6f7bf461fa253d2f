"""Gap filling inside the scanned region.

Only voxels between consecutive frames (inside the convex hull of their
eight corners) are candidates. Every fill reads the compounded snapshot:
a voxel filled in this pass never feeds another gap.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .compounding import ScanSequence, VoxelArray, frame_corners, idx2xyz

log = logging.getLogger(__name__)


class NoSeedError(ValueError):
    pass


class BlockSizeError(ValueError):
    pass


@dataclass
class GapFillConfig:
    method: str = "avg-cube"  # vnn | avg-cube
    min_nongap_pct: float = 25.0
    max_cube_size: int = 5
    n_blocks: int = 1
    weight_power: float = 1.0  # weights are 1 / distance**weight_power

    def __post_init__(self):
        problems = []
        if self.method not in ("vnn", "avg-cube"):
            problems.append(f"method must be 'vnn' or 'avg-cube', got {self.method!r}")
        if not 0 < self.min_nongap_pct <= 100:
            problems.append(f"min_nongap_pct must be in (0, 100], got {self.min_nongap_pct}")
        if self.max_cube_size < 3 or self.max_cube_size % 2 == 0:
            problems.append(f"max_cube_size must be odd and >= 3, got {self.max_cube_size}")
        if self.n_blocks < 1:
            problems.append(f"n_blocks must be >= 1, got {self.n_blocks}")
        if problems:
            raise ValueError("; ".join(problems))


# hull mask -------------------------------------------------------------------

def _box_points(lo, hi, dims):
    lo = np.maximum(np.floor(lo).astype(int), 0)
    hi = np.minimum(np.ceil(hi).astype(int), np.asarray(dims) - 1)
    if np.any(hi < lo):
        return np.zeros((0, 3), dtype=int)
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack([c.ravel() for c in g], axis=1)


def _inside_halfspaces(pts, equations, tol):
    return np.all(pts @ equations[:, :-1].T + equations[:, -1] <= tol, axis=1)


def hull_voxels(corners_idx: np.ndarray, dims) -> np.ndarray:
    """Integer voxel coordinates (x, y, z) whose centers lie in the convex
    hull of ``corners_idx`` (continuous voxel coordinates).

    A flat hull becomes a one-voxel slab: centers within half a voxel of its
    plane and inside its 2D outline.
    """
    c = np.asarray(corners_idx, dtype=float)
    pts = _box_points(c.min(axis=0) - 0.5, c.max(axis=0) + 0.5, dims)
    if len(pts) == 0:
        return pts
    scale = max(1.0, float(np.abs(c).max()))
    centered = c - c.mean(axis=0)
    _, sv, vt = np.linalg.svd(centered, full_matrices=False)
    if sv[-1] > 1e-9 * scale:
        try:
            hull = ConvexHull(c)
            inside = _inside_halfspaces(pts.astype(float), hull.equations, 1e-9 * scale)
            return pts[inside]
        except QhullError:
            pass
    normal = vt[2]
    rel = pts - c.mean(axis=0)
    near = np.abs(rel @ normal) <= 0.5
    basis = vt[:2].T
    flat = centered @ basis
    try:
        h2 = ConvexHull(flat)
        inside = _inside_halfspaces(rel @ basis, h2.equations, 1e-9 * scale)
    except QhullError:
        # collinear outline: keep voxels on the segment
        d = rel - np.outer(rel @ vt[0], vt[0])
        span = flat[:, 0]
        t = rel @ vt[0]
        inside = (np.linalg.norm(d, axis=1) <= 0.5) & (t >= span.min() - 0.5) & (t <= span.max() + 0.5)
        near = np.ones(len(pts), dtype=bool)
    return pts[near & inside]


def hull_mask(seq: ScanSequence, va: VoxelArray, calibration=None) -> np.ndarray:
    """Union over consecutive frame pairs of their corner convex hulls,
    plus every voxel that received a contribution."""
    calib = calibration or seq.calibration
    corners = [frame_corners(f, seq.image_to_world(i, calib), calib.sx, calib.sy)
               for i, f in enumerate(seq.frames)]
    return hull_mask_from_corners(va, corners)


def hull_mask_from_corners(va: VoxelArray, corners) -> np.ndarray:
    """Same as :func:`hull_mask` from per-frame world corners, (n, 4, 3)."""
    if len(corners) < 2:
        raise ValueError("hull mask needs at least 2 frames")
    xl, yl, zl = va.dims
    mask = va.contributions > 0
    grid = [va.world_to_grid(c) for c in corners]
    for a, b in zip(grid[:-1], grid[1:]):
        v = hull_voxels(np.concatenate([a, b]), va.dims)
        if len(v):
            mask[v[:, 0] + xl * (v[:, 1] + yl * v[:, 2])] = True
    return mask


# VNN -------------------------------------------------------------------------

def _seed_tree(va: VoxelArray):
    seeds = np.flatnonzero(va.contributions > 0)
    if len(seeds) == 0:
        raise NoSeedError("no voxel has a contribution; nothing to fill from")
    x, y, z = idx2xyz(seeds, *va.dims)
    coords = np.stack([x, y, z], axis=1) * va.spacing
    return seeds, cKDTree(coords)


def _nearest_seed(tree, seeds, spacing, dims, gap_idx, k=16):
    x, y, z = idx2xyz(gap_idx, *dims)
    q = np.stack([x, y, z], axis=1) * spacing
    k = min(k, len(seeds))
    d, i = tree.query(q, k=k)
    if k == 1:
        d, i = d[:, None], i[:, None]
    tol = d[:, :1] * (1 + 1e-12) + 1e-12
    tied = d <= tol
    # seeds are sorted by linear index, so the smallest tree index wins ties
    choice = np.where(tied, i, np.iinfo(np.int64).max).min(axis=1)
    if k < len(seeds):
        overflow = np.flatnonzero(tied[:, -1])
        for j in overflow:
            ball = tree.query_ball_point(q[j], tol[j, 0])
            choice[j] = min(ball)
    return seeds[choice]


def fill_vnn(va: VoxelArray, mask, _tree=None, _gaps=None) -> VoxelArray:
    """Copy the value of the Euclidean-nearest compounded voxel into every
    masked gap; equidistant candidates resolve to the lowest linear index."""
    out = va.copy()
    seeds, tree = _tree or _seed_tree(va)
    gaps = _gaps if _gaps is not None else np.flatnonzero(np.asarray(mask) & (va.contributions == 0))
    if len(gaps):
        src = _nearest_seed(tree, seeds, va.spacing, va.dims, gaps)
        out.values[gaps] = va.values[src]
    out.fill_stats = {"method": "vnn", "gaps": int(len(gaps)), "filled": int(len(gaps)),
                      "unfilled": 0}
    return out


# average cube ----------------------------------------------------------------

def _inverse_distance_kernel(size, spacing, power):
    r = size // 2
    g = np.mgrid[-r:r + 1, -r:r + 1, -r:r + 1].astype(float)
    # array axes are (z, y, x)
    d = np.sqrt((g[0] * spacing[2]) ** 2 + (g[1] * spacing[1]) ** 2 + (g[2] * spacing[0]) ** 2)
    w = np.zeros_like(d)
    w[d > 0] = 1.0 / d[d > 0] ** power
    return w


def _clipped_counts(shape, r):
    """Number of in-volume voxels in the cube of half-size r around each voxel."""
    per_axis = []
    for n in shape:
        i = np.arange(n)
        per_axis.append(np.minimum(i + r, n - 1) - np.maximum(i - r, 0) + 1)
    return (per_axis[0][:, None, None] * per_axis[1][None, :, None]
            * per_axis[2][None, None, :]).astype(float)


def _avg_cube_block(values, seeds, gaps, cfg: GapFillConfig, spacing):
    """Fill ``gaps`` in a [z, y, x] block; returns (filled values, still-unfilled mask)."""
    out = values.copy()
    pending = gaps.copy()
    seed_f = seeds.astype(float)
    weighted_vals = np.where(seeds, values, 0.0)
    for size in range(3, cfg.max_cube_size + 1, 2):
        if not pending.any():
            break
        r = size // 2
        ones = np.ones((size, size, size))
        n_seed = ndimage.correlate(seed_f, ones, mode="constant", cval=0.0)
        pct = 100.0 * n_seed / _clipped_counts(values.shape, r)
        ok = pending & (pct >= cfg.min_nongap_pct) & (n_seed > 0)
        if not ok.any():
            continue
        w = _inverse_distance_kernel(size, spacing, cfg.weight_power)
        num = ndimage.correlate(weighted_vals, w, mode="constant", cval=0.0)
        den = ndimage.correlate(seed_f, w, mode="constant", cval=0.0)
        out[ok] = num[ok] / den[ok]
        pending &= ~ok
    return out, pending


def fill_avg_cube(va: VoxelArray, mask, cfg: GapFillConfig | None = None) -> VoxelArray:
    """Grow a cube (3, 5, ... voxels) around each masked gap until at least
    ``min_nongap_pct`` percent of its in-volume voxels are compounded, then
    take their inverse-distance weighted mean. Gaps still unsatisfied at
    ``max_cube_size`` stay empty and are counted in ``fill_stats``."""
    cfg = cfg or GapFillConfig()
    out = va.copy()
    seeds = (va.contributions > 0).reshape(va.volume().shape)
    gaps = (np.asarray(mask) & (va.contributions == 0)).reshape(seeds.shape)
    vals, pending = _avg_cube_block(va.volume(), seeds, gaps, cfg, va.spacing)
    out.values = vals.ravel()
    n_gaps, n_left = int(gaps.sum()), int(pending.sum())
    out.fill_stats = {"method": "avg-cube", "gaps": n_gaps, "filled": n_gaps - n_left,
                      "unfilled": n_left}
    if n_left:
        log.info("%d of %d gaps left unfilled (max cube %d)", n_left, n_gaps, cfg.max_cube_size)
    return out


# blocks ----------------------------------------------------------------------

def fill_blocks(va: VoxelArray, mask, cfg: GapFillConfig | None = None) -> VoxelArray:
    """Run the configured fill on ``n_blocks`` slabs along the longest axis.

    Each slab is read with a halo of ``max_cube_size // 2`` voxels so the
    result matches the single-block run exactly. ``fill_stats`` records the
    largest block (core + halo) materialized.
    """
    cfg = cfg or GapFillConfig()
    mask = np.asarray(mask, dtype=bool)
    shape = va.volume().shape  # (zl, yl, xl)
    axis = int(np.argmax(shape))
    halo = cfg.max_cube_size // 2
    bounds = np.linspace(0, shape[axis], cfg.n_blocks + 1).round().astype(int)
    thick = np.diff(bounds)
    if cfg.n_blocks > 1 and thick.min() < halo:
        raise BlockSizeError(
            f"blocks of {thick.min()} voxels are thinner than the {halo}-voxel halo; "
            f"use fewer than {cfg.n_blocks} blocks")

    out = va.copy()
    vals3 = va.volume()
    seeds3 = (va.contributions > 0).reshape(shape)
    gaps3 = (mask & (va.contributions == 0)).reshape(shape)
    out3 = out.values.reshape(shape)
    tree = _seed_tree(va) if cfg.method == "vnn" else None
    stats = {"method": cfg.method, "gaps": int(gaps3.sum()), "unfilled": 0,
             "n_blocks": cfg.n_blocks, "max_block_voxels": 0}

    for lo, hi in zip(bounds[:-1], bounds[1:]):
        a, b = max(lo - halo, 0), min(hi + halo, shape[axis])
        sl = [slice(None)] * 3
        sl[axis] = slice(a, b)
        sl = tuple(sl)
        core = [slice(None)] * 3
        core[axis] = slice(lo - a, hi - a)
        core = tuple(core)
        dst = [slice(None)] * 3
        dst[axis] = slice(lo, hi)
        dst = tuple(dst)
        block_vals = vals3[sl]
        stats["max_block_voxels"] = max(stats["max_block_voxels"], block_vals.size)
        if cfg.method == "avg-cube":
            filled, pending = _avg_cube_block(block_vals, seeds3[sl], gaps3[sl], cfg, va.spacing)
            out3[dst] = filled[core]
            stats["unfilled"] += int(pending[core].sum())
        else:
            zz, yy, xx = np.nonzero(gaps3[dst])
            if len(zz):
                pos = [zz, yy, xx]
                pos[axis] = pos[axis] + lo
                xl, yl = shape[2], shape[1]
                gap_idx = pos[2] + xl * (pos[1] + yl * pos[0])
                seeds, kd = tree
                src = _nearest_seed(kd, seeds, va.spacing, va.dims, gap_idx)
                out.values[gap_idx] = va.values[src]
    stats["filled"] = stats["gaps"] - stats["unfilled"]
    out.fill_stats = stats
    return out


def fill_gaps(va: VoxelArray, mask, cfg: GapFillConfig | None = None) -> VoxelArray:
    cfg = cfg or GapFillConfig()
    return fill_blocks(va, mask, cfg)
