"""Pixel-nearest-neighbour compounding of posed B-scans into a voxel array.

Voxels are stored flat with x running fastest,
``idx = x + xl * (y + yl * z)``, so ``values.reshape(zl, yl, xl)`` gives a
C-ordered ``[z, y, x]`` view.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .calibration import CalibrationParams
from .geometry import RigidTransform
from .imaging import Frame

log = logging.getLogger(__name__)


class EmptySequenceError(ValueError):
    pass


@dataclass
class ScanSequence:
    frames: list
    poses: list  # tTr per frame, delay-corrected
    calibration: CalibrationParams
    times: np.ndarray | None = None

    def __post_init__(self):
        if len(self.frames) != len(self.poses):
            raise ValueError(f"{len(self.frames)} frames but {len(self.poses)} poses")
        if len(self.frames) == 0:
            raise EmptySequenceError("sequence has no frames")

    def __len__(self):
        return len(self.frames)

    def image_to_world(self, i: int, calibration: CalibrationParams | None = None) -> np.ndarray:
        calib = calibration or self.calibration
        return self.poses[i].matrix @ calib.rTp.matrix


def round_half_away(x):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def pixel_positions(frame: Frame, M: np.ndarray, sx: float, sy: float) -> np.ndarray:
    """World positions (mm) of every pixel, raster order, shape (H*W, 3)."""
    v, u = np.mgrid[0:frame.height, 0:frame.width]
    a = sx * u.ravel()
    b = sy * v.ravel()
    return np.outer(a, M[:3, 0]) + np.outer(b, M[:3, 1]) + M[:3, 3]


def frame_corners(frame: Frame, M: np.ndarray, sx: float, sy: float) -> np.ndarray:
    u = np.array([0, frame.width - 1, 0, frame.width - 1], dtype=float)
    v = np.array([0, 0, frame.height - 1, frame.height - 1], dtype=float)
    return np.outer(sx * u, M[:3, 0]) + np.outer(sy * v, M[:3, 1]) + M[:3, 3]


def xyz2idx(x, y, z, xl: int, yl: int, zl: int):
    x, y, z = (np.asarray(c) for c in (x, y, z))
    if (np.any(x < 0) or np.any(x >= xl) or np.any(y < 0) or np.any(y >= yl)
            or np.any(z < 0) or np.any(z >= zl)):
        raise IndexError(f"voxel coordinates outside grid {xl}x{yl}x{zl}")
    return x + xl * (y + yl * z)


def idx2xyz(idx, xl: int, yl: int, zl: int):
    idx = np.asarray(idx)
    if np.any(idx < 0) or np.any(idx >= xl * yl * zl):
        raise IndexError(f"linear index outside grid {xl}x{yl}x{zl}")
    return idx % xl, (idx // xl) % yl, idx // (xl * yl)


@dataclass
class VoxelArray:
    dims: tuple
    spacing: np.ndarray
    world_from_grid: RigidTransform  # grid-frame mm (spacing * index) -> world mm
    values: np.ndarray = None
    contributions: np.ndarray = None
    sums: np.ndarray = None
    skipped: list = field(default_factory=list)
    fill_stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing = np.broadcast_to(np.asarray(self.spacing, dtype=float), (3,)).copy()
        if np.any(self.spacing <= 0) or min(self.dims) < 1:
            raise ValueError(f"invalid grid dims={self.dims} spacing={self.spacing}")
        n = self.size
        if self.values is None:
            self.values = np.zeros(n)
        if self.contributions is None:
            self.contributions = np.zeros(n, dtype=np.int64)
        if self.sums is None:
            self.sums = self.values * self.contributions
        if not (len(self.values) == len(self.contributions) == n):
            raise ValueError("values/contributions length does not match dims")

    @property
    def size(self) -> int:
        xl, yl, zl = self.dims
        return xl * yl * zl

    @property
    def origin(self) -> np.ndarray:
        """World position of voxel (0, 0, 0)."""
        return self.world_from_grid.translation

    def volume(self, which: str = "values") -> np.ndarray:
        xl, yl, zl = self.dims
        return getattr(self, which).reshape(zl, yl, xl)

    def empty_like(self) -> "VoxelArray":
        return VoxelArray(self.dims, self.spacing, self.world_from_grid)

    def copy(self) -> "VoxelArray":
        return VoxelArray(self.dims, self.spacing.copy(), self.world_from_grid, self.values.copy(),
                          self.contributions.copy(), self.sums.copy(), list(self.skipped),
                          dict(self.fill_stats))

    def voxel_centers(self, idx=None) -> np.ndarray:
        """World coordinates of voxel centers (all, or the given linear indices)."""
        if idx is None:
            idx = np.arange(self.size)
        x, y, z = idx2xyz(idx, *self.dims)
        g = np.stack([x, y, z], axis=1) * self.spacing
        R, t = self.world_from_grid.rotation, self.world_from_grid.translation
        return g @ R.T + t

    def world_to_grid(self, pts) -> np.ndarray:
        """Continuous voxel coordinates (x, y, z) of world points."""
        R, t = self.world_from_grid.rotation, self.world_from_grid.translation
        return ((np.asarray(pts, dtype=float) - t) @ R) / self.spacing

    def locate(self, pts):
        """Nearest voxel linear index per point; -1 where outside the grid."""
        g = round_half_away(self.world_to_grid(pts)).astype(np.int64)
        xl, yl, zl = self.dims
        inside = ((g[:, 0] >= 0) & (g[:, 0] < xl) & (g[:, 1] >= 0) & (g[:, 1] < yl)
                  & (g[:, 2] >= 0) & (g[:, 2] < zl))
        idx = np.full(len(g), -1, dtype=np.int64)
        gi = g[inside]
        idx[inside] = gi[:, 0] + xl * (gi[:, 1] + yl * gi[:, 2])
        return idx

    def finalize(self):
        hit = self.contributions > 0
        self.values = np.zeros(self.size)
        self.values[hit] = self.sums[hit] / self.contributions[hit]
        return self


def _basis(corners: np.ndarray, mode: str, rotation=None) -> np.ndarray:
    if mode == "pca":
        c = corners - corners.mean(axis=0)
        evals, evecs = np.linalg.eigh(c.T @ c)
        R = evecs[:, ::-1].copy()
        for k in range(3):
            j = np.argmax(np.abs(R[:, k]))
            if R[j, k] < 0:
                R[:, k] = -R[:, k]
        if np.linalg.det(R) < 0:
            R[:, 2] = -R[:, 2]
        return R
    if mode in ("manual", "world"):
        R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=float)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise ValueError("manual axes must form a proper rotation matrix")
        return R
    raise ValueError(f"unknown bounds mode {mode!r}")


def default_spacing(calib: CalibrationParams) -> float:
    return max(calib.sx, calib.sy)


def compute_bounds(seq: ScanSequence, mode: str = "manual", rotation=None,
                   spacing=None, calibration: CalibrationParams | None = None) -> VoxelArray:
    """Smallest box, in the chosen axes, holding every frame corner.

    ``mode="manual"`` uses ``rotation`` (grid axes as columns, identity by
    default); ``mode="pca"`` uses the principal axes of the corner cloud.
    Each axis gets ``round(extent / spacing) + 1`` voxels.
    """
    calib = calibration or seq.calibration
    spacing = default_spacing(calib) if spacing is None else spacing
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (3,)).copy()
    corners = np.concatenate([
        frame_corners(f, seq.image_to_world(i, calib), calib.sx, calib.sy)
        for i, f in enumerate(seq.frames)])
    R = _basis(corners, mode, rotation)
    local = corners @ R
    lo, hi = local.min(axis=0), local.max(axis=0)
    dims = round_half_away((hi - lo) / spacing + 1e-9).astype(int) + 1
    return VoxelArray(tuple(dims), spacing, RigidTransform.from_rt(R, R @ lo))


def _frame_contributions(va: VoxelArray, frame: Frame, M: np.ndarray, sx, sy):
    idx = va.locate(pixel_positions(frame, M, sx, sy))
    vals = frame.intensities.ravel().astype(float)
    ok = idx >= 0
    return idx[ok], vals[ok], int((~ok).sum())


def insert_frame(va: VoxelArray, frame: Frame, pose: RigidTransform,
                 calib: CalibrationParams) -> VoxelArray:
    """Add one frame's pixels to their nearest voxels (in place).

    Voxel values stay equal to the mean of all contributions so far. The
    number of pixels falling outside the grid is appended to ``va.skipped``.
    """
    M = pose.matrix @ calib.rTp.matrix
    idx, vals, skipped = _frame_contributions(va, frame, M, calib.sx, calib.sy)
    s = np.bincount(idx, weights=vals, minlength=va.size)
    c = np.bincount(idx, minlength=va.size)
    va.sums += s
    va.contributions += c
    touched = np.unique(idx)
    va.values[touched] = va.sums[touched] / va.contributions[touched]
    va.skipped.append(skipped)
    return va


def _accumulate(va, seq, calib, frame_ids):
    idxs, vals, skips = [], [], []
    for i in frame_ids:
        idx, v, sk = _frame_contributions(va, seq.frames[i], seq.image_to_world(i, calib),
                                          calib.sx, calib.sy)
        idxs.append(idx)
        vals.append(v)
        skips.append(sk)
    idx = np.concatenate(idxs) if idxs else np.zeros(0, dtype=np.int64)
    v = np.concatenate(vals) if vals else np.zeros(0)
    return (np.bincount(idx, weights=v, minlength=va.size),
            np.bincount(idx, minlength=va.size), skips)


def compound(seq: ScanSequence, va: VoxelArray | None = None, *, mode: str = "manual",
             rotation=None, spacing=None, threads: int = 1,
             calibration: CalibrationParams | None = None) -> VoxelArray:
    """Bounds, PNN insertion of every frame, finalization.

    Frames are split across ``threads`` workers that accumulate private
    (sum, count) buffers, reduced in a fixed order.
    """
    if seq is None or len(seq) == 0:
        raise EmptySequenceError("cannot compound an empty sequence")
    calib = calibration or seq.calibration
    if va is None:
        va = compute_bounds(seq, mode=mode, rotation=rotation, spacing=spacing, calibration=calib)
    n = len(seq)
    threads = max(1, min(int(threads), n))
    chunks = [list(c) for c in np.array_split(np.arange(n), threads)]
    if threads == 1:
        parts = [_accumulate(va, seq, calib, chunks[0])]
    else:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda ids: _accumulate(va, seq, calib, ids), chunks))
    for s, c, skips in parts:
        va.sums += s
        va.contributions += c
        va.skipped.extend(skips)
    va.finalize()
    total = sum(f.width * f.height for f in seq.frames)
    log.debug("compounded %d frames, %d of %d pixels outside grid", n, sum(va.skipped), total)
    return va
