"""Calibration refinement by compounding two crossed sweeps.

Both sweeps are compounded into one fixed grid with candidate calibration
parameters; the normalized cross-correlation over voxels hit by both sweeps
is maximized by a coordinate pattern search over the image-to-transducer
pose and the pixel scales.

A translation of ``rTp`` along the axis of the relative rotation between
the two sweeps moves both reconstructions identically and cannot be seen in
their overlap. The search therefore moves translations only in the plane
orthogonal to that axis.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .calibration import CalibrationParams
from .compounding import ScanSequence, VoxelArray, compound, compute_bounds
from .geometry import RigidTransform

log = logging.getLogger(__name__)

SEARCHED = ("x1", "y1", "z1", "alpha1", "beta1", "gamma1", "sx", "sy")


class InsufficientOverlapError(ValueError):
    pass


@dataclass
class RefineReport:
    params: CalibrationParams
    ncc_initial: float
    ncc: float
    evaluations: int
    overlap: int
    hidden_axis: np.ndarray  # translation direction (transducer frame) left untouched


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt((a @ a) * (b @ b))
    return float(a @ b / den) if den > 0 else 0.0


def shared_grid(sweep_a: ScanSequence, sweep_b: ScanSequence, params: CalibrationParams,
                spacing=None, margin: int = 3) -> VoxelArray:
    both = ScanSequence(list(sweep_a.frames) + list(sweep_b.frames),
                        list(sweep_a.poses) + list(sweep_b.poses), params)
    grid = compute_bounds(both, spacing=spacing)
    R = grid.world_from_grid.rotation
    origin = grid.origin - R @ (margin * grid.spacing)
    dims = tuple(np.asarray(grid.dims) + 2 * margin)
    return VoxelArray(dims, grid.spacing, RigidTransform.from_rt(R, origin))


def sweep_similarity(sweep_a, sweep_b, params, grid, min_overlap: int = 1000, threads: int = 1):
    """NCC between the two reconstructions over voxels both sweeps reach."""
    va = compound(sweep_a, grid.empty_like(), calibration=params, threads=threads)
    vb = compound(sweep_b, grid.empty_like(), calibration=params, threads=threads)
    both = (va.contributions > 0) & (vb.contributions > 0)
    n = int(both.sum())
    if n < min_overlap:
        raise InsufficientOverlapError(f"sweeps share {n} voxels, need at least {min_overlap}")
    return ncc(va.values[both], vb.values[both]), n


def _mean_rotation(seq: ScanSequence) -> Rotation:
    return Rotation.from_matrix(np.stack([p.rotation for p in seq.poses])).mean()


def hidden_translation_axis(sweep_a: ScanSequence, sweep_b: ScanSequence) -> np.ndarray | None:
    """Unit axis (transducer frame) of the relative sweep rotation, or None
    if the sweeps are nearly parallel."""
    rel = _mean_rotation(sweep_b).inv() * _mean_rotation(sweep_a)
    rv = rel.as_rotvec()
    angle = np.linalg.norm(rv)
    if angle < np.radians(5):
        return None
    return rv / angle


def _moves(params0: CalibrationParams, axis):
    """(label, direction in SEARCHED space, unit scale) for each search coordinate."""
    if axis is None:
        trans = [np.eye(3)[k] for k in range(3)]
    else:
        # two unit vectors orthogonal to the hidden axis
        _, _, vt = np.linalg.svd(axis[None, :])
        trans = [vt[1], vt[2]]
    moves = []
    for k, d in enumerate(trans):
        vec = np.zeros(8)
        vec[:3] = d
        moves.append((f"t{k}", vec, 1.0))
    for k, name in enumerate(("alpha1", "beta1", "gamma1")):
        vec = np.zeros(8)
        vec[3 + k] = 1.0
        moves.append((name, vec, np.radians(1.0)))
    for k, name in enumerate(("sx", "sy")):
        vec = np.zeros(8)
        vec[6 + k] = 1.0
        # 1 % of the initial scale per unit step
        moves.append((name, vec, getattr(params0, name) / 100.0))
    return moves


def _with_searched(params: CalibrationParams, x) -> CalibrationParams:
    return params.replace(**dict(zip(SEARCHED, x)))


def refine_by_compounding(sweep_a: ScanSequence, sweep_b: ScanSequence,
                          params0: CalibrationParams, *, spacing=None, step0: float = 1.0,
                          step_min: float = 0.01, shrink: float = 0.5,
                          min_overlap: int = 1000, min_gain: float = 2e-4,
                          threads: int = 1) -> RefineReport:
    """Coordinate pattern search maximizing crossed-sweep NCC.

    Steps start at ``step0`` (mm, degrees, or percent of the pixel scale)
    and shrink by ``shrink`` down to ``step_min``. A move is kept only if it
    raises NCC by more than ``min_gain``, which sits above the quantization
    noise of nearest-neighbour compounding; the result never scores below
    ``params0``.
    """
    if spacing is None:
        spacing = 2.5 * max(params0.sx, params0.sy)
    grid = shared_grid(sweep_a, sweep_b, params0, spacing)
    best, overlap = sweep_similarity(sweep_a, sweep_b, params0, grid, min_overlap, threads)
    start = best
    axis = hidden_translation_axis(sweep_a, sweep_b)
    moves = _moves(params0, axis)
    x = np.array([params0.as_dict()[n] for n in SEARCHED])
    params = params0
    evals = 1
    step = step0
    while step >= step_min - 1e-12:
        moved = True
        while moved:
            moved = False
            for label, vec, unit in moves:
                for sign in (1.0, -1.0):
                    cand_x = x + sign * step * unit * vec
                    if cand_x[6] <= 0 or cand_x[7] <= 0:
                        continue
                    cand = _with_searched(params0, cand_x)
                    try:
                        score, n = sweep_similarity(sweep_a, sweep_b, cand, grid, min_overlap, threads)
                    except InsufficientOverlapError:
                        continue
                    evals += 1
                    if score > best + min_gain:
                        x, params, best, overlap = cand_x, cand, score, n
                        moved = True
                        break
        log.debug("step %.4g: ncc %.6f", step, best)
        step *= shrink
    return RefineReport(params, start, best, evals, overlap,
                        axis if axis is not None else np.zeros(3))
