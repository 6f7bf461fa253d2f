"""Calibration quality: accuracy against a known truth and precision as spread.

Measurements are scalars (distances) or rows of 3-vectors (point positions),
all in mm.
"""
from __future__ import annotations

import numpy as np


def _measures(measurements):
    m = np.asarray(measurements, dtype=float)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2 or len(m) < 2:
        raise ValueError(f"need at least 2 repeated measurements, got shape {np.shape(measurements)}")
    if not np.all(np.isfinite(m)):
        raise ValueError("measurements must be finite")
    return m


def accuracy(measurements, truth) -> float:
    m = _measures(measurements)
    return float(np.linalg.norm(m.mean(axis=0) - np.broadcast_to(np.asarray(truth, float), m.shape[1:])))


def point_accuracy(points, truth) -> float:
    """Distance between the mean reconstructed position and the known point."""
    return accuracy(np.asarray(points, float).reshape(-1, 3), truth)


def distance_accuracy(distances, truth) -> float:
    return accuracy(np.ravel(distances), truth)


def reconstruction_precision(measurements) -> float:
    """RMS distance of the measurements from their mean."""
    m = _measures(measurements)
    d = m - m.mean(axis=0)
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def reconstruct_points(params, tTr, pixels) -> np.ndarray:
    """Tracker-frame positions (mm) of image pixels ``(u, v)`` seen from poses ``tTr``.

    ``tTr`` is (n, 4, 4) and ``pixels`` is (n, 2): one pixel per pose.
    """
    T = np.asarray(tTr, float).reshape(-1, 4, 4)
    px = np.asarray(pixels, float).reshape(-1, 2)
    q = np.column_stack([params.sx * px[:, 0], params.sy * px[:, 1], np.zeros(len(px)), np.ones(len(px))])
    r = q @ params.rTp.matrix.T
    return np.einsum("nij,nj->ni", T, r)[:, :3]


def summary_table(rows) -> str:
    """Render ``[(name, accuracy, precision), ...]`` as an aligned text table."""
    lines = [f"{'measure':<20} {'accuracy_mm':>12} {'precision_mm':>13}"]
    for name, acc, prec in rows:
        lines.append(f"{name:<20} {acc:>12.4f} {prec:>13.4f}")
    return "\n".join(lines)
