"""Pose stream CSV.

    # angles: deg            (or rad; positions are always mm)
    t,x,y,z,alpha,beta,gamma
    0.000,10.0,2.0,31.5,0.0,90.0,0.0

``t`` in seconds, strictly increasing. Euler angles follow
``Rz(alpha) Ry(beta) Rx(gamma)``.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..geometry import Pose6
from .errors import FormatError

COLUMNS = ["t", "x", "y", "z", "alpha", "beta", "gamma"]


def read_pose_csv(path, angle_units: str | None = None) -> list:
    """``[(t, Pose6), ...]`` with angles converted to radians.

    The angle unit comes from the ``# angles:`` header comment unless
    ``angle_units`` overrides it; a file without either is an error.
    """
    lines = Path(path).read_text().splitlines()
    units = None
    body_start = 0
    for i, line in enumerate(lines):
        if line.startswith("#"):
            text = line[1:].strip().lower()
            if text.startswith("angles:"):
                units = text.split(":", 1)[1].strip()
            body_start = i + 1
        else:
            break
    units = angle_units or units
    if units not in ("deg", "rad"):
        raise FormatError(path, "header", f"angle units must be declared as deg or rad, got {units!r}")
    rows = list(csv.reader(lines[body_start:]))
    if not rows or [c.strip() for c in rows[0]] != COLUMNS:
        raise FormatError(path, f"line {body_start + 1}", f"expected header {','.join(COLUMNS)}")
    out = []
    last_t = -np.inf
    for k, row in enumerate(rows[1:]):
        lineno = body_start + 2 + k
        if not row:
            continue
        if len(row) != len(COLUMNS):
            raise FormatError(path, f"line {lineno}", f"expected {len(COLUMNS)} fields, got {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise FormatError(path, f"line {lineno}", str(exc)) from None
        if not np.all(np.isfinite(vals)):
            raise FormatError(path, f"line {lineno}", "non-finite value")
        t = vals[0]
        if t <= last_t:
            raise FormatError(path, f"line {lineno}", f"time {t} not after previous {last_t}")
        last_t = t
        ang = vals[4:]
        if units == "deg":
            ang = np.radians(ang)
        out.append((t, Pose6(*vals[1:4], *ang)))
    return out


def write_pose_csv(path, times, poses, angle_units: str = "deg"):
    if angle_units not in ("deg", "rad"):
        raise ValueError(angle_units)
    with open(path, "w", newline="") as fh:
        fh.write(f"# angles: {angle_units}\n")
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for t, p in zip(times, poses):
            ang = np.array([p.alpha, p.beta, p.gamma])
            if angle_units == "deg":
                ang = np.degrees(ang)
            w.writerow([repr(float(t)), *(repr(float(v)) for v in (p.x, p.y, p.z, *ang))])
