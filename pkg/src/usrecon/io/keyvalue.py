"""Flat ``key=value`` text files: calibration results, delays, configs.

``#`` starts a comment; blank lines are ignored.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..calibration import PARAM_NAMES, CalibrationParams, SolveReport
from ..geometry import Pose6
from .errors import FormatError

CALIBRATION_FORMAT_VERSION = 1


def read_kv(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(path, f"line {lineno}", f"expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise FormatError(path, f"line {lineno}", "empty key")
        if key in out:
            raise FormatError(path, f"line {lineno}", f"duplicate key {key!r}")
        out[key] = value
    return out


def _text(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))  # shortest exact round trip
    return str(v)


def write_kv(path, items: dict, header: str | None = None):
    lines = [f"# {h}" for h in (header or "").splitlines() if h]
    lines += [f"{k}={_text(v)}" for k, v in items.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def write_calibration(path, params: CalibrationParams, extra: dict | None = None):
    items = {"format_version": CALIBRATION_FORMAT_VERSION, "units": "mm,rad"}
    items.update(params.as_dict())
    items["fixed"] = ",".join(n for n in PARAM_NAMES if n in params.fixed)
    items.update(extra or {})
    write_kv(path, items, "image -> transducer calibration (rTp) and phantom pose (cTt)\n"
                          "euler order Rz(alpha) Ry(beta) Rx(gamma)")


def read_calibration(path) -> CalibrationParams:
    kv = read_kv(path)
    version = kv.get("format_version")
    if version != str(CALIBRATION_FORMAT_VERSION):
        raise FormatError(path, "format_version", f"unsupported calibration version {version!r}")
    if kv.get("units", "mm,rad") != "mm,rad":
        raise FormatError(path, "units", f"expected mm,rad, got {kv['units']!r}")
    missing = [n for n in PARAM_NAMES if n not in kv]
    if missing:
        raise FormatError(path, "keys", f"missing parameters {missing}")
    try:
        vec = [float(kv[n]) for n in PARAM_NAMES]
    except ValueError as exc:
        raise FormatError(path, "values", str(exc)) from None
    fixed = frozenset(f for f in kv.get("fixed", "").split(",") if f)
    return CalibrationParams.from_vector(vec, fixed)


def write_covariance_csv(path, report: SolveReport):
    names = report.params.free_names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["param", *names])
        for n, row in zip(names, report.covariance):
            w.writerow([n, *(repr(float(v)) for v in row)])


def read_covariance_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    cov = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return names, cov
