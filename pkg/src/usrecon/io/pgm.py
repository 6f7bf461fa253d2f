"""Frame sequences stored as binary PGM files plus a ``meta.txt`` sidecar.

Layout: ``frame_000000.pgm``, ``frame_000001.pgm``, ... (P5, maxval <= 255)
and ``meta.txt`` with ``sx``, ``sy`` (mm/pixel) and ``rate`` (Hz).
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from ..imaging import Frame
from .errors import FormatError, UnsupportedDepthError, UnsupportedFormatError
from .keyvalue import read_kv, write_kv

FRAME_RE = re.compile(r"^frame_(\d{6})\.pgm$")
SIDECAR = "meta.txt"


def _tokens(data: bytes, path, count: int):
    """First ``count`` whitespace-separated header tokens and the offset after them."""
    toks, pos = [], 0
    while len(toks) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError(path, f"byte {pos}", "truncated header")
        toks.append(data[start:pos])
    return toks, pos


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic == b"P2":
        raise UnsupportedFormatError(path, "byte 0", "ASCII PGM (P2) is not supported; use binary P5")
    if magic != b"P5":
        raise FormatError(path, "byte 0", f"not a binary PGM (magic {magic!r})")
    toks, pos = _tokens(data[2:], path, 3)
    pos += 2
    try:
        w, h, maxval = (int(t) for t in toks)
    except ValueError:
        raise FormatError(path, "header", f"non-integer header fields {toks}") from None
    if maxval > 255:
        raise UnsupportedDepthError(path, "header", f"maxval {maxval}: only 8-bit frames are supported")
    if w <= 0 or h <= 0 or maxval <= 0:
        raise FormatError(path, "header", f"invalid size {w}x{h} maxval {maxval}")
    pos += 1  # single whitespace after maxval
    raster = data[pos:pos + w * h]
    if len(raster) != w * h:
        raise FormatError(path, f"byte {pos}", f"expected {w * h} pixel bytes, found {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()


def write_pgm(path, img: np.ndarray):
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def read_sidecar(path) -> dict:
    """``sx``, ``sy``, ``rate`` and ``start_time`` (default 0) as floats."""
    side = Path(path) / SIDECAR
    if not side.exists():
        raise FormatError(side, "file", "missing sidecar with sx, sy, rate")
    kv = read_kv(side)
    try:
        meta = {k: float(kv[k]) for k in ("sx", "sy", "rate")}
        meta["start_time"] = float(kv.get("start_time", 0.0))
    except KeyError as exc:
        raise FormatError(side, "keys", f"missing {exc.args[0]!r}") from None
    except ValueError as exc:
        raise FormatError(side, "values", str(exc)) from None
    return meta


def read_frames(path, format: str = "pgm-sequence") -> list:
    if format != "pgm-sequence":
        raise ValueError(f"unknown frame format {format!r}")
    d = Path(path)
    if not d.is_dir():
        raise FileNotFoundError(f"frames directory {d} does not exist")
    meta = read_sidecar(d)
    files = sorted((int(m.group(1)), p) for p in d.iterdir() if (m := FRAME_RE.match(p.name)))
    if not files:
        raise FormatError(d, "directory", "no frame_NNNNNN.pgm files")
    frames, shape = [], None
    for _, p in files:
        img = read_pgm(p)
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise FormatError(p, "header", f"size {img.shape[::-1]} differs from first frame {shape[::-1]}")
        frames.append(Frame(img, meta["sx"], meta["sy"]))
    return frames


def write_frames(path, frames, rate: float, start_time: float = 0.0):
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        write_pgm(d / f"frame_{i:06d}.pgm", f.intensities)
    f0 = frames[0]
    write_kv(d / SIDECAR, {"sx": repr(f0.sx), "sy": repr(f0.sy), "rate": repr(float(rate)),
                           "start_time": repr(float(start_time))},
             "pixel size in mm/pixel, frame rate in Hz, start time in s")
