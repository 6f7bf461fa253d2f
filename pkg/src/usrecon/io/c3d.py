"""Reader for marker trajectories in C3D files, plus a minimal writer.

Only Intel (little-endian) files are handled. Point data may be stored
as scaled 16-bit integers (``POINT:SCALE > 0``) or 32-bit floats
(``POINT:SCALE < 0``). Analog samples interleaved with the points are
skipped. The writer exists to produce test fixtures.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, UnsupportedFormatError

BLOCK = 512
KEY = 0x50
INTEL = 84
PROCESSORS = {84: "Intel", 85: "DEC", 86: "MIPS"}
# parameter type codes
CHAR, BYTE, INT, FLOAT = -1, 1, 2, 4
_NUMERIC = {BYTE: "<i1", INT: "<i2", FLOAT: "<f4"}


@dataclass
class C3dFile:
    """Decoded header, parameters and point samples.

    ``points`` is (frames, markers, 3) in mm, NaN where the residual
    word marks the sample invalid; ``residuals`` carries the raw word.
    """

    n_points: int
    rate: float
    first_frame: int
    last_frame: int
    scale: float
    parameters: dict = field(default_factory=dict)
    labels: list = field(default_factory=list)
    points: np.ndarray = None
    residuals: np.ndarray = None

    @property
    def n_frames(self):
        return self.last_frame - self.first_frame + 1

    @property
    def times(self):
        return (np.arange(self.n_frames) + self.first_frame - 1) / self.rate

    @property
    def valid(self):
        return self.residuals >= 0


def _parse_param_data(path, buf, pos, ptype, dims):
    n = int(np.prod(dims)) if dims else 1
    if ptype == CHAR:
        raw = buf[pos:pos + n]
        if len(dims) <= 1:
            return raw.decode("latin-1").rstrip(" \x00")
        width = dims[0]
        count = n // width
        return [raw[i * width:(i + 1) * width].decode("latin-1").rstrip(" \x00") for i in range(count)]
    if ptype not in _NUMERIC:
        raise FormatError(path, f"byte {pos}", f"unknown parameter type {ptype}")
    arr = np.frombuffer(buf, dtype=_NUMERIC[ptype], count=n, offset=pos)
    if not dims:
        return arr[0].item()
    return arr.reshape(dims[::-1]) if len(dims) > 1 else arr.copy()


def _parse_parameters(path, data, start):
    """Walk the group/parameter entries; return ``{GROUP: {PARAM: value}}``."""
    if start + 4 > len(data):
        raise FormatError(path, f"byte {start}", "parameter section beyond end of file")
    head = data[start:start + 4]
    if head[1] != KEY:
        raise FormatError(path, f"byte {start + 1}", f"parameter section key {head[1]:#x} != 0x50")
    proc = head[3]
    if proc != INTEL:
        name = PROCESSORS.get(proc, f"unknown ({proc})")
        raise UnsupportedFormatError(path, f"byte {start + 3}", f"processor type {name}: only Intel files are supported")
    end = start + head[2] * BLOCK
    groups, pending = {}, []
    pos = start + 4
    while pos + 2 <= end:
        name_len = struct.unpack_from("<b", data, pos)[0]
        gid = struct.unpack_from("<b", data, pos + 1)[0]
        if name_len == 0:
            break
        entry = pos
        pos += 2
        name = data[pos:pos + abs(name_len)].decode("latin-1").upper()
        pos += abs(name_len)
        nxt = struct.unpack_from("<h", data, pos)[0]
        after = pos + nxt
        pos += 2
        if gid < 0:
            groups.setdefault(-gid, [name, {}])[0] = name
        else:
            ptype = struct.unpack_from("<b", data, pos)[0]
            ndim = data[pos + 1]
            dims = list(struct.unpack_from(f"<{ndim}B", data, pos + 2))
            pos += 2 + ndim
            try:
                value = _parse_param_data(path, data, pos, ptype, dims)
            except ValueError as exc:
                raise FormatError(path, f"byte {entry}", f"parameter {name}: {exc}") from None
            pending.append((gid, name, value))
        if nxt == 0:
            break
        if after <= entry:
            raise FormatError(path, f"byte {entry}", "parameter chain does not advance")
        pos = after
    for gid, name, value in pending:
        groups.setdefault(gid, [f"GROUP{gid}", {}])[1][name] = value
    return {g[0]: g[1] for g in groups.values()}


def read_c3d(path) -> C3dFile:
    data = Path(path).read_bytes()
    if len(data) < BLOCK:
        raise FormatError(path, "byte 0", "file shorter than the 512-byte header")
    pblock, key = data[0], data[1]
    if key != KEY:
        raise FormatError(path, "byte 1", f"header key {key:#x} != 0x50")
    words = struct.unpack_from("<5H", data, 2)
    n_points, n_analog, first, last, _gap = words
    scale = struct.unpack_from("<f", data, 12)[0]
    data_block = struct.unpack_from("<H", data, 16)[0]
    rate = struct.unpack_from("<f", data, 20)[0]

    params = _parse_parameters(path, data, (pblock - 1) * BLOCK)
    point = params.get("POINT", {})
    used = point.get("USED", n_points)
    if int(used) != n_points:
        raise FormatError(path, "POINT:USED", f"{used} points disagree with header count {n_points}")
    scale = float(point.get("SCALE", scale))
    rate = float(point.get("RATE", rate))
    if rate <= 0:
        raise FormatError(path, "byte 20", f"invalid frame rate {rate}")
    labels = point.get("LABELS", [])
    if isinstance(labels, str):
        labels = [labels]
    labels = list(labels)[:n_points]
    labels += [f"POINT{i + 1}" for i in range(len(labels), n_points)]
    if last < first:
        raise FormatError(path, "byte 6", f"last frame {last} before first frame {first}")

    is_float = scale < 0
    words_per_frame = 4 * n_points + n_analog
    dtype = "<f4" if is_float else "<i2"
    n_frames = last - first + 1
    offset = (data_block - 1) * BLOCK
    need = n_frames * words_per_frame * np.dtype(dtype).itemsize
    if offset + need > len(data):
        raise FormatError(path, f"byte {offset}", f"point data needs {need} bytes, {len(data) - offset} available")
    raw = np.frombuffer(data, dtype=dtype, count=n_frames * words_per_frame, offset=offset)
    raw = raw.reshape(n_frames, words_per_frame)[:, :4 * n_points].reshape(n_frames, n_points, 4)
    xyz = raw[..., :3].astype(np.float64)
    if is_float:
        resid = np.round(raw[..., 3]).astype(np.int64)
        resid = np.where(resid > 32767, resid - 65536, resid)
    else:
        xyz = xyz * scale
        resid = raw[..., 3].astype(np.int64)
    xyz[resid < 0] = np.nan
    return C3dFile(n_points, rate, first, last, scale, params, labels, xyz, resid)


def read_c3d_points(path, marker_names):
    """Samples of the named marker(s) as ``[(t, xyz), ...]``.

    A single name yields 3-vectors; a list of names yields (k, 3) arrays.
    Invalid samples (negative residual) are NaN.
    """
    c3d = read_c3d(path)
    single = isinstance(marker_names, str)
    names = [marker_names] if single else list(marker_names)
    lookup = {lab.upper(): i for i, lab in enumerate(c3d.labels)}
    missing = [n for n in names if n.upper() not in lookup]
    if missing:
        raise KeyError(f"{path}: marker(s) {missing} not found; available labels: {c3d.labels}")
    idx = [lookup[n.upper()] for n in names]
    pts = c3d.points[:, idx, :]
    if single:
        pts = pts[:, 0, :]
    return list(zip(c3d.times.tolist(), pts))


def _param_entry(gid, name, ptype, dims, payload, last=False):
    name_b = name.upper().encode("ascii")
    body = struct.pack("<bB", ptype, len(dims)) + bytes(dims) + payload + b"\x00"
    nxt = 0 if last else 2 + len(body)
    return struct.pack("<bb", len(name_b), gid) + name_b + struct.pack("<h", nxt) + body


def _group_entry(gid, name):
    name_b = name.upper().encode("ascii")
    return struct.pack("<bb", len(name_b), -gid) + name_b + struct.pack("<h", 3) + b"\x00"


def write_c3d_points(path, labels, points, rate, scale=0.01, first_frame=1,
                     valid=None, analog_per_frame=0):
    """Write (frames, markers, 3) mm ``points``.

    ``scale > 0`` stores scaled int16, ``scale < 0`` stores float32.
    ``valid`` (frames, markers) marks samples written with residual -1.
    ``analog_per_frame`` zero-filled analog words are interleaved.
    """
    points = np.asarray(points, dtype=np.float64)
    n_frames, n_points, _ = points.shape
    valid = np.ones((n_frames, n_points), bool) if valid is None else np.asarray(valid, bool)
    width = max((len(l) for l in labels), default=1)
    lab_payload = b"".join(l.ljust(width).encode("ascii") for l in labels)
    entries = [
        _group_entry(1, "POINT"),
        _param_entry(1, "USED", INT, [], struct.pack("<h", n_points)),
        _param_entry(1, "SCALE", FLOAT, [], struct.pack("<f", scale)),
        _param_entry(1, "RATE", FLOAT, [], struct.pack("<f", rate)),
        _param_entry(1, "FRAMES", INT, [], struct.pack("<h", min(n_frames, 32767))),
        _param_entry(1, "UNITS", CHAR, [2], b"mm"),
        _param_entry(1, "LABELS", CHAR, [width, n_points], lab_payload, last=True),
    ]
    section = bytes([1, KEY, 0, INTEL]) + b"".join(entries)
    n_blocks = -(-len(section) // BLOCK)
    section = bytearray(section.ljust(n_blocks * BLOCK, b"\x00"))
    section[2] = n_blocks
    data_block = 2 + n_blocks

    header = bytearray(BLOCK)
    header[0], header[1] = 2, KEY
    struct.pack_into("<5H", header, 2, n_points, analog_per_frame, first_frame,
                     first_frame + n_frames - 1, 10)
    struct.pack_into("<f", header, 12, scale)
    struct.pack_into("<H", header, 16, data_block)
    struct.pack_into("<f", header, 20, rate)

    resid = np.where(valid, 0, -1)
    if scale < 0:
        frame = np.concatenate([points, resid[..., None]], axis=2).reshape(n_frames, -1)
        dtype = "<f4"
    else:
        q = np.round(points / float(np.float32(scale)))  # the stored scale is float32
        if np.abs(q).max(initial=0) > 32767:
            raise ValueError("points exceed int16 range at this scale; use a larger or negative scale")
        frame = np.concatenate([q, resid[..., None]], axis=2).reshape(n_frames, -1)
        dtype = "<i2"
    frame = np.concatenate([frame, np.zeros((n_frames, analog_per_frame))], axis=1)
    body = frame.astype(dtype).tobytes()
    Path(path).write_bytes(bytes(header) + bytes(section) + body)
