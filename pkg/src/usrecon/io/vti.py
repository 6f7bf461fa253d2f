"""VTK XML ImageData (``.vti``) export with appended raw 8-bit point data.

Byte layout written by :func:`write_vti`::

    <?xml version="1.0"?>
    <VTKFile type="ImageData" version="1.0" byte_order="LittleEndian" header_type="UInt32">
      <ImageData WholeExtent="0 X 0 Y 0 Z" Origin="ox oy oz" Spacing="dx dy dz"[ Direction="9 values"]>
        <Piece Extent="0 X 0 Y 0 Z">
          <PointData Scalars="NAME">
            <DataArray type="UInt8" Name="NAME" format="appended" offset="0"/>
          </PointData>
        </Piece>
      </ImageData>
      <AppendedData encoding="raw">
    _<uint32 LE byte count><count bytes, x fastest, then y, then z>
      </AppendedData>
    </VTKFile>

``Direction`` (row-major rotation) is emitted only for rotated grids.
"""
from __future__ import annotations

import io
import re
import zipfile
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..compounding import VoxelArray, round_half_away
from ..geometry import RigidTransform
from .errors import FormatError


@dataclass
class VtiImage:
    dims: tuple
    origin: np.ndarray
    spacing: np.ndarray
    direction: np.ndarray
    name: str
    data: np.ndarray  # flat uint8, x fastest

    def volume(self):
        xl, yl, zl = self.dims
        return self.data.reshape(zl, yl, xl)


def _fmt(values):
    return " ".join(repr(float(v)) for v in values)


def to_uint8(values) -> np.ndarray:
    return np.clip(round_half_away(np.asarray(values, dtype=float)), 0, 255).astype(np.uint8)


def vti_bytes(dims, origin, spacing, data, direction=None, name="intensity") -> bytes:
    xl, yl, zl = (int(d) for d in dims)
    data = np.ascontiguousarray(data, dtype=np.uint8).ravel()
    if data.size != xl * yl * zl:
        raise ValueError(f"{data.size} values for dims {dims}")
    ext = f"0 {xl - 1} 0 {yl - 1} 0 {zl - 1}"
    attrs = f'WholeExtent="{ext}" Origin="{_fmt(origin)}" Spacing="{_fmt(spacing)}"'
    if direction is not None and not np.array_equal(np.asarray(direction, float), np.eye(3)):
        attrs += f' Direction="{_fmt(np.asarray(direction, float).ravel())}"'
    head = (
        '<?xml version="1.0"?>\n'
        '<VTKFile type="ImageData" version="1.0" byte_order="LittleEndian" header_type="UInt32">\n'
        f"  <ImageData {attrs}>\n"
        f'    <Piece Extent="{ext}">\n'
        f'      <PointData Scalars="{name}">\n'
        f'        <DataArray type="UInt8" Name="{name}" format="appended" offset="0"/>\n'
        "      </PointData>\n"
        "    </Piece>\n"
        "  </ImageData>\n"
        '  <AppendedData encoding="raw">\n'
        "_"
    )
    tail = "\n  </AppendedData>\n</VTKFile>\n"
    return head.encode() + np.uint32(data.size).astype("<u4").tobytes() + data.tobytes() + tail.encode()


def mask_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + "_mask" + p.suffix)


def write_vti(va: VoxelArray, path, also_mask=None):
    """Write ``va.values`` (rounded, clipped to 0..255); ``also_mask`` goes to ``<stem>_mask.vti`` as 0/1."""
    R = va.world_from_grid.rotation
    Path(path).write_bytes(vti_bytes(va.dims, va.origin, va.spacing, to_uint8(va.values), R))
    if also_mask is not None:
        m = np.asarray(also_mask, dtype=bool).ravel().astype(np.uint8)
        mask_path(path).write_bytes(vti_bytes(va.dims, va.origin, va.spacing, m, R, name="mask"))


def read_vti(path) -> VtiImage:
    """Read files in the layout produced by :func:`write_vti`."""
    raw = Path(path).read_bytes()
    m = re.search(rb'<AppendedData encoding="raw">\s*_', raw)
    if m is None:
        raise FormatError(path, "AppendedData", "no raw appended data section")
    start = m.end()
    try:
        root = ET.fromstring(raw[:m.start()].decode() + "</VTKFile>")
    except ET.ParseError as exc:
        raise FormatError(path, f"xml {exc.position}", str(exc)) from None
    img = root.find("ImageData")
    arr = root.find(".//PointData/DataArray")
    if img is None or arr is None:
        raise FormatError(path, "xml", "missing ImageData or DataArray")
    if arr.get("type") != "UInt8":
        raise FormatError(path, "DataArray", f"unsupported type {arr.get('type')}")
    ext = [int(v) for v in img.get("WholeExtent").split()]
    dims = (ext[1] - ext[0] + 1, ext[3] - ext[2] + 1, ext[5] - ext[4] + 1)
    origin = np.array(img.get("Origin").split(), dtype=float)
    spacing = np.array(img.get("Spacing").split(), dtype=float)
    direction = np.array(img.get("Direction", "1 0 0 0 1 0 0 0 1").split(), dtype=float).reshape(3, 3)
    off = start + int(arr.get("offset", 0))
    if off + 4 > len(raw):
        raise FormatError(path, f"byte {off}", "truncated length header")
    n = int(np.frombuffer(raw, "<u4", 1, off)[0])
    if n != int(np.prod(dims)) or off + 4 + n > len(raw):
        raise FormatError(path, f"byte {off}", f"payload of {n} bytes does not match dims {dims}")
    data = np.frombuffer(raw, np.uint8, n, off + 4).copy()
    return VtiImage(dims, origin, spacing, direction, arr.get("Name"), data)


def save_npz(path, **arrays):
    """Uncompressed ``.npz`` with fixed member timestamps, so equal arrays give equal bytes."""
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asanyarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def save_accumulator(va: VoxelArray, path, mask=None, corners=None):
    """Full-precision voxel state (values, counts, grid pose) as ``.npz``.

    ``corners`` (n, 4, 3) keeps the frame outlines needed for the hull mask.
    """
    extra = {}
    if mask is not None:
        extra["mask"] = np.asarray(mask, bool)
    if corners is not None:
        extra["corners"] = np.asarray(corners, float)
    save_npz(path, dims=np.array(va.dims), spacing=va.spacing,
             world_from_grid=va.world_from_grid.matrix, values=va.values,
             contributions=va.contributions, sums=va.sums, **extra)


def load_accumulator(path):
    """``(VoxelArray, extras)`` where extras holds ``mask`` and/or ``corners`` if saved."""
    with np.load(path) as z:
        va = VoxelArray(tuple(int(d) for d in z["dims"]), z["spacing"], RigidTransform(z["world_from_grid"]),
                        z["values"].copy(), z["contributions"].copy(), z["sums"].copy())
        extras = {k: z[k].copy() for k in ("mask", "corners") if k in z.files}
    return va, extras
