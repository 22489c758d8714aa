"""XRAS raster container and canonical report serialization.

The XRAS byte layout, canonical JSON and the CSV tables are the toolkit's
wire contracts. Everything is little-endian and bit-exact:

    magic      4s   b"XRAS"
    version    u16  1
    width      u32
    height     u32
    bands      u16
    dtype      u8   0=U8, 1=U16, 2=F32
    flags      u8   bit0 nodata present, bit1 normalized
    nodata     f64  (0 when absent)
    gsd        f64  (0 when unknown)
    band_roles bands x u8
    payload    band-sequential, row-major samples
"""

from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .raster import (N_CLASSES, BandRole, Dtype, LabelMap, MultibandRaster,
                     ProbabilityMap)

MAGIC = b"XRAS"
VERSION = 1
_HEADER = struct.Struct("<4sHIIHBBdd")
FLAG_NODATA = 0x01
FLAG_NORMALIZED = 0x02


def write_xras(obj: MultibandRaster | LabelMap | ProbabilityMap,
               path: str | Path | None = None) -> bytes:
    """Encode a raster-like object; write to `path` when given.

    Label maps become U8 single-band rasters with role OTHER; probability
    maps become F32 4-band rasters (the coverage-weight plane is not
    stored, so uncovered pixels round-trip as all-zero rows). F32 payloads
    with NaN are rejected: use nodata instead.
    """
    if isinstance(obj, LabelMap):
        raster = MultibandRaster(obj.codes[None, :, :], (BandRole.OTHER,))
    elif isinstance(obj, ProbabilityMap):
        probs = obj.probs.copy()
        probs[:, obj.weight == 0] = 0.0
        raster = MultibandRaster(probs, (BandRole.OTHER,) * N_CLASSES)
    else:
        raster = obj

    data = np.ascontiguousarray(raster.data)
    if raster.dtype == Dtype.F32 and np.isnan(data).any():
        raise ValueError("NaN samples are not writable; use nodata instead")
    flags = 0
    nodata = 0.0
    if raster.nodata is not None:
        flags |= FLAG_NODATA
        nodata = float(raster.nodata)
    if raster.normalized:
        flags |= FLAG_NORMALIZED
    gsd = 0.0 if raster.gsd is None else float(raster.gsd)
    header = _HEADER.pack(MAGIC, VERSION, raster.width, raster.height,
                          raster.bands, int(raster.dtype), flags, nodata, gsd)
    roles = bytes(int(r) for r in raster.band_roles)
    blob = header + roles + data.tobytes()
    if path is not None:
        Path(path).write_bytes(blob)
    return blob


def read_xras(src: str | Path | bytes) -> MultibandRaster:
    """Lossless decode of an XRAS blob or file."""
    buf = src if isinstance(src, (bytes, bytearray)) else Path(src).read_bytes()
    if len(buf) < _HEADER.size:
        raise ValueError("corrupt file: shorter than the header")
    magic, version, width, height, bands, dtype_code, flags, nodata, gsd = \
        _HEADER.unpack_from(buf, 0)
    if magic != MAGIC or version != VERSION:
        raise ValueError("unsupported format")
    try:
        dtype = Dtype(dtype_code)
    except ValueError:
        raise ValueError("unsupported format: unknown dtype code") from None
    role_end = _HEADER.size + bands
    if len(buf) < role_end:
        raise ValueError("corrupt file: truncated band roles")
    try:
        roles = tuple(BandRole(b) for b in buf[_HEADER.size:role_end])
    except ValueError:
        raise ValueError("corrupt file: unknown band role") from None
    expect = width * height * bands * dtype.numpy_dtype.itemsize
    payload = buf[role_end:]
    if len(payload) != expect:
        raise ValueError("corrupt file: payload length mismatch")
    data = np.frombuffer(payload, dtype=dtype.numpy_dtype).reshape(bands, height, width)
    return MultibandRaster(data.copy(), roles,
                           nodata=nodata if flags & FLAG_NODATA else None,
                           gsd=gsd if gsd != 0.0 else None,
                           normalized=bool(flags & FLAG_NORMALIZED))


def read_label_map(src: str | Path | bytes) -> LabelMap:
    raster = read_xras(src)
    if raster.dtype != Dtype.U8 or raster.bands != 1:
        raise ValueError("label rasters must be single-band U8")
    return LabelMap(raster.data[0])       # validates the code schema


def read_probability_map(src: str | Path | bytes) -> ProbabilityMap:
    raster = read_xras(src)
    if raster.dtype != Dtype.F32 or raster.bands != N_CLASSES:
        raise ValueError("probability rasters must be 4-band F32")
    weight = (raster.data.sum(axis=0) > 0.5).astype(np.int32)
    return ProbabilityMap(raster.data, weight)


# ---------------------------------------------------------------------------
# canonical JSON / CSV
# ---------------------------------------------------------------------------

def _canon_value(obj: Any) -> str:
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if not np.isfinite(value):
            raise ValueError("non-finite numbers are not serializable")
        return format(value, ".6g")
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=True)
    if isinstance(obj, dict):
        keys = sorted(str(k) for k in obj)
        if len(keys) != len(obj):
            raise ValueError("duplicate keys after stringification")
        items = (f"{json.dumps(k, ensure_ascii=True)}:{_canon_value(obj[k])}"
                 for k in keys)
        return "{" + ",".join(items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_canon_value(v) for v in obj) + "]"
    raise TypeError(f"cannot canonicalize {type(obj).__name__}")


def canonical_json(obj: Any) -> str:
    """Deterministic JSON: sorted keys, floats at 6 significant digits."""
    return _canon_value(obj)


def write_report(report: Any, path: str | Path) -> None:
    """Serialize a report object (anything with to_dict, or a plain dict)."""
    doc = report.to_dict() if hasattr(report, "to_dict") else report
    Path(path).write_text(canonical_json(doc) + "\n")


def format_cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".6g")
    return str(value)


def write_csv(path: str | Path, columns: Sequence[str],
              rows: Sequence[Sequence[Any]]) -> None:
    """CSV with a fixed, documented column order in the header row."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_cell(v) for v in row])
    Path(path).write_text(out.getvalue())
