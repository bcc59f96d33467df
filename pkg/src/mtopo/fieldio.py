"""Reading and writing voxel fields.

Native container: one ASCII header line

    VOXFIELD v1 nx ny nz sx sy sz ox oy oz dtype

followed by ``\\n`` and ``nx*ny*nz`` little-endian values (``f64`` or ``u8``)
in the row-major layout of :mod:`mtopo.grid`. Floats in the header are written
with ``repr`` so they round-trip exactly.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .grid import GridSpec, ScalarField

MAGIC = "VOXFIELD"
VERSION = "v1"
_DTYPES = {"f64": np.dtype("<f8"), "u8": np.dtype("u1")}
_MAX_HEADER = 4096


class FieldFormatError(ValueError):
    """Base class for field file errors."""


class MalformedHeaderError(FieldFormatError):
    pass


class TruncatedPayloadError(FieldFormatError):
    pass


class DimensionMismatchError(FieldFormatError):
    """Payload is longer than the header declares, or the grid is not the expected one."""


def _header(spec: GridSpec, dtype: str) -> bytes:
    parts = [MAGIC, VERSION, *map(str, spec.dims), *map(repr, spec.spacing), *map(repr, spec.origin), dtype]
    return (" ".join(parts) + "\n").encode("ascii")


def write_field(f: ScalarField, path, dtype: str | None = None) -> None:
    """Write ``f``; binary fields default to ``u8``, everything else to ``f64``."""
    if dtype is None:
        dtype = "u8" if f.is_binary() else "f64"
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r}")
    if dtype == "u8" and not f.is_binary():
        raise ValueError("u8 storage requires a binary field")
    payload = np.ascontiguousarray(f.values, dtype=_DTYPES[dtype]).tobytes()
    Path(path).write_bytes(_header(f.spec, dtype) + payload)


def _parse_header(line: bytes) -> tuple[GridSpec, str]:
    try:
        tokens = line.decode("ascii").split()
    except UnicodeDecodeError as exc:
        raise MalformedHeaderError("header is not ASCII") from exc
    if len(tokens) != 12 or tokens[0] != MAGIC:
        raise MalformedHeaderError(f"expected 12 header tokens starting with {MAGIC}, got {tokens[:12]}")
    if tokens[1] != VERSION:
        raise MalformedHeaderError(f"unsupported version {tokens[1]!r}")
    try:
        dims = tuple(int(t) for t in tokens[2:5])
        spacing = tuple(float(t) for t in tokens[5:8])
        origin = tuple(float(t) for t in tokens[8:11])
        spec = GridSpec(dims, spacing, origin)
    except ValueError as exc:
        raise MalformedHeaderError(f"bad grid description: {exc}") from exc
    if tokens[11] not in _DTYPES:
        raise MalformedHeaderError(f"unknown dtype {tokens[11]!r}")
    return spec, tokens[11]


def read_field(path, expected: GridSpec | None = None) -> ScalarField:
    data = Path(path).read_bytes()
    nl = data.find(b"\n", 0, _MAX_HEADER)
    if nl < 0:
        raise MalformedHeaderError("no header line found")
    spec, dtype = _parse_header(data[:nl])
    dt = _DTYPES[dtype]
    payload = data[nl + 1:]
    need = spec.n * dt.itemsize
    if len(payload) < need:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, header requires {need}")
    if len(payload) > need:
        raise DimensionMismatchError(f"payload has {len(payload) - need} trailing bytes beyond declared dims")
    if expected is not None and not expected.matches(spec):
        raise DimensionMismatchError(f"field grid {spec} does not match expected {expected}")
    values = np.frombuffer(payload, dtype=dt).astype(np.float64)
    return ScalarField(spec, values.reshape(spec.dims))


def write_vtk(path, fields: dict[str, ScalarField], title: str = "mtopo field") -> None:
    """Legacy ASCII VTK ``STRUCTURED_POINTS`` file with one scalar array per entry."""
    if not fields:
        raise ValueError("no fields to write")
    spec = next(iter(fields.values())).spec
    lines = [
        "# vtk DataFile Version 3.0",
        title[:255],
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS {} {} {}".format(*spec.dims),
        "ORIGIN {!r} {!r} {!r}".format(*spec.origin),
        "SPACING {!r} {!r} {!r}".format(*spec.spacing),
        f"POINT_DATA {spec.n}",
    ]
    for name, f in fields.items():
        if not f.spec.matches(spec):
            raise DimensionMismatchError(f"field {name!r} is on a different grid")
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        # VTK wants x fastest
        vals = f.values.transpose(2, 1, 0).reshape(-1)
        lines.extend(" ".join(repr(float(v)) for v in vals[i:i + 9]) for i in range(0, vals.size, 9))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
