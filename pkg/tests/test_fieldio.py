import os
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtopo.fieldio import (DimensionMismatchError, MalformedHeaderError, TruncatedPayloadError, read_field,
                           write_field, write_vtk)
from mtopo.grid import GridSpec, ScalarField


@settings(max_examples=25, deadline=None)
@given(st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4)),
       st.floats(0.01, 10.0), st.floats(-100, 100), st.integers(0, 2**31))
def test_roundtrip_bit_exact(dims, h, ox, seed):
    spec = GridSpec(dims, (h, h * 1.5, h), (ox, -ox / 3, 0.1))
    vals = np.random.default_rng(seed).normal(size=dims)
    f = ScalarField(spec, vals)
    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "f.voxfield")
        write_field(f, p)
        g = read_field(p)
    assert g.spec == spec
    assert np.array_equal(g.values, f.values)


def test_binary_fields_use_u8(tmp_path):
    spec = GridSpec((3, 2))
    f = ScalarField(spec, [[1, 0], [0, 1], [1, 1]])
    p = tmp_path / "b.voxfield"
    write_field(f, p)
    raw = p.read_bytes()
    assert raw.split(b"\n", 1)[0].endswith(b"u8")
    assert len(raw.split(b"\n", 1)[1]) == 6
    assert np.array_equal(read_field(p).values, f.values)
    with pytest.raises(ValueError):
        write_field(ScalarField(spec, np.full((3, 2), 0.5)), p, dtype="u8")


def test_truncated_and_trailing_payload(tmp_path):
    f = ScalarField(GridSpec((2, 2, 2)), np.arange(8.0))
    p = tmp_path / "f.voxfield"
    write_field(f, p)
    raw = p.read_bytes()
    (tmp_path / "short").write_bytes(raw[:-3])
    (tmp_path / "long").write_bytes(raw + b"\0" * 8)
    with pytest.raises(TruncatedPayloadError):
        read_field(tmp_path / "short")
    with pytest.raises(DimensionMismatchError):
        read_field(tmp_path / "long")


def test_malformed_header(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"VOXFIELD v1 2 2 2 1 1 1 0 0 0 f32\n" + b"\0" * 64)
    with pytest.raises(MalformedHeaderError):
        read_field(p)
    p.write_bytes(b"NOTAFIELD\n")
    with pytest.raises(MalformedHeaderError):
        read_field(p)


def test_expected_grid_mismatch(tmp_path):
    f = ScalarField.zeros(GridSpec((2, 2)))
    p = tmp_path / "f"
    write_field(f, p)
    with pytest.raises(DimensionMismatchError):
        read_field(p, expected=GridSpec((2, 3)))


def test_vtk_layout_x_fastest(tmp_path):
    spec = GridSpec((2, 3))
    vals = np.arange(6.0).reshape(2, 3, 1)
    write_vtk(tmp_path / "f.vtk", {"v": ScalarField(spec, vals)})
    lines = (tmp_path / "f.vtk").read_text().splitlines()
    assert "DIMENSIONS 2 3 1" in lines
    data = [float(x) for x in lines[-1].split()]
    # x varies fastest: (0,0), (1,0), (0,1), ...
    assert data == [0.0, 3.0, 1.0, 4.0, 2.0, 5.0]
