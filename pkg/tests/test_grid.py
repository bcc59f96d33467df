import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtopo.grid import (FieldValueError, GridError, GridSpec, RegionMasks, ScalarField, box_mask, crop,
                        implicit_union, sample_points, sample_shifted, threshold, volume_integral)


def test_gridspec_pads_2d():
    s = GridSpec((4, 3), (0.5, 0.5), (1.0, 2.0))
    assert s.dims == (4, 3, 1)
    assert s.is_2d and s.ndim == 2
    # planar voxel measure is an area
    assert s.dv == pytest.approx(0.25)


def test_gridspec_rejects_bad_input():
    with pytest.raises(ValueError):
        GridSpec((0, 3, 3))
    with pytest.raises(ValueError):
        GridSpec((3, 3, 3), (1.0, -1.0, 1.0))
    with pytest.raises(ValueError):
        GridSpec((3, 3, 3, 3))


def test_anisotropic_h_raises():
    with pytest.raises(GridError):
        GridSpec((2, 2, 2), (1.0, 2.0, 1.0)).h


def test_scalarfield_is_immutable_and_finite():
    spec = GridSpec((2, 2, 2))
    f = ScalarField.zeros(spec)
    with pytest.raises(ValueError):
        f.values[0, 0, 0] = 1.0
    with pytest.raises(AttributeError):
        f.values = None
    with pytest.raises(FieldValueError):
        ScalarField(spec, np.full(8, np.nan))
    with pytest.raises(GridError):
        ScalarField(spec, np.zeros(7))


def test_volume_integral_scales_by_dv():
    spec = GridSpec((3, 4, 5), (0.5, 0.5, 0.5))
    assert volume_integral(ScalarField.full(spec, 1.0)) == pytest.approx(60 * 0.125)


def test_threshold_is_strict():
    spec = GridSpec((3, 1, 1))
    f = ScalarField(spec, [0.4, 0.5, 0.6])
    assert threshold(f, 0.5).flat.tolist() == [0.0, 0.0, 1.0]
    with pytest.raises(ValueError):
        threshold(f, 1.0)


def test_implicit_union_clamps():
    spec = GridSpec((3, 1))
    rho = ScalarField(spec, [0.2, 0.9, 0.0])
    fix = ScalarField(spec, [1.0, 1.0, 0.0])
    assert implicit_union(rho, fix).flat.tolist() == [1.0, 1.0, 0.0]


def test_grid_mismatch_raises():
    a = ScalarField.zeros(GridSpec((3, 3)))
    b = ScalarField.zeros(GridSpec((3, 3), origin=(1.0, 0.0)))
    with pytest.raises(GridError):
        implicit_union(a, b)


@settings(max_examples=30, deadline=None)
@given(st.integers(-3, 3), st.integers(-3, 3), st.integers(-2, 2))
def test_sample_shifted_integer_shift_matches_roll(dx, dy, dz):
    rng = np.random.default_rng(abs(dx * 31 + dy * 7 + dz))
    spec = GridSpec((6, 5, 4))
    f = ScalarField(spec, rng.random(spec.dims))
    got = sample_shifted(f, spec, (dx, dy, dz))
    want = np.zeros(spec.dims)
    for i, j, k in np.ndindex(*spec.dims):
        a, b, c = i + dx, j + dy, k + dz
        if 0 <= a < 6 and 0 <= b < 5 and 0 <= c < 4:
            want[i, j, k] = f.values[a, b, c]
    np.testing.assert_array_equal(got, want)


def test_sample_shifted_half_voxel_averages():
    spec = GridSpec((4, 1))
    f = ScalarField(spec, [0.0, 2.0, 4.0, 6.0])
    got = sample_shifted(f, spec, (0.5, 0.0, 0.0))
    np.testing.assert_allclose(got[:, 0, 0], [1.0, 3.0, 5.0, 3.0])


def test_sample_points_matches_linear_function():
    # multilinear interpolation reproduces affine functions exactly
    spec = GridSpec((5, 6, 4), (0.5, 0.5, 0.5), (1.0, -1.0, 0.0))
    c = [spec.centers(a) for a in range(3)]
    X, Y, Z = np.meshgrid(*c, indexing="ij")
    f = ScalarField(spec, 2 * X - Y + 3 * Z + 1)
    rng = np.random.default_rng(0)
    lo = np.array(spec.origin)
    hi = np.array(spec.upper())
    pts = lo + rng.random((50, 3)) * (hi - lo)
    want = 2 * pts[:, 0] - pts[:, 1] + 3 * pts[:, 2] + 1
    np.testing.assert_allclose(sample_points(f, pts), want, atol=1e-12)


def test_crop_zero_fills_and_rejects_off_lattice():
    spec = GridSpec((3, 3))
    f = ScalarField.full(spec, 1.0)
    big = GridSpec((5, 5), origin=(-1.0, -1.0))
    out = crop(f, big)
    assert out.values.sum() == 9
    assert out.values[0, 0, 0] == 0 and out.values[1, 1, 0] == 1
    with pytest.raises(GridError):
        crop(f, GridSpec((3, 3), origin=(0.5, 0.0)))


def test_box_mask_uses_centers():
    spec = GridSpec((4, 4))
    m = box_mask(spec, [0.0, 0.0], [1.0, 3.0])
    assert m.values[:, :, 0].sum() == 8
    assert m.values[1, 3, 0] == 1 and m.values[2, 0, 0] == 0


def test_region_masks_validate():
    spec = GridSpec((3, 1))
    dom = ScalarField.full(spec, 1.0)
    a = ScalarField(spec, [1, 0, 0])
    b = ScalarField(spec, [0, 1, 1])
    g = ScalarField(spec, [0, 0, 1])
    RegionMasks(a, b, g).validate(dom, ScalarField(spec, [0, 1, 0]))
    with pytest.raises(FieldValueError):
        RegionMasks(a, b, ScalarField(spec, [1, 0, 0])).validate(dom)
    with pytest.raises(FieldValueError):
        RegionMasks(a, a, g).validate(dom)
