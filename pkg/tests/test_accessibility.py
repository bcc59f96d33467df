import math

import numpy as np
import pytest

from mtopo.accessibility import (access_check, accessibility, imf_fields, imf_multi_tool, imf_single_tool,
                                 normalize_and_classify)
from mtopo.grid import GridSpec, ScalarField
from mtopo.morphology import Orientation
from mtopo.scene import Scene
from oracles import imf_enumerate
from scenes import SCENES, as_dict, graded, needle_points, needle_tool, random_binary, sealed_box, undercut


def _check_against_oracle(vals, turns, sharp):
    nx, ny = vals.shape
    rho = ScalarField(GridSpec((nx, ny)), vals[:, :, None])
    tool = needle_tool(turns, sharp)
    got = imf_single_tool(rho, tool).values[:, :, 0]
    queries = [(i, j) for i in range(nx) for j in range(ny)]
    want = imf_enumerate(as_dict(vals), queries, [(needle_points(), list(sharp), list(turns))])
    w = np.array([[want[(i, j)] for j in range(ny)] for i in range(nx)])
    np.testing.assert_allclose(got, w, rtol=1e-9, atol=1e-12)
    return got


@pytest.mark.parametrize("name", sorted(SCENES))
def test_imf_matches_enumeration(name):
    make, turns, sharp = SCENES[name]
    _check_against_oracle(make(), turns, sharp)


def test_sealed_void_is_secluded():
    v = sealed_box()
    spec = GridSpec(v.shape)
    rho = ScalarField(spec, v[:, :, None])
    res = accessibility(rho, ScalarField.zeros(spec), ScalarField.full(spec, 1.0), [needle_tool((0, 1, 2, 3))])
    sec = res.masks.secluded.values[:, :, 0]
    assert sec[5:7, 5:7].all()
    assert sec.sum() == 4
    assert res.secluded_volume == pytest.approx(4.0)


def test_undercut_needs_sideways_access():
    v = undercut()
    pocket = (3, 4)
    down_only = _check_against_oracle(v, (0,), ((0, 0), (0, 2)))
    with_side = _check_against_oracle(v, (0, 3), ((0, 0), (0, 2)))
    assert down_only[pocket] > 0
    assert with_side[pocket] == 0


@pytest.mark.parametrize("seed", range(10))
def test_refinement_never_increases_imf(seed):
    rng = np.random.default_rng(100 + seed)
    dims = tuple(int(n) for n in rng.integers(8, 15, size=2))
    vals = rng.random(dims) * (rng.random(dims) < 0.35)
    rho = ScalarField(GridSpec(dims), vals[:, :, None])
    angles = [0.0, math.pi / 2, 0.4, math.pi, -0.9, 3 * math.pi / 2]
    n_small = int(rng.integers(1, 3))
    sharp_all = [(0, 0), (0, 1), (0, 2)]
    small = needle_tool(sharp=sharp_all[:1]).with_orientations([Orientation.from_angle(a) for a in angles[:n_small]])
    more_k = small.with_sharp_points(sharp_all)
    more_both = more_k.with_orientations([Orientation.from_angle(a) for a in angles])
    f0 = imf_single_tool(rho, small).values
    f1 = imf_single_tool(rho, more_k).values
    f2 = imf_single_tool(rho, more_both).values
    assert np.all(f1 <= f0 + 1e-12)
    assert np.all(f2 <= f1 + 1e-12)


def test_multi_tool_is_pointwise_min():
    vals = random_binary()
    rho = ScalarField(GridSpec(vals.shape), vals[:, :, None])
    t1, t2 = needle_tool((0,)), needle_tool((2,), sharp=((0, 2),))
    both = imf_multi_tool(rho, [t1, t2]).values
    np.testing.assert_array_equal(both, np.minimum(imf_single_tool(rho, t1).values,
                                                   imf_single_tool(rho, t2).values))


def test_threads_and_batching_do_not_change_result():
    vals = graded()
    rho = ScalarField(GridSpec(vals.shape), vals[:, :, None])
    tools = [needle_tool((0, 1, 2, 3)), needle_tool((1, 3), sharp=((0, 2),))]
    ref = [f.values for f in imf_fields(rho, tools)]
    for kw in ({"threads": 4}, {"threads": 3, "mem_budget_mb": 1e-6}):
        got = [f.values for f in imf_fields(rho, tools, **kw)]
        for a, b in zip(ref, got):
            assert np.array_equal(a, b)


def test_imf_rejects_bad_obstacle():
    spec = GridSpec((4, 4))
    with pytest.raises(ValueError):
        imf_fields(ScalarField.full(spec, 2.0), [needle_tool()])
    with pytest.raises(ValueError):
        imf_fields(ScalarField.zeros(spec), [])


def test_normalize_and_classify_branches():
    spec = GridSpec((5, 1))
    f = ScalarField(spec, [0.0, 0.5, 1.0, 4.0, 100.0])
    rho = ScalarField(spec, [0.0, 0.0, 1.0, 0.2, 0.0])
    dom = ScalarField(spec, [1, 1, 1, 1, 0])
    res = normalize_and_classify(f, rho, dom, lam=0.2, tau=0.5)
    # max over the domain is 4, so normalized values are 0, 0.125, 0.25, 1; the last voxel is outside
    np.testing.assert_allclose(res.imf.flat, [0.0, 0.0, 0.25, 1.0, 0.0])
    assert res.masks.inaccessible.flat.tolist() == [0, 0, 1, 1, 0]
    assert res.masks.accessible.flat.tolist() == [1, 1, 0, 0, 0]
    assert res.masks.secluded.flat.tolist() == [0, 0, 0, 1, 0]
    assert res.domain_volume == 4.0
    assert res.secluded_fraction == pytest.approx(0.25)
    assert res.passes(0.25) and not res.passes(0.2)


def test_normalize_all_accessible_and_argument_checks():
    spec = GridSpec((3, 1))
    res = normalize_and_classify(ScalarField.zeros(spec), ScalarField.zeros(spec))
    assert res.masks.accessible.flat.tolist() == [1, 1, 1]
    assert res.secluded_volume == 0
    with pytest.raises(ValueError):
        normalize_and_classify(ScalarField.zeros(spec), ScalarField.zeros(spec), lam=1.0)
    with pytest.raises(ValueError):
        normalize_and_classify(ScalarField.zeros(spec), ScalarField.zeros(spec), tau=0.0)


def test_access_check_requires_binary_design():
    spec = GridSpec((6, 6))
    scene = Scene.box(spec)
    with pytest.raises(ValueError):
        access_check(ScalarField.full(spec, 0.5), scene, [needle_tool()])
    res = access_check(ScalarField.full(spec, 1.0), scene, [needle_tool()])
    assert res.secluded_volume == 0.0
