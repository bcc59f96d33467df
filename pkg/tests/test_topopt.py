import math

import numpy as np
import pytest

from mtopo.accessibility import normalize_and_classify
from mtopo.fea import LoadCase, MaterialModel
from mtopo.grid import GridSpec, ScalarField, box_mask
from mtopo.morphology import Orientation
from mtopo.scene import Scene
from mtopo.tools import build_primitive_tool
from mtopo.topopt import (ConeFilter, OptimizationAborted, TOConfig, _oc_candidate, blend_sensitivity,
                          build_access_filter, heaviside_project, initial_design, oc_update, run_to)


def test_heaviside_endpoints_and_value():
    spec = GridSpec((3, 1))
    xi = ScalarField(spec, [0.0, 0.5, 1.0])
    rho = heaviside_project(xi, 2.0).flat
    assert rho[0] == 0.0
    assert rho[2] == pytest.approx(1.0, abs=1e-15)
    assert rho[1] == pytest.approx(1 - math.exp(-1) + 0.5 * math.exp(-2), rel=1e-14)
    with pytest.raises(ValueError):
        heaviside_project(xi, 0.0)


def test_heaviside_monotone_in_xi_and_beta():
    x = np.linspace(0, 1, 101)
    spec = GridSpec((101, 1))
    prev = None
    for beta in (0.5, 1.0, 2.0, 8.0, 32.0):
        rho = heaviside_project(ScalarField(spec, x), beta).flat
        assert np.all(np.diff(rho) > 0)
        if prev is not None:
            assert np.all(rho[1:-1] > prev[1:-1])
        prev = rho


def test_access_filter_branches():
    spec = GridSpec((5, 1))
    # normalized IMF 0, 0.37, 1, 0.5, 0.005 (max 100); lambda 0.01 zeroes the last one
    f = ScalarField(spec, [0.0, 37.0, 100.0, 50.0, 0.5])
    rho = ScalarField(spec, [0.9, 0.8, 0.1, 0.3, 0.7])
    res = normalize_and_classify(f, rho, lam=0.01, tau=0.5)
    s = build_access_filter(res, rho, 0.5).flat
    # solid keeps its normalized IMF, secluded voids get 1, accessible voids 0
    np.testing.assert_allclose(s, [0.0, 0.37, 1.0, 1.0, 0.0])


def test_blend_arithmetic():
    spec = GridSpec((3, 1))
    phi = ScalarField(spec, [1.0, 0.2, 0.0])
    imf = ScalarField(spec, [0.0, 1.0, 0.37])
    np.testing.assert_allclose(blend_sensitivity(phi, imf, 0.5).flat, [0.5, 0.6, 0.185])
    # an equal and opposite pair cancels at w = 0.5
    assert blend_sensitivity(ScalarField(spec, [-1.0] * 3), ScalarField(spec, [1.0] * 3), 0.5).flat.tolist() == [0.0] * 3
    assert blend_sensitivity(phi, imf, 0.0) is phi
    for w in (1.0, -0.1):
        with pytest.raises(ValueError):
            blend_sensitivity(phi, imf, w)


def _vol(xi, beta):
    return float(np.sum(1 - np.exp(-beta * xi) + xi * math.exp(-beta)))


def test_oc_hits_volume_target():
    spec = GridSpec((8, 4))
    rng = np.random.default_rng(0)
    cfg = TOConfig()
    for _ in range(5):
        xi = ScalarField(spec, rng.uniform(0.1, 0.9, spec.dims))
        S = ScalarField(spec, rng.random(spec.dims))
        # targets reachable within one move limit
        target = _vol(xi.values, cfg.beta) + rng.uniform(-2, 2)
        new = oc_update(xi, S, cfg, target_volume=target)
        assert _vol(new.values, cfg.beta) == pytest.approx(target, rel=1e-4)
        assert np.all(np.abs(new.values - xi.values) <= cfg.move_limit + 1e-15)
        assert new.values.min() >= 0 and new.values.max() <= 1


def test_oc_uniform_importance_gives_uniform_design():
    spec = GridSpec((8, 4))
    cfg = TOConfig(volume_fraction=0.3)
    new = oc_update(ScalarField.full(spec, 0.3), ScalarField.full(spec, 0.7), cfg, target_volume=_vol(
        np.full(32, 0.35), cfg.beta))
    assert np.ptp(new.values) < 1e-12
    assert new.values[0, 0, 0] == pytest.approx(0.35, abs=1e-6)


def test_oc_zero_move_and_frozen_voxels():
    spec = GridSpec((4, 4))
    rng = np.random.default_rng(1)
    xi = ScalarField(spec, rng.random(spec.dims))
    S = ScalarField(spec, rng.random(spec.dims))
    still = oc_update(xi, S, TOConfig(move_limit=0.0))
    assert np.array_equal(still.values, xi.values)
    free = np.ones(spec.dims, dtype=bool)
    free[0] = False
    new = oc_update(xi, S, TOConfig(), free=free)
    assert np.array_equal(new.values[0], xi.values[0])


def test_oc_nonpositive_importance_moves_down():
    spec = GridSpec((4, 1))
    xi = ScalarField(spec, [0.5, 0.5, 0.5, 0.5])
    S = ScalarField(spec, [1.0, 1.0, 0.0, -1.0])
    new = oc_update(xi, S, TOConfig(), target_volume=_vol(xi.flat, 2.0)).flat
    np.testing.assert_allclose(new[2:], 0.3)
    assert new[0] == new[1] > 0.5


def test_oc_unreachable_target_returns_extreme():
    spec = GridSpec((4, 1))
    xi = ScalarField.full(spec, 0.5)
    S = ScalarField.full(spec, 1.0)
    up = oc_update(xi, S, TOConfig(), target_volume=100.0)
    np.testing.assert_allclose(up.flat, 0.7)
    down = oc_update(xi, S, TOConfig(), target_volume=0.0)
    np.testing.assert_allclose(down.flat, 0.3)


def test_larger_weight_keeps_more_where_access_dominates():
    # at a fixed multiplier, raising w never lowers the update where S_imf > S_phi
    rng = np.random.default_rng(2)
    xi = rng.random(50)
    s_phi, s_imf = rng.random(50), rng.random(50)
    free = np.ones(50, dtype=bool)
    cfg = TOConfig()
    dom = s_imf > s_phi
    for lmid in (0.1, 0.5, 2.0):
        prev = None
        for w in (0.0, 0.25, 0.5, 0.75):
            new = _oc_candidate(xi, (1 - w) * s_phi + w * s_imf, lmid, cfg, free)
            if prev is not None:
                assert np.all(new[dom] >= prev[dom])
                assert np.all(new[~dom] <= prev[~dom])
            prev = new


def test_cone_filter():
    spec = GridSpec((6, 5))
    f = ConeFilter(spec, 1.5)
    np.testing.assert_allclose(f(np.full(spec.dims, 2.0)), 2.0)
    assert np.array_equal(ConeFilter(spec, 0.5)(np.arange(30.0).reshape(6, 5, 1)), np.arange(30.0).reshape(6, 5, 1))
    vals = np.zeros(spec.dims)
    vals[2, 2] = 1.0
    out = f(vals)
    # neighbours inside radius share the peak; weights 1.5 (self), 0.5 (face), 0.0858 (diagonal)
    assert out[2, 2, 0] == pytest.approx(1.5 / (1.5 + 4 * 0.5 + 4 * (1.5 - math.sqrt(2))))
    mask = np.ones(spec.dims, dtype=bool)
    mask[0] = False
    g = ConeFilter(spec, 1.5, mask)
    vals = np.random.default_rng(3).random(spec.dims)
    out = g(vals)
    assert np.array_equal(out[0], vals[0])


def _cantilever(nx=16, ny=8):
    spec = GridSpec((nx, ny))
    load = LoadCase.from_boxes(spec, fixed=[((-0.5, -0.5), (-0.5, ny - 0.5), "xy")],
                               loads=[((nx - 0.5, ny / 2 - 1.5), (nx - 0.5, ny / 2 + 0.5), (0.0, -1.0))])
    return spec, load


def test_run_unconstrained_small_cantilever():
    spec, load = _cantilever()
    retained = box_mask(spec, (14, 2), (15, 5))
    void = box_mask(spec, (0, 0), (1, 1))
    scene = Scene.box(spec, retained=retained, void=void)
    cfg = TOConfig(volume_fraction=0.5, max_iter=25)
    st = run_to(scene, [], load, MaterialModel(), cfg)
    assert st.iteration == len(st.history) <= 25
    assert [r.iteration for r in st.history] == list(range(st.iteration))
    assert np.all(st.xi.values[retained.values > 0] == 1.0)
    assert np.all(st.xi.values[void.values > 0] == 0.0)
    assert st.history[-1].volume_fraction == pytest.approx(0.5, abs=0.02)
    assert st.history[-1].compliance < st.history[0].compliance
    assert all(math.isnan(r.secluded_fraction) for r in st.history)
    assert math.isfinite(st.final_compliance)
    again = run_to(scene, [], load, MaterialModel(), cfg)
    assert np.array_equal(again.xi.values, st.xi.values)
    assert [r.compliance for r in again.history] == [r.compliance for r in st.history]


def test_volume_held_after_every_step():
    spec, load = _cantilever()
    scene = Scene.box(spec, retained=box_mask(spec, (14, 2), (15, 5)))
    cfg = TOConfig(volume_fraction=0.4, max_iter=15, delta=0.0)
    seen = []
    run_to(scene, [], load, MaterialModel(), cfg,
           callback=lambda st: seen.append(heaviside_project(st.xi, cfg.beta).values.sum() / spec.n))
    assert len(seen) == 15
    assert max(abs(v - 0.4) for v in seen) <= 1e-3


def test_initial_design():
    spec = GridSpec((4, 1))
    scene = Scene.box(spec, retained=ScalarField(spec, [1, 0, 0, 0]), void=ScalarField(spec, [0, 1, 0, 0]),
                      domain=ScalarField(spec, [1, 1, 1, 0]))
    assert initial_design(scene, TOConfig(volume_fraction=0.3)).flat.tolist() == [1.0, 0.0, 0.3, 0.0]


def test_adaptive_weight_schedule():
    spec, load = _cantilever()
    tool = build_primitive_tool(1.0, [{"shape": "cylinder", "radius": 0.5, "length": 3}],
                                [{"shape": "box", "size": [5], "length": 3}],
                                [Orientation.from_direction((1, 0))], planar=True)
    cfg = TOConfig(w_acc="adaptive", w_acc_start=0.1, w_acc_end=0.4, w_acc_ramp=0.5, max_iter=10, delta=0.0)
    st = run_to(Scene.box(spec), [tool], load, MaterialModel(), cfg)
    step = (0.4 - 0.1) / 5
    assert st.history[0].w_acc == 0.1
    for a, b in zip(st.history, st.history[1:]):
        want = min(0.4, a.w_acc + step) if a.secluded_fraction > cfg.secluded_tolerance else a.w_acc
        assert b.w_acc == pytest.approx(want)
    assert st.history[-1].w_acc > 0.1


def test_nonfinite_load_aborts():
    spec, load = _cantilever(8, 4)
    bad = LoadCase(load.fixed_dofs, {k: math.nan for k in load.forces})
    with pytest.raises(OptimizationAborted) as exc:
        run_to(Scene.box(spec), [], bad, MaterialModel(), TOConfig(max_iter=3))
    assert exc.value.iteration == 0


def test_weight_without_tools_rejected():
    spec, load = _cantilever(8, 4)
    with pytest.raises(ValueError):
        run_to(Scene.box(spec), [], load, MaterialModel(), TOConfig(w_acc=0.5))


@pytest.mark.parametrize("kw", [{"volume_fraction": 1.2}, {"w_acc": 1.0}, {"w_acc": "sometimes"}, {"beta": 0},
                                {"tau": 1.0}, {"lam": 1.0}, {"max_iter": 0}, {"imf_stride": 0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TOConfig(**kw)
