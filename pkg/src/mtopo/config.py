"""JSON scene configuration: parsing, validation and default resolution.

Layout (keys not listed take defaults)::

    {
      "grid": {"dims": [64, 32], "spacing": 1.0, "origin": [0, 0]},
      "design_domain": "all" | {"lo": [...], "hi": [...]} | {"field": "omega0.voxfield"},
      "fixtures": [{"lo": [...], "hi": [...]}, {"field": "clamp.voxfield"}],
      "retained_regions": [{"lo": [...], "hi": [...]}],
      "void_regions": [],
      "tools": [{
        "name": "endmill",
        "cutter": [{"shape": "cylinder", "radius": 1, "length": 4}] | {"field": "k.voxfield"},
        "holder": [{"shape": "box", "size": [9], "length": 20}] | {"field": "h.voxfield"},
        "sharp_point_stride": 1,
        "orientations": [{"direction": [1, 0]}, {"angle_deg": 90},
                         {"axis": [1, 0, 0], "angle_deg": 45}, {"quaternion": [1, 0, 0, 0]}]
      }],
      "load": {"fixed": [{"lo": [...], "hi": [...], "axes": "xy"}],
               "forces": [{"lo": [...], "hi": [...], "value": [0, -1]}]},
      "material": {"youngs_modulus": 1, "poisson_ratio": 0.3, "simp_exponent": 3, "rho_min": 0.001},
      "to": {"volume_fraction": 0.5, "w_acc": 0.5 | "adaptive", "lambda": 0.01, ...}
    }

Boxes select voxels (or FE nodes, for loads) whose centers lie in the closed
box. Relative file paths resolve against the config file's directory.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fea import LoadCase, MaterialModel
from .fieldio import FieldFormatError, read_field
from .grid import GridSpec, ScalarField, box_mask
from .morphology import Orientation
from .scene import Scene
from .tools import ToolAssembly, ToolError, build_primitive_tool
from .topopt import TOConfig


class ConfigError(Exception):
    code = "config"

    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


class ConfigParseError(ConfigError):
    code = "parse"


class SchemaError(ConfigError):
    code = "schema"


class UnresolvedReferenceError(ConfigError):
    code = "unresolved"


class InvariantError(ConfigError):
    code = "invariant"


MATERIAL_DEFAULTS = {f.name: f.default for f in dataclasses.fields(MaterialModel)}
TO_DEFAULTS = {("lambda" if f.name == "lam" else f.name): f.default for f in dataclasses.fields(TOConfig)}
TOOL_DEFAULTS = {"name": "", "holder": [], "sharp_point_stride": 1}
_TOP_KEYS = {"grid", "design_domain", "fixtures", "retained_regions", "void_regions", "tools", "load",
             "material", "to"}


@dataclass
class SceneConfig:
    path: Path | None
    spec: GridSpec
    scene: Scene
    tools: list[ToolAssembly]
    load: LoadCase
    material: MaterialModel
    to: TOConfig
    resolved: dict

    def digest(self) -> str:
        """Hash of the fully resolved configuration (defaults included, file contents hashed)."""
        blob = json.dumps(self.resolved, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


# small typed accessors -------------------------------------------------------

def _need(d: dict, name: str, key: str):
    if not isinstance(d, dict):
        raise SchemaError("expected an object", key)
    if name not in d:
        raise SchemaError("required key missing", f"{key}.{name}" if key else name)
    return d[name]


def _number(v, key, lo=-math.inf, hi=math.inf, lo_open=False, hi_open=False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise SchemaError(f"expected a finite number, got {v!r}", key)
    if v < lo or v > hi or (lo_open and v == lo) or (hi_open and v == hi):
        lb = "(" if lo_open else "["
        rb = ")" if hi_open else "]"
        raise SchemaError(f"value {v!r} outside {lb}{lo}, {hi}{rb}", key)
    return float(v)


def _integer(v, key, lo=None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError(f"expected an integer, got {v!r}", key)
    if lo is not None and v < lo:
        raise SchemaError(f"value {v} must be >= {lo}", key)
    return v


def _vector(v, key, lengths=(2, 3)) -> list[float]:
    if not isinstance(v, list) or len(v) not in lengths:
        raise SchemaError(f"expected a list of {' or '.join(map(str, lengths))} numbers", key)
    return [_number(x, f"{key}[{i}]") for i, x in enumerate(v)]


def _list(v, key) -> list:
    if not isinstance(v, list):
        raise SchemaError("expected a list", key)
    return v


def _check_keys(d: dict, allowed, key):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise SchemaError(f"unknown key {extra[0]!r}", f"{key}.{extra[0]}" if key else extra[0])


# loader ----------------------------------------------------------------------

class _Loader:
    def __init__(self, base: Path):
        self.base = base

    def file(self, ref, key) -> tuple[Path, str]:
        if not isinstance(ref, str) or not ref:
            raise SchemaError("field reference must be a non-empty path string", key)
        p = Path(ref)
        if not p.is_absolute():
            p = self.base / p
        if not p.is_file():
            raise UnresolvedReferenceError(f"file {str(p)!r} not found", key)
        return p, hashlib.sha256(p.read_bytes()).hexdigest()

    def field(self, ref, key, expected: GridSpec | None = None) -> tuple[ScalarField, dict]:
        p, digest = self.file(ref, key)
        try:
            f = read_field(p, expected)
        except FieldFormatError as exc:
            raise InvariantError(str(exc), key) from exc
        return f, {"field": str(ref), "sha256": digest}

    def region(self, item, spec, key) -> tuple[ScalarField, dict]:
        if isinstance(item, dict) and "field" in item:
            _check_keys(item, {"field"}, key)
            f, res = self.field(item["field"], f"{key}.field", spec)
            if not f.is_binary():
                raise InvariantError("region field must be binary", key)
            return f, res
        if isinstance(item, dict) and ("lo" in item or "hi" in item):
            _check_keys(item, {"lo", "hi"}, key)
            lo = _vector(_need(item, "lo", key), f"{key}.lo")
            hi = _vector(_need(item, "hi", key), f"{key}.hi")
            return box_mask(spec, lo, hi), {"lo": lo, "hi": hi}
        raise SchemaError("expected a box {lo, hi} or a field reference {field}", key)

    def regions(self, items, spec, key) -> tuple[ScalarField, list]:
        acc = np.zeros(spec.dims)
        res = []
        for i, item in enumerate(_list(items, key)):
            f, r = self.region(item, spec, f"{key}[{i}]")
            acc = np.maximum(acc, f.values)
            res.append(r)
        return ScalarField(spec, acc), res


def _grid(raw, key="grid") -> tuple[GridSpec, dict]:
    if not isinstance(raw, dict):
        raise SchemaError("expected an object", key)
    _check_keys(raw, {"dims", "spacing", "origin"}, key)
    dims = _need(raw, "dims", key)
    if not isinstance(dims, list) or len(dims) not in (2, 3):
        raise SchemaError("expected 2 or 3 integers", f"{key}.dims")
    dims = [_integer(d, f"{key}.dims[{i}]", 1) for i, d in enumerate(dims)]
    sp = raw.get("spacing", 1.0)
    if isinstance(sp, list):
        sp = _vector(sp, f"{key}.spacing")
    else:
        sp = [_number(sp, f"{key}.spacing", 0, lo_open=True)] * len(dims)
    if len(sp) != len(dims) or min(sp) <= 0:
        raise SchemaError("spacing must be positive and match dims", f"{key}.spacing")
    origin = _vector(raw.get("origin", [0.0] * len(dims)), f"{key}.origin")
    if len(origin) != len(dims):
        raise SchemaError("origin must match dims", f"{key}.origin")
    if len(dims) == 3 and dims[2] == 1:
        raise InvariantError("3D grids need nz > 1; give 2 dims for a planar problem", f"{key}.dims")
    spec = GridSpec(tuple(dims), tuple(sp), tuple(origin))
    return spec, {"dims": dims, "spacing": sp, "origin": origin}


def _orientation(raw, key, idx: int, planar: bool) -> tuple[Orientation, dict]:
    if not isinstance(raw, dict):
        raise SchemaError("expected an object", key)
    try:
        if "direction" in raw:
            _check_keys(raw, {"direction"}, key)
            d = _vector(raw["direction"], f"{key}.direction")
            if planar != (len(d) == 2):
                raise InvariantError("direction length must match the grid dimension", f"{key}.direction")
            o = Orientation.from_direction(d, idx)
        elif "quaternion" in raw:
            _check_keys(raw, {"quaternion"}, key)
            o = Orientation(tuple(_vector(raw["quaternion"], f"{key}.quaternion", (4,))), idx)
        elif "axis" in raw:
            _check_keys(raw, {"axis", "angle_deg"}, key)
            ax = _vector(raw["axis"], f"{key}.axis", (3,))
            ang = math.radians(_number(_need(raw, "angle_deg", key), f"{key}.angle_deg"))
            o = Orientation.from_axis_angle(ax, ang, idx)
        elif "angle_deg" in raw:
            _check_keys(raw, {"angle_deg"}, key)
            o = Orientation.from_angle(math.radians(_number(raw["angle_deg"], f"{key}.angle_deg")), idx)
        else:
            raise SchemaError("expected one of direction, angle_deg, axis + angle_deg, quaternion", key)
    except ValueError as exc:
        raise InvariantError(str(exc), key) from exc
    if planar and not o.is_planar:
        raise InvariantError("2D problems only allow rotations about +z", key)
    return o, {"quaternion": list(o.quat)}


def _prims(raw, key) -> list[dict]:
    out = []
    for i, p in enumerate(_list(raw, key)):
        k = f"{key}[{i}]"
        if not isinstance(p, dict):
            raise SchemaError("expected an object", k)
        shape = p.get("shape", "cylinder")
        if shape == "cylinder":
            _check_keys(p, {"shape", "radius", "length"}, k)
            out.append({"shape": shape, "radius": _number(_need(p, "radius", k), f"{k}.radius", 0),
                        "length": _number(_need(p, "length", k), f"{k}.length", 0, lo_open=True)})
        elif shape == "box":
            _check_keys(p, {"shape", "size", "length"}, k)
            size = _need(p, "size", k)
            if not isinstance(size, list) or len(size) not in (1, 2):
                raise SchemaError("expected 1 (2D) or 2 (3D) lateral sizes", f"{k}.size")
            out.append({"shape": shape, "size": [_number(s, f"{k}.size[{j}]", 0) for j, s in enumerate(size)],
                        "length": _number(_need(p, "length", k), f"{k}.length", 0, lo_open=True)})
        else:
            raise SchemaError(f"unknown shape {shape!r}", f"{k}.shape")
    return out


def _tool(raw, key, spec: GridSpec, loader: _Loader) -> tuple[ToolAssembly, dict]:
    if not isinstance(raw, dict):
        raise SchemaError("expected an object", key)
    _check_keys(raw, {"name", "cutter", "holder", "sharp_point_stride", "orientations"}, key)
    name = raw.get("name", TOOL_DEFAULTS["name"])
    if not isinstance(name, str):
        raise SchemaError("expected a string", f"{key}.name")
    stride = _integer(raw.get("sharp_point_stride", 1), f"{key}.sharp_point_stride", 1)
    oris = _list(_need(raw, "orientations", key), f"{key}.orientations")
    if not oris:
        raise InvariantError("orientation list must be nonempty", f"{key}.orientations")
    parsed = [_orientation(o, f"{key}.orientations[{i}]", i, spec.is_2d) for i, o in enumerate(oris)]
    orientations = [p[0] for p in parsed]
    res = {"name": name, "sharp_point_stride": stride, "orientations": [p[1] for p in parsed]}
    cutter_raw = _need(raw, "cutter", key)
    holder_raw = raw.get("holder", [])
    try:
        if isinstance(cutter_raw, dict):
            cutter, res["cutter"] = loader.field(_need(cutter_raw, "field", f"{key}.cutter"), f"{key}.cutter.field")
            if not isinstance(holder_raw, dict):
                raise SchemaError("field-based cutter needs a field-based holder", f"{key}.holder")
            holder, res["holder"] = loader.field(_need(holder_raw, "field", f"{key}.holder"), f"{key}.holder.field")
            if not cutter.spec.same_spacing(spec):
                raise InvariantError("tool field spacing differs from the scene grid", f"{key}.cutter")
            tool = ToolAssembly.from_fields(holder, cutter, orientations, stride=stride, name=name)
        else:
            if not spec.is_isotropic():
                raise InvariantError("primitive tools need an isotropic scene grid", "grid.spacing")
            cp = _prims(cutter_raw, f"{key}.cutter")
            hp = _prims(holder_raw, f"{key}.holder")
            res["cutter"], res["holder"] = cp, hp
            tool = build_primitive_tool(spec.h, cp, hp, orientations, spec.is_2d, stride, name)
    except ToolError as exc:
        raise InvariantError(str(exc), key) from exc
    return tool, res


def _load_case(raw, spec: GridSpec, key="load") -> tuple[LoadCase, dict]:
    if not isinstance(raw, dict):
        raise SchemaError("expected an object", key)
    _check_keys(raw, {"fixed", "forces"}, key)
    fixed, forces = [], []
    res = {"fixed": [], "forces": []}
    for i, b in enumerate(_list(_need(raw, "fixed", key), f"{key}.fixed")):
        k = f"{key}.fixed[{i}]"
        if not isinstance(b, dict):
            raise SchemaError("expected an object", k)
        _check_keys(b, {"lo", "hi", "axes"}, k)
        lo, hi = _vector(_need(b, "lo", k), f"{k}.lo"), _vector(_need(b, "hi", k), f"{k}.hi")
        axes = b.get("axes", "xyz"[: spec.ndim])
        if not isinstance(axes, str) or not axes or set(axes) - set("xyz"[: spec.ndim]):
            raise SchemaError(f"axes must be a string over {'xyz'[: spec.ndim]!r}", f"{k}.axes")
        fixed.append((lo, hi, axes))
        res["fixed"].append({"lo": lo, "hi": hi, "axes": axes})
    for i, b in enumerate(_list(raw.get("forces", []), f"{key}.forces")):
        k = f"{key}.forces[{i}]"
        if not isinstance(b, dict):
            raise SchemaError("expected an object", k)
        _check_keys(b, {"lo", "hi", "value"}, k)
        lo, hi = _vector(_need(b, "lo", k), f"{k}.lo"), _vector(_need(b, "hi", k), f"{k}.hi")
        val = _vector(_need(b, "value", k), f"{k}.value")
        if len(val) != spec.ndim:
            raise SchemaError(f"force needs {spec.ndim} components", f"{k}.value")
        forces.append((lo, hi, val))
        res["forces"].append({"lo": lo, "hi": hi, "value": val})
    try:
        lc = LoadCase.from_boxes(spec, fixed, forces)
    except ValueError as exc:
        raise InvariantError(str(exc), key) from exc
    return lc, res


def _material(raw, key="material") -> tuple[MaterialModel, dict]:
    if not isinstance(raw, dict):
        raise SchemaError("expected an object", key)
    _check_keys(raw, MATERIAL_DEFAULTS, key)
    vals = dict(MATERIAL_DEFAULTS)
    vals["youngs_modulus"] = _number(raw.get("youngs_modulus", vals["youngs_modulus"]), f"{key}.youngs_modulus",
                                     0, lo_open=True)
    vals["poisson_ratio"] = _number(raw.get("poisson_ratio", vals["poisson_ratio"]), f"{key}.poisson_ratio",
                                    -1, 0.5, True, True)
    vals["simp_exponent"] = _number(raw.get("simp_exponent", vals["simp_exponent"]), f"{key}.simp_exponent", 1)
    vals["rho_min"] = _number(raw.get("rho_min", vals["rho_min"]), f"{key}.rho_min", 0, 1, True, True)
    return MaterialModel(**vals), vals


def _to_config(raw, spec: GridSpec, key="to") -> tuple[TOConfig, dict]:
    if not isinstance(raw, dict):
        raise SchemaError("expected an object", key)
    _check_keys(raw, TO_DEFAULTS, key)
    vals = dict(TO_DEFAULTS)
    vals["beta"] = 2.0 if spec.is_2d else 8.0
    vals.update(raw)
    k = lambda n: f"{key}.{n}"  # noqa: E731
    vals["volume_fraction"] = _number(vals["volume_fraction"], k("volume_fraction"), 0, 1, True, True)
    if isinstance(vals["w_acc"], str):
        if vals["w_acc"] != "adaptive":
            raise SchemaError("expected a number in [0, 1) or 'adaptive'", k("w_acc"))
    else:
        vals["w_acc"] = _number(vals["w_acc"], k("w_acc"), 0, 1, hi_open=True)
    vals["w_acc_start"] = _number(vals["w_acc_start"], k("w_acc_start"), 0, 1, hi_open=True)
    vals["w_acc_end"] = _number(vals["w_acc_end"], k("w_acc_end"), 0, 1, hi_open=True)
    vals["w_acc_ramp"] = _number(vals["w_acc_ramp"], k("w_acc_ramp"), 0, 1, lo_open=True)
    vals["lambda"] = _number(vals["lambda"], k("lambda"), 0, 1, hi_open=True)
    vals["beta"] = _number(vals["beta"], k("beta"), 0, lo_open=True)
    vals["tau"] = _number(vals["tau"], k("tau"), 0, 1, True, True)
    if vals["filter_radius"] is not None:
        vals["filter_radius"] = _number(vals["filter_radius"], k("filter_radius"), 0)
    vals["move_limit"] = _number(vals["move_limit"], k("move_limit"), 0, 1)
    vals["oc_damping"] = _number(vals["oc_damping"], k("oc_damping"), 0, lo_open=True)
    vals["oc_floor"] = _number(vals["oc_floor"], k("oc_floor"), 0, 1, lo_open=True)
    if vals["delta"] is not None:
        vals["delta"] = _number(vals["delta"], k("delta"), 0)
    vals["max_iter"] = _integer(vals["max_iter"], k("max_iter"), 1)
    vals["secluded_tolerance"] = _number(vals["secluded_tolerance"], k("secluded_tolerance"), 0, 1)
    vals["imf_stride"] = _integer(vals["imf_stride"], k("imf_stride"), 1)
    vals["cg_tol"] = _number(vals["cg_tol"], k("cg_tol"), 0, 1, True, True)
    vals["checkpoint_every"] = _integer(vals["checkpoint_every"], k("checkpoint_every"), 0)
    args = {("lam" if n == "lambda" else n): v for n, v in vals.items()}
    return TOConfig(**args), vals


def parse_config(raw: dict, base: Path | str = ".", path: Path | None = None) -> SceneConfig:
    """Validate an already-decoded config document."""
    if not isinstance(raw, dict):
        raise SchemaError("top level must be an object")
    _check_keys(raw, _TOP_KEYS, "")
    loader = _Loader(Path(base))
    spec, grid_res = _grid(_need(raw, "grid", ""))
    resolved = {"grid": grid_res}

    dd = raw.get("design_domain", "all")
    if dd == "all":
        domain, resolved["design_domain"] = ScalarField.full(spec, 1.0), "all"
    else:
        domain, resolved["design_domain"] = loader.region(dd, spec, "design_domain")
    if not domain.values.any():
        raise InvariantError("design domain selects no voxels", "design_domain")
    fixtures, resolved["fixtures"] = loader.regions(raw.get("fixtures", []), spec, "fixtures")
    retained, resolved["retained_regions"] = loader.regions(raw.get("retained_regions", []), spec,
                                                            "retained_regions")
    void, resolved["void_regions"] = loader.regions(raw.get("void_regions", []), spec, "void_regions")
    if np.any(retained.values * void.values):
        raise InvariantError("retained and void regions overlap", "void_regions")
    # fixtures are obstacles, never design material
    domain = domain.replace(domain.values * (1 - fixtures.values))
    if not domain.values.any():
        raise InvariantError("fixtures cover the whole design domain", "fixtures")

    tools, resolved["tools"] = [], []
    for i, t in enumerate(_list(raw.get("tools", []), "tools")):
        tool, res = _tool(t, f"tools[{i}]", spec, loader)
        tools.append(tool)
        resolved["tools"].append(res)
    load, resolved["load"] = _load_case(_need(raw, "load", ""), spec)
    material, resolved["material"] = _material(raw.get("material", {}))
    to, resolved["to"] = _to_config(raw.get("to", {}), spec)
    if to.initial_weight() > 0 and not tools:
        raise InvariantError("accessibility weight is nonzero but no tools are configured", "to.w_acc")
    scene = Scene(spec, domain, fixtures, retained, void, load)
    return SceneConfig(path, spec, scene, tools, load, material, to, resolved)


def load_config(path) -> SceneConfig:
    p = Path(path)
    if not p.is_file():
        raise UnresolvedReferenceError(f"config file {str(p)!r} not found")
    try:
        raw = json.loads(p.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigParseError(f"{p}: {exc}") from exc
    return parse_config(copy.deepcopy(raw), p.parent, p)
