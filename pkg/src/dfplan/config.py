"""YAML scenario and study configs with line-numbered validation errors."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .experiments import StudyDesign, default_design
from .planner import LMParams, PlannerParams
from .replanner import ReplanConfig
from .robot import RobotModel, get_model
from .voxel_map import Cuboid, Cylinder, GridSpec, LogOddsParams
from .world_sim import MovingObstacle, SensorSchedule, WorldSim

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str = ""):
        self.line = line
        self.path = path
        where = f"line {line}: " if line is not None else ""
        field = f"{path}: " if path else ""
        super().__init__(f"{where}{field}{message}")


class _Node:
    """A parsed value plus the source line of every nested key, for error reporting."""

    def __init__(self, data, lines: dict, path: str = ""):
        self.data = data
        self.lines = lines
        self.path = path

    def line(self, path=None):
        return self.lines.get(self.path if path is None else path)

    def _sub(self, key):
        return f"{self.path}.{key}" if self.path else str(key)

    def error(self, msg, key=None):
        p = self.path if key is None else self._sub(key)
        return ConfigError(msg, self.lines.get(p, self.line()), p)

    def has(self, key) -> bool:
        return isinstance(self.data, dict) and key in self.data

    def child(self, key, required=True, default=None) -> "_Node":
        if not isinstance(self.data, dict):
            raise self.error("expected a mapping")
        if key not in self.data:
            if required:
                raise self.error(f"missing required field '{self._sub(key)}'")
            return _Node(default, self.lines, self._sub(key))
        return _Node(self.data[key], self.lines, self._sub(key))

    def items(self):
        if not isinstance(self.data, list):
            raise self.error("expected a list")
        return [_Node(v, self.lines, f"{self.path}[{i}]") for i, v in enumerate(self.data)]

    def check_keys(self, allowed):
        if not isinstance(self.data, dict):
            raise self.error("expected a mapping")
        for k in self.data:
            if k not in allowed:
                raise self.error(f"unknown field '{k}'", k)

    def number(self, lo=None, hi=None, positive=False, integer=False):
        v = self.data
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.error(f"expected a number, got {v!r}")
        if integer and not isinstance(v, int):
            raise self.error(f"expected an integer, got {v!r}")
        if positive and v <= 0:
            raise self.error(f"must be positive, got {v!r}")
        if lo is not None and v < lo or hi is not None and v > hi:
            raise self.error(f"must lie in [{lo}, {hi}], got {v!r}")
        return int(v) if integer else float(v)

    def vector(self, n=None):
        v = self.data
        if not isinstance(v, list) or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
            raise self.error(f"expected a list of numbers, got {v!r}")
        if n is not None and len(v) != n:
            raise self.error(f"expected {n} values, got {len(v)}")
        return [float(x) for x in v]

    def choice(self, options):
        if self.data not in options:
            raise self.error(f"expected one of {list(options)}, got {self.data!r}")
        return self.data


def _construct(node: yaml.Node, lines: dict, path: str):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            sub = f"{path}.{key}" if path else key
            if key in out:
                raise ConfigError(f"duplicate key '{key}'", k.start_mark.line + 1, sub)
            out[key] = _construct(v, lines, sub)
            lines[sub] = k.start_mark.line + 1
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_construct(v, lines, f"{path}[{i}]") for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


def parse_yaml(text: str) -> _Node:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as e:
        line = e.problem_mark.line + 1 if e.problem_mark else None
        raise ConfigError(f"invalid YAML: {e.problem}", line) from None
    if root is None:
        raise ConfigError("empty config", 1)
    lines: dict = {}
    data = _construct(root, lines, "")
    return _Node(data, lines)


def _shape(n: _Node):
    kind = n.child("type").choice(("cuboid", "cylinder"))
    if kind == "cuboid":
        n.check_keys({"type", "center", "half_extents"})
        he = n.child("half_extents")
        vals = he.vector(3)
        if min(vals) <= 0:
            raise he.error("half extents must be positive")
        return Cuboid(n.child("center").vector(3), vals)
    n.check_keys({"type", "center", "radius", "height"})
    return Cylinder(n.child("center").vector(3), n.child("radius").number(positive=True),
                    n.child("height").number(positive=True))


def _dataclass_block(n: _Node, cls, required=()):
    """Fill a flat numeric dataclass from an optional mapping."""
    if n.data is None:
        return cls()
    names = {f.name: f for f in fields(cls)}
    n.check_keys(set(names))
    kw = {}
    for k in n.data:
        c = n.child(k)
        default = names[k].default
        if isinstance(default, bool):
            if not isinstance(c.data, bool):
                raise c.error("expected true or false")
            kw[k] = c.data
        elif isinstance(default, int):
            kw[k] = c.number(integer=True)
        else:
            kw[k] = c.number()
    for r in required:
        if r not in kw:
            raise n.error(f"missing required field '{n._sub(r)}'")
    try:
        return cls(**kw)
    except ValueError as e:
        raise n.error(str(e)) from None


@dataclass
class Scenario:
    name: str
    world: WorldSim
    model: RobotModel
    start: np.ndarray
    goal: np.ndarray
    params: PlannerParams
    cfg: ReplanConfig
    seed: int = 0
    model_name: str = ""

    def __getitem__(self, key):
        return getattr(self, key)

    def fresh_world(self) -> WorldSim:
        """A new simulator at clock zero with the same scene."""
        w = self.world
        return WorldSim(w.spec, w.static, w.moving, w.kind, w.sensing, w.sensor, w.floor_band, w.grid.params)


def scenario_from_dict(node: _Node) -> Scenario:
    node.check_keys({"schema_version", "name", "seed", "robot", "grid", "field_kind", "sensing", "sensor",
                     "floor_band", "logodds", "static", "moving", "start", "goal", "planner", "replan"})
    ver = node.child("schema_version").number(integer=True)
    if ver != SCHEMA_VERSION:
        raise node.error(f"unsupported schema_version {ver}", "schema_version")
    name = str(node.child("name", False, "scenario").data)
    seed = node.child("seed", False, 0).number(integer=True)

    rn = node.child("robot")
    rn.check_keys({"model"})
    mname = rn.child("model").data
    try:
        model = get_model(mname)
    except ValueError as e:
        raise rn.error(str(e), "model") from None

    gn = node.child("grid")
    gn.check_keys({"origin", "resolution", "dims"})
    dims_n = gn.child("dims")
    dims = dims_n.vector(3)
    if any(d < 1 or d != int(d) for d in dims):
        raise dims_n.error("dims must be positive integers")
    spec = GridSpec(tuple(gn.child("origin").vector(3)), gn.child("resolution").number(positive=True),
                    tuple(int(d) for d in dims))

    kind = node.child("field_kind", False, "signed").choice(("signed", "unsigned"))
    sensing = node.child("sensing", False, "omniscient").choice(("omniscient", "raycast"))
    sensor = None
    sn = node.child("sensor", False)
    if sn.data is not None:
        sn.check_keys({f.name for f in fields(SensorSchedule)})
        kw = {"origin": tuple(sn.child("origin").vector(3))}
        for k in ("yaw_range", "pitch_range"):
            if sn.has(k):
                kw[k] = tuple(sn.child(k).vector(2))
        for k in ("n_yaw", "n_pitch"):
            if sn.has(k):
                kw[k] = sn.child(k).number(positive=True, integer=True)
        for k in ("max_range", "floor_z"):
            if sn.has(k):
                kw[k] = sn.child(k).number()
        sensor = SensorSchedule(**kw)
    if sensing == "raycast" and sensor is None:
        raise node.error("raycast sensing needs a 'sensor' block", "sensing")
    floor_band = node.child("floor_band", False, 0.03).number(lo=0.0)
    logodds = _dataclass_block(node.child("logodds", False), LogOddsParams)

    static = [_shape(s) for s in node.child("static", False, []).items()]
    moving = []
    for m in node.child("moving", False, []).items():
        m.check_keys({"name", "shape", "waypoints"})
        wps = []
        for w in m.child("waypoints").items():
            w.check_keys({"t", "center"})
            wps.append((w.child("t").number(), tuple(w.child("center").vector(3))))
        try:
            moving.append(MovingObstacle(_shape(m.child("shape")), wps, str(m.child("name", False, "").data)))
        except ValueError as e:
            raise m.error(str(e), "waypoints") from None

    start = np.array(node.child("start").vector(model.dof))
    goal = np.array(node.child("goal").vector(model.dof))

    pn = node.child("planner", False)
    if pn.data is None:
        params = PlannerParams()
    else:
        pn.check_keys({"dt", "qc", "prior_sigma", "eps", "obs_sigma", "n_interp"})
        kw = {k: pn.child(k).number(integer=(k == "n_interp")) for k in pn.data}
        try:
            params = PlannerParams(**kw)
        except ValueError as e:
            raise pn.error(str(e)) from None
    cfg = _dataclass_block(node.child("replan", False), ReplanConfig)

    world = WorldSim(spec, static, moving, kind, sensing, sensor, floor_band, logodds)
    return Scenario(name, world, model, start, goal, params, cfg, seed, mname)


def load_scenario(path_or_text) -> Scenario:
    return scenario_from_dict(parse_yaml(_read(path_or_text)))


scenario_from_config = load_scenario


def _read(path_or_text) -> str:
    if isinstance(path_or_text, Path) or (isinstance(path_or_text, str) and "\n" not in path_or_text):
        return Path(path_or_text).read_text()
    return path_or_text


def scenario_to_dict(sc: Scenario) -> dict:
    w = sc.world
    out = {
        "schema_version": SCHEMA_VERSION,
        "name": sc.name,
        "seed": sc.seed,
        "robot": {"model": sc.model_name or sc.model.name},
        "grid": {"origin": list(w.spec.origin), "resolution": w.spec.resolution, "dims": list(w.spec.dims)},
        "field_kind": w.kind,
        "sensing": w.sensing,
        "floor_band": w.floor_band,
        "logodds": asdict(w.grid.params),
        "static": [s.to_dict() for s in w.static],
        "moving": [{"name": m.name, "shape": m.shape.to_dict(),
                    "waypoints": [{"t": t, "center": list(c)} for t, c in m.waypoints]} for m in w.moving],
        "start": [float(v) for v in sc.start],
        "goal": [float(v) for v in sc.goal],
        "planner": {k: getattr(sc.params, k) for k in ("dt", "qc", "prior_sigma", "eps", "obs_sigma", "n_interp")},
        "replan": asdict(sc.cfg),
    }
    if w.sensor is not None:
        s = asdict(w.sensor)
        out["sensor"] = {k: list(v) if isinstance(v, tuple) else v for k, v in s.items()}
    return out


def emit_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False)


_STUDY_KEYS = {"case", "n_states", "n_envs", "size_range", "workspace", "grid", "state_box", "seed", "n_support",
               "dt", "qc", "eps", "obs_sigma", "prior_sigma", "n_interp", "n_check", "lm", "robot_radius",
               "max_retries"}


def study_from_dict(node: _Node) -> StudyDesign:
    node.check_keys(_STUDY_KEYS | {"schema_version"})
    case = node.child("case").choice(("nav2d", "arm", "wholebody"))
    kw = {}
    for k in ("n_states", "n_envs", "seed", "n_support", "n_interp", "n_check", "max_retries"):
        if node.has(k):
            kw[k] = node.child(k).number(integer=True)
    for k in ("dt", "qc", "eps", "obs_sigma", "prior_sigma", "robot_radius"):
        if node.has(k):
            kw[k] = node.child(k).number()
    if node.has("size_range"):
        kw["size_range"] = tuple(node.child("size_range").vector(2))
    if node.has("workspace"):
        ws = node.child("workspace").items()
        if len(ws) != 2:
            raise node.error("workspace needs [lower, upper] corners", "workspace")
        kw["workspace"] = tuple(tuple(c.vector(3)) for c in ws)
    if node.has("state_box"):
        sb = node.child("state_box")
        kw["state_box"] = None if sb.data is None else tuple(tuple(c.vector(2)) for c in sb.items())
    if node.has("grid"):
        gn = node.child("grid")
        gn.check_keys({"origin", "resolution", "dims"})
        kw["grid"] = GridSpec(tuple(gn.child("origin").vector(3)), gn.child("resolution").number(positive=True),
                              tuple(int(d) for d in gn.child("dims").vector(3)))
    if node.has("lm"):
        kw["lm"] = _dataclass_block(node.child("lm"), LMParams)
    try:
        return default_design(case, **kw)
    except ValueError as e:
        raise node.error(str(e)) from None


def load_study(path_or_text) -> StudyDesign:
    return study_from_dict(parse_yaml(_read(path_or_text)))


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package, e.g. ``floor_pickup``."""
    p = resources.files("dfplan") / "configs" / f"{name}.yaml"
    if not p.is_file():
        raise FileNotFoundError(f"no bundled config named {name!r}")
    return Path(str(p))


def config_hash(path_or_text) -> str:
    return hashlib.sha256(_read(path_or_text).encode()).hexdigest()
