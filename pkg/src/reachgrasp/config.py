"""Structured-text (YAML) configuration: arms, grippers, scenes, grids, params.

All lengths are meters and all angles radians. Angle fields also accept
simple expressions of ``pi`` such as ``"-pi"`` or ``"pi/4"``.
"""
from __future__ import annotations

import ast
import hashlib
import math
import operator
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .geometry import Pose6
from .grasp import EnergyParams, GraspObject, Gripper
from .kinematics import ArmModel, IKParams, Joint
from .planner import PlannerConfig
from .sdf import MetricParams
from .shapes import Capsule, Obstacle, Scene, make_solid


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.USub: operator.neg, ast.UAdd: operator.pos}


def _eval_expr(node):
    if isinstance(node, ast.Expression):
        return _eval_expr(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return float(node.value)
    if isinstance(node, ast.Name) and node.id == "pi":
        return math.pi
    if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
        return _OPS[type(node.op)](_eval_expr(node.left), _eval_expr(node.right))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
        return _OPS[type(node.op)](_eval_expr(node.operand))
    raise ConfigError("unsupported expression")


def num(v: Any) -> float:
    """Float from a YAML scalar, accepting ``pi`` expressions."""
    if isinstance(v, bool):
        raise ConfigError(f"expected a number, got {v!r}")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        try:
            return _eval_expr(ast.parse(v.strip(), mode="eval"))
        except (SyntaxError, ConfigError) as exc:
            raise ConfigError(f"cannot parse number {v!r}") from exc
    raise ConfigError(f"expected a number, got {v!r}")


def vec(v: Any, n: int, what: str) -> tuple[float, ...]:
    if not isinstance(v, (list, tuple)) or len(v) != n:
        raise ConfigError(f"{what}: expected a list of {n} numbers, got {v!r}")
    return tuple(num(x) for x in v)


def pose(v: Any, what: str = "pose") -> Pose6:
    if v is None:
        return Pose6()
    return Pose6(*vec(v, 6, what))


def capsules(items: Any, what: str) -> tuple[Capsule, ...]:
    out = []
    for g in items or []:
        shape = g.get("shape", "capsule")
        try:
            if shape == "capsule":
                out.append(Capsule(vec(g["a"], 3, what), vec(g["b"], 3, what), num(g["radius"])))
            elif shape == "sphere":
                c = vec(g["center"], 3, what)
                out.append(Capsule(c, c, num(g["radius"])))
            else:
                raise ConfigError(f"{what}: link geometry must be capsule or sphere, got {shape!r}")
        except KeyError as exc:
            raise ConfigError(f"{what}: missing field {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"{what}: {exc}") from exc
    return tuple(out)


def arm_from_dict(d: dict) -> ArmModel:
    try:
        joints = []
        for i, jd in enumerate(d["joints"]):
            name = jd.get("name", f"j{i + 1}")
            lo, hi = vec(jd["limits"], 2, f"joint {name} limits")
            joints.append(Joint(
                name=name,
                kind=jd.get("type", "revolute"),
                axis=vec(jd["axis"], 3, f"joint {name} axis"),
                origin=pose(jd.get("origin"), f"joint {name} origin"),
                lower=lo,
                upper=hi,
                geometry=capsules(jd.get("geometry"), f"joint {name} geometry"),
            ))
        home = d.get("home")
        return ArmModel(
            name=d.get("name", "arm"),
            joints=tuple(joints),
            base=pose(d.get("base"), "arm base"),
            ee_offset=pose(d.get("ee_offset"), "arm ee_offset"),
            base_geometry=capsules(d.get("base_geometry"), "base geometry"),
            tool_geometry=capsules(d.get("tool_geometry"), "tool geometry"),
            extra_adjacent=tuple(tuple(int(x) for x in p) for p in d.get("extra_adjacent", [])),
            home=None if home is None else tuple(num(x) for x in home),
        )
    except KeyError as exc:
        raise ConfigError(f"arm config missing field {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def solid_from_dict(d: dict, what: str):
    shape = d.get("shape")
    dims = {}
    if "size" in d:
        dims["size"] = vec(d["size"], 3, f"{what} size")
    for k in ("radius", "height"):
        if k in d:
            dims[k] = num(d[k])
    try:
        return make_solid(str(shape), dims, pose(d.get("pose"), f"{what} pose"))
    except KeyError as exc:
        raise ConfigError(f"{what}: missing dimension {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{what}: {exc}") from exc


def scene_from_dict(d: dict | list | None) -> Scene:
    if d is None:
        return Scene()
    items = d.get("obstacles", []) if isinstance(d, dict) else d
    obs = []
    for i, od in enumerate(items or []):
        name = od.get("name", f"obstacle{i}")
        obs.append(Obstacle(solid_from_dict(od, name), name=name, tags=tuple(od.get("tags", ()))))
    return Scene(tuple(obs))


def ik_from_dict(d: dict | None) -> IKParams:
    d = dict(d or {})
    kw = {}
    for k in ("tol_pos", "tol_rot", "damping", "rot_weight", "max_step"):
        if k in d:
            kw[k] = num(d.pop(k))
    for k in ("restarts", "max_iter", "seed"):
        if k in d:
            kw[k] = int(d.pop(k))
    if "mode" in d:
        kw["mode"] = str(d.pop("mode"))
    if d:
        raise ConfigError(f"unknown ik fields: {sorted(d)}")
    try:
        return IKParams(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _typed_fields(d: dict | None, floats=(), ints=(), strs=(), bools=(), pairs=(), what="section") -> dict:
    d = dict(d or {})
    kw = {}
    for k in floats:
        if k in d:
            kw[k] = num(d.pop(k))
    for k in ints:
        if k in d:
            kw[k] = int(d.pop(k))
    for k in strs:
        if k in d:
            kw[k] = str(d.pop(k))
    for k in bools:
        if k in d:
            kw[k] = bool(d.pop(k))
    for k in pairs:
        if k in d:
            kw[k] = vec(d.pop(k), 2, f"{what} {k}")
    if d:
        raise ConfigError(f"unknown {what} fields: {sorted(d)}")
    return kw


def gripper_from_dict(d: dict | None) -> Gripper:
    kw = _typed_fields(d, floats=("pad_depth", "finger_base", "finger_tip", "finger_radius", "palm_radius", "torsion"),
                       strs=("name", "kind"), pairs=("aperture", "spread"), what="gripper")
    try:
        return Gripper(**kw)
    except ValueError as exc:
        raise ConfigError(f"gripper: {exc}") from exc


def energy_from_dict(d: dict | None) -> EnergyParams:
    kw = _typed_fields(d, floats=("beta", "contact_scale", "potential_scale", "missing_contact"),
                       ints=("cone_edges",), what="energy")
    return EnergyParams(**kw)


def metric_from_dict(d: dict | None) -> tuple[MetricParams, str]:
    d = dict(d or {})
    hood = str(d.pop("neighbourhood", "full"))
    if hood not in ("face", "full"):
        raise ConfigError(f"metric neighbourhood must be face or full, got {hood!r}")
    kw = _typed_fields(d, floats=("res_lin_cm", "res_rot", "ratio"), what="metric")
    try:
        return MetricParams(**kw), hood
    except ValueError as exc:
        raise ConfigError(f"metric: {exc}") from exc


def object_from_dict(d: dict, pose_: Pose6 | None = None) -> GraspObject:
    d = dict(d)
    name = d.pop("name", "object")
    shape = d.pop("shape", None)
    mu = num(d.pop("mu", 0.5))
    p = pose_ if pose_ is not None else pose(d.pop("pose", None), f"object {name} pose")
    d.pop("pose", None)
    dims = {}
    if "size" in d:
        dims["size"] = vec(d.pop("size"), 3, f"object {name} size")
    for k in ("radius", "height"):
        if k in d:
            dims[k] = num(d.pop(k))
    if d:
        raise ConfigError(f"unknown object fields: {sorted(d)}")
    try:
        return GraspObject(str(shape), dims, p, mu, name)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"object {name}: {exc}") from exc


def planner_from_dict(d: dict | None, **overrides) -> PlannerConfig:
    d = dict(d or {})
    extra = {}
    if "alphas" in d:
        extra["alphas"] = vec(d.pop("alphas"), 3, "planner alphas")
    if "distinct_metric" in d:
        extra["distinct_metric"], _ = metric_from_dict(d.pop("distinct_metric"))
    if "energy_params" in d:
        extra["energy_params"] = energy_from_dict(d.pop("energy_params"))
    kw = _typed_fields(d, floats=("t0", "t_floor", "step_lin", "step_rot", "step_dof", "margin",
                                  "distinct_dist", "distinct_dof"),
                       ints=("steps", "keep_top_k", "seed"), strs=("energy",), bools=("avoid_obstacles",),
                       what="planner")
    kw.update(extra)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return PlannerConfig(**kw)
    except ValueError as exc:
        raise ConfigError(f"planner: {exc}") from exc


@dataclass
class Config:
    """A loaded configuration file plus its source text hash."""

    raw: dict
    source: str
    digest: str

    def section(self, name: str, required: bool = True):
        if name not in self.raw:
            if required:
                raise ConfigError(f"config {self.source} has no {name!r} section")
            return None
        return self.raw[name]

    @property
    def arm(self) -> ArmModel:
        return arm_from_dict(self.section("arm"))

    @property
    def scene(self) -> Scene:
        return scene_from_dict(self.section("scene", required=False))

    @property
    def ik(self) -> IKParams:
        return ik_from_dict(self.section("ik", required=False))

    @property
    def gripper(self) -> Gripper:
        return gripper_from_dict(self.section("gripper", required=False))

    @property
    def metric(self) -> MetricParams:
        return metric_from_dict(self.section("metric", required=False))[0]

    @property
    def neighbourhood(self) -> str:
        return metric_from_dict(self.section("metric", required=False))[1]

    @property
    def grid_spec(self):
        from .reachability import spec_from_dict

        return spec_from_dict(self.section("grid"))

    def planner(self, **overrides) -> PlannerConfig:
        return planner_from_dict(self.section("planner", required=False), **overrides)


BUILTIN = ("planar2", "desk6")


def load_config(path_or_name: str | Path) -> Config:
    """Load a YAML config from a path or one of the shipped names in :data:`BUILTIN`."""
    p = Path(path_or_name)
    if p.exists():
        text = p.read_text(encoding="utf-8")
        source = str(p)
    elif str(path_or_name) in BUILTIN:
        text = resources.files("reachgrasp").joinpath(f"configs/{path_or_name}.yaml").read_text(encoding="utf-8")
        source = f"builtin:{path_or_name}"
    else:
        raise ConfigError(f"config not found: {path_or_name}")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {source}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    return Config(raw=raw, source=source, digest=hashlib.sha256(text.encode()).hexdigest())
