"""Scenario configuration: JSON schema, inheritance, validation.

A scenario file is one JSON object. Variants reference a base file through
``"extends"``; top-level keys of the child replace whole keys of the base
(shallow merge), which keeps a dropout sweep to one line per condition.

Top-level schema::

    name        string
    dt          seconds per tick, > 0
    steps       tick count, >= 1
    seed        root RNG seed, non-negative integer
    mc_runs     Monte Carlo run count, >= 1
    fusion      {"rule": "hs-cf" | "hs-ci", "delivery": p in [0,1],
                 "ci_cost": "trace" | "logdet"}
    topology    [[i, j], ...] undirected communication edges
    landmarks   [[x, y], ...] known beacon positions (needed by dubins robots)
    robots      [robot, ...]
    targets     [target, ...]
    priors      {"pose_var": 25.0, "target_var": 20.0,
                 "velocity_var": 0.25}

Robot kinds:

    dubins   steered vehicle localizing off landmarks, range-bearing sensing
             of its assigned targets; fields: id, start [x, y, heading],
             targets, wheelbase, rate_noise [qx, qy, qtheta], controls
             [[steps, speed, steering], ...] cycled, landmark_noise
             [range_var, bearing_var], target_noise likewise, max_landmarks,
             heading_prior_var
    bias     static platform with an unknown additive position-measurement
             bias; fields: id, targets, position_noise [rx, ry] (diagonal of
             R), bias_prior_var
    tracker  direct linear position sensing, no platform state of its own;
             fields: id, targets, position_noise [rx, ry]

Target kinds:

    controlled  2-d position under a known control; fields: id, start [x,y],
                step_noise [qx, qy], and either velocity [ux, uy] per step or
                waypoints [[x, y], ...] with speed (m per step)
    ncv         4-d [x, xdot, y, ydot] nearly-constant-velocity model;
                fields: id, start, accel_psd, optional maneuver
                {"straight_steps": n, "turn_steps": m, "turn_rate": rad_per_step}
                applied to the truth only (the filter keeps the ncv model)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .fusion import RULE_CHANNEL, RULE_INTERSECTION
from .local_filter import TaskAllocation
from .network import Topology
from .variables import VariableId, VariableKind

DEFAULT_POSE_PRIOR_VAR = 25.0
DEFAULT_TARGET_PRIOR_VAR = 20.0
DEFAULT_VELOCITY_PRIOR_VAR = 0.25
DEFAULT_BIAS_PRIOR_VAR = 0.04
DEFAULT_HEADING_PRIOR_VAR = 0.02
DEFAULT_CONTROLLED_SPEED = 0.5  # meters per step, straight line

_MAX_EXTENDS_DEPTH = 8


def _fail(field: str, why: str):
    raise ConfigError(f"{field}: {why}")


def _get(obj: dict, field: str, context: str):
    if field not in obj:
        _fail(f"{context}{field}" if context else field, "missing required field")
    return obj[field]


def _number(value, field: str, minimum=None, maximum=None, integer=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(field, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        _fail(field, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        _fail(field, f"value {value} below minimum {minimum}")
    if maximum is not None and value > maximum:
        _fail(field, f"value {value} above maximum {maximum}")
    return int(value) if integer else float(value)


def _vector(value, field: str, length: int) -> tuple[float, ...]:
    if not isinstance(value, list) or len(value) != length:
        _fail(field, f"expected {length} numbers")
    return tuple(_number(x, f"{field}[{i}]") for i, x in enumerate(value))


@dataclass(frozen=True)
class DubinsRobotSpec:
    id: int
    start: tuple[float, float, float]
    targets: tuple[int, ...]
    wheelbase: float
    rate_noise: tuple[float, float, float]
    controls: tuple[tuple[int, float, float], ...]
    landmark_noise: tuple[float, float]
    target_noise: tuple[float, float]
    max_landmarks: int
    heading_prior_var: float

    kind = "dubins"

    @property
    def pose_variable(self) -> VariableId:
        return VariableId(VariableKind.ROBOT_POSE, self.id, 0, 3)

    def control_at(self, k: int) -> tuple[float, float]:
        """Piecewise-constant (speed, steering) at tick k; segments cycle."""
        total = sum(seg[0] for seg in self.controls)
        k = k % total
        for steps, v, phi in self.controls:
            if k < steps:
                return v, phi
            k -= steps
        return self.controls[-1][1], self.controls[-1][2]


@dataclass(frozen=True)
class BiasRobotSpec:
    id: int
    targets: tuple[int, ...]
    position_noise: tuple[float, float]
    bias_prior_var: float

    kind = "bias"

    @property
    def bias_variable(self) -> VariableId:
        return VariableId(VariableKind.BIAS_STATE, self.id, 0, 2)


@dataclass(frozen=True)
class TrackerRobotSpec:
    id: int
    targets: tuple[int, ...]
    position_noise: tuple[float, float]

    kind = "tracker"


RobotSpec = DubinsRobotSpec | BiasRobotSpec | TrackerRobotSpec


@dataclass(frozen=True)
class ControlledTargetSpec:
    id: int
    start: tuple[float, float]
    step_noise: tuple[float, float]
    velocity: tuple[float, float] | None
    waypoints: tuple[tuple[float, float], ...] | None
    speed: float

    kind = "controlled"
    dim = 2


@dataclass(frozen=True)
class NcvTargetSpec:
    id: int
    start: tuple[float, float, float, float]
    accel_psd: float
    maneuver: tuple[int, int, float] | None

    kind = "ncv"
    dim = 4


TargetSpec = ControlledTargetSpec | NcvTargetSpec


@dataclass(frozen=True)
class ScenarioConfig:
    """A fully validated scenario, plus the resolved document for manifests."""

    name: str
    dt: float
    steps: int
    seed: int
    mc_runs: int
    rule: str
    delivery: float
    ci_cost: str
    robots: tuple[RobotSpec, ...]
    targets: tuple[TargetSpec, ...]
    landmarks: tuple[tuple[float, float], ...]
    topology: Topology
    pose_prior_var: float
    target_prior_var: float
    velocity_prior_var: float
    document: dict

    def robot(self, rid: int) -> RobotSpec:
        for r in self.robots:
            if r.id == rid:
                return r
        raise ConfigError(f"robots: no robot with id {rid}")

    def target(self, tid: int) -> TargetSpec:
        for t in self.targets:
            if t.id == tid:
                return t
        raise ConfigError(f"targets: no target with id {tid}")

    def target_variable(self, tid: int) -> VariableId:
        return VariableId(VariableKind.TARGET_STATE, tid, 0, self.target(tid).dim)

    def platform_variable(self, rid: int) -> VariableId | None:
        spec = self.robot(rid)
        if isinstance(spec, DubinsRobotSpec):
            return spec.pose_variable
        if isinstance(spec, BiasRobotSpec):
            return spec.bias_variable
        return None

    def allocation(self) -> TaskAllocation:
        robots = {}
        for spec in self.robots:
            mine = [self.target_variable(t) for t in spec.targets]
            platform = self.platform_variable(spec.id)
            if platform is not None:
                mine.append(platform)
            robots[spec.id] = tuple(sorted(mine))
        return TaskAllocation(robots=robots, edges=self.topology.edges)

    def global_dimension(self) -> int:
        """Total dimension of the union state, the homogeneous message basis."""
        dim = sum(t.dim for t in self.targets)
        for spec in self.robots:
            platform = self.platform_variable(spec.id)
            if platform is not None:
                dim += platform.dim
        return dim

    def with_overrides(
        self,
        rule: str | None = None,
        delivery: float | None = None,
        mc_runs: int | None = None,
        seed: int | None = None,
    ) -> "ScenarioConfig":
        """Copy with CLI-style overrides re-applied through full validation."""
        doc = dict(self.document)
        fusion = dict(doc.get("fusion", {}))
        if rule is not None:
            fusion["rule"] = rule
        if delivery is not None:
            fusion["delivery"] = delivery
        doc["fusion"] = fusion
        if mc_runs is not None:
            doc["mc_runs"] = mc_runs
        if seed is not None:
            doc["seed"] = seed
        return parse_scenario(doc)


def _parse_robot(obj: Any, idx: int) -> RobotSpec:
    ctx = f"robots[{idx}]."
    if not isinstance(obj, dict):
        _fail(f"robots[{idx}]", "expected an object")
    rid = _number(_get(obj, "id", ctx), ctx + "id", minimum=0, integer=True)
    kind = _get(obj, "kind", ctx)
    raw_targets = _get(obj, "targets", ctx)
    if not isinstance(raw_targets, list) or not raw_targets:
        _fail(ctx + "targets", "expected a nonempty array of target ids")
    targets = tuple(
        _number(t, f"{ctx}targets[{i}]", minimum=0, integer=True)
        for i, t in enumerate(raw_targets)
    )
    if len(set(targets)) != len(targets):
        _fail(ctx + "targets", "duplicate target id")

    if kind == "dubins":
        controls_raw = obj.get("controls", [[100, 2.0, 0.1], [100, 2.0, -0.1]])
        if not isinstance(controls_raw, list) or not controls_raw:
            _fail(ctx + "controls", "expected a nonempty array of [steps, speed, steering]")
        controls = []
        for i, seg in enumerate(controls_raw):
            seg_field = f"{ctx}controls[{i}]"
            if not isinstance(seg, list) or len(seg) != 3:
                _fail(seg_field, "expected [steps, speed, steering]")
            steps = _number(seg[0], seg_field + "[0]", minimum=1, integer=True)
            v = _number(seg[1], seg_field + "[1]")
            phi = _number(seg[2], seg_field + "[2]")
            if not abs(phi) < math.pi / 2:
                _fail(seg_field + "[2]", f"steering angle {phi} not in (-pi/2, pi/2)")
            controls.append((steps, v, phi))
        return DubinsRobotSpec(
            id=rid,
            start=_vector(_get(obj, "start", ctx), ctx + "start", 3),
            targets=targets,
            wheelbase=_number(obj.get("wheelbase", 0.6), ctx + "wheelbase", minimum=1e-6),
            rate_noise=_vector(obj.get("rate_noise", [0.05, 0.05, 0.02]), ctx + "rate_noise", 3),
            controls=tuple(controls),
            landmark_noise=_vector(
                obj.get("landmark_noise", [0.25, 0.0009]), ctx + "landmark_noise", 2
            ),
            target_noise=_vector(
                obj.get("target_noise", [0.25, 0.0009]), ctx + "target_noise", 2
            ),
            max_landmarks=_number(obj.get("max_landmarks", 4), ctx + "max_landmarks",
                                  minimum=1, integer=True),
            heading_prior_var=_number(
                obj.get("heading_prior_var", DEFAULT_HEADING_PRIOR_VAR),
                ctx + "heading_prior_var", minimum=1e-12,
            ),
        )
    if kind == "bias":
        return BiasRobotSpec(
            id=rid,
            targets=targets,
            position_noise=_vector(_get(obj, "position_noise", ctx), ctx + "position_noise", 2),
            bias_prior_var=_number(
                obj.get("bias_prior_var", DEFAULT_BIAS_PRIOR_VAR),
                ctx + "bias_prior_var", minimum=1e-12,
            ),
        )
    if kind == "tracker":
        return TrackerRobotSpec(
            id=rid,
            targets=targets,
            position_noise=_vector(_get(obj, "position_noise", ctx), ctx + "position_noise", 2),
        )
    _fail(ctx + "kind", f"unknown robot kind {kind!r}")


def _parse_target(obj: Any, idx: int) -> TargetSpec:
    ctx = f"targets[{idx}]."
    if not isinstance(obj, dict):
        _fail(f"targets[{idx}]", "expected an object")
    tid = _number(_get(obj, "id", ctx), ctx + "id", minimum=0, integer=True)
    kind = _get(obj, "kind", ctx)
    if kind == "controlled":
        velocity = obj.get("velocity")
        waypoints = obj.get("waypoints")
        if velocity is not None and waypoints is not None:
            _fail(ctx + "velocity", "give either velocity or waypoints, not both")
        if velocity is not None:
            velocity = _vector(velocity, ctx + "velocity", 2)
        wp = None
        if waypoints is not None:
            if not isinstance(waypoints, list) or not waypoints:
                _fail(ctx + "waypoints", "expected a nonempty array of [x, y]")
            wp = tuple(
                _vector(p, f"{ctx}waypoints[{i}]", 2) for i, p in enumerate(waypoints)
            )
        return ControlledTargetSpec(
            id=tid,
            start=_vector(_get(obj, "start", ctx), ctx + "start", 2),
            step_noise=_vector(obj.get("step_noise", [0.01, 0.01]), ctx + "step_noise", 2),
            velocity=velocity,
            waypoints=wp,
            speed=_number(obj.get("speed", DEFAULT_CONTROLLED_SPEED), ctx + "speed",
                          minimum=0.0),
        )
    if kind == "ncv":
        maneuver = obj.get("maneuver")
        man = None
        if maneuver is not None:
            if not isinstance(maneuver, dict):
                _fail(ctx + "maneuver", "expected an object")
            man = (
                _number(_get(maneuver, "straight_steps", ctx + "maneuver."),
                        ctx + "maneuver.straight_steps", minimum=1, integer=True),
                _number(_get(maneuver, "turn_steps", ctx + "maneuver."),
                        ctx + "maneuver.turn_steps", minimum=1, integer=True),
                _number(_get(maneuver, "turn_rate", ctx + "maneuver."),
                        ctx + "maneuver.turn_rate"),
            )
        return NcvTargetSpec(
            id=tid,
            start=_vector(_get(obj, "start", ctx), ctx + "start", 4),
            accel_psd=_number(obj.get("accel_psd", 0.05), ctx + "accel_psd", minimum=1e-12),
            maneuver=man,
        )
    _fail(ctx + "kind", f"unknown target kind {kind!r}")


def parse_scenario(doc: dict) -> ScenarioConfig:
    """Validate a resolved (extends-free) scenario document."""
    if not isinstance(doc, dict):
        raise ConfigError("scenario: top level must be a JSON object")
    name = _get(doc, "name", "")
    if not isinstance(name, str) or not name:
        _fail("name", "expected a nonempty string")
    dt = _number(_get(doc, "dt", ""), "dt", minimum=1e-9)
    steps = _number(_get(doc, "steps", ""), "steps", minimum=1, integer=True)
    seed = _number(_get(doc, "seed", ""), "seed", minimum=0, integer=True)
    mc_runs = _number(doc.get("mc_runs", 50), "mc_runs", minimum=1, integer=True)

    fusion = doc.get("fusion", {})
    if not isinstance(fusion, dict):
        _fail("fusion", "expected an object")
    rule = fusion.get("rule", RULE_CHANNEL)
    if rule not in (RULE_CHANNEL, RULE_INTERSECTION):
        _fail("fusion.rule", f"expected '{RULE_CHANNEL}' or '{RULE_INTERSECTION}', got {rule!r}")
    delivery = _number(fusion.get("delivery", 1.0), "fusion.delivery", 0.0, 1.0)
    ci_cost = fusion.get("ci_cost", "trace")
    if ci_cost not in ("trace", "logdet"):
        _fail("fusion.ci_cost", f"expected 'trace' or 'logdet', got {ci_cost!r}")

    robots_raw = _get(doc, "robots", "")
    if not isinstance(robots_raw, list) or not robots_raw:
        _fail("robots", "expected a nonempty array")
    robots = tuple(_parse_robot(r, i) for i, r in enumerate(robots_raw))
    if len({r.id for r in robots}) != len(robots):
        _fail("robots", "duplicate robot id")

    targets_raw = _get(doc, "targets", "")
    if not isinstance(targets_raw, list) or not targets_raw:
        _fail("targets", "expected a nonempty array")
    targets = tuple(_parse_target(t, i) for i, t in enumerate(targets_raw))
    if len({t.id for t in targets}) != len(targets):
        _fail("targets", "duplicate target id")

    target_ids = {t.id for t in targets}
    assigned = set()
    for i, r in enumerate(robots):
        for t in r.targets:
            if t not in target_ids:
                _fail(f"robots[{i}].targets", f"unknown target id {t}")
        assigned.update(r.targets)
    unassigned = target_ids - assigned
    if unassigned:
        _fail("targets", f"targets {sorted(unassigned)} assigned to no robot")

    landmarks_raw = doc.get("landmarks", [])
    if not isinstance(landmarks_raw, list):
        _fail("landmarks", "expected an array of [x, y]")
    landmarks = tuple(
        _vector(p, f"landmarks[{i}]", 2) for i, p in enumerate(landmarks_raw)
    )
    if any(isinstance(r, DubinsRobotSpec) for r in robots) and not landmarks:
        _fail("landmarks", "dubins robots need at least one landmark")

    topology_raw = _get(doc, "topology", "")
    if not isinstance(topology_raw, list):
        _fail("topology", "expected an array of [i, j] edges")
    try:
        topology = Topology((r.id for r in robots), topology_raw)
        topology.validate_for_rule(rule)
    except ConfigError:
        raise
    except Exception as exc:
        _fail("topology", str(exc))

    priors = doc.get("priors", {})
    if not isinstance(priors, dict):
        _fail("priors", "expected an object")
    pose_var = _number(priors.get("pose_var", DEFAULT_POSE_PRIOR_VAR),
                       "priors.pose_var", minimum=1e-12)
    target_var = _number(priors.get("target_var", DEFAULT_TARGET_PRIOR_VAR),
                         "priors.target_var", minimum=1e-12)
    velocity_var = _number(priors.get("velocity_var", DEFAULT_VELOCITY_PRIOR_VAR),
                           "priors.velocity_var", minimum=1e-12)

    config = ScenarioConfig(
        name=name,
        dt=dt,
        steps=steps,
        seed=seed,
        mc_runs=mc_runs,
        rule=rule,
        delivery=delivery,
        ci_cost=ci_cost,
        robots=robots,
        targets=targets,
        landmarks=landmarks,
        topology=topology,
        pose_prior_var=pose_var,
        target_prior_var=target_var,
        velocity_prior_var=velocity_var,
        document=doc,
    )
    allocation = config.allocation()
    try:
        allocation.validate()
    except ConfigError as exc:
        raise ConfigError(f"allocation: {exc}") from None
    return config


def packaged_scenario_names() -> list[str]:
    root = resources.files("fgddf.scenarios")
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))


def _read_document(ref: str, relative_to: Path | None) -> tuple[dict, Path | None]:
    """Load one JSON document from disk or from the packaged scenarios."""
    candidates = []
    p = Path(ref)
    if relative_to is not None and not p.is_absolute():
        candidates.append(relative_to / p)
    candidates.append(p)
    for cand in candidates:
        if cand.is_file():
            try:
                return json.loads(cand.read_text()), cand.parent
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{cand}: not valid JSON ({exc})") from None
    packaged = resources.files("fgddf.scenarios") / Path(ref).name
    if packaged.is_file():
        try:
            return json.loads(packaged.read_text()), None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{ref}: not valid JSON ({exc})") from None
    raise ConfigError(f"scenario {ref!r}: no such file or packaged scenario")


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Read, resolve ``extends`` chains, and validate a scenario file.

    ``path`` may be a filesystem path or the bare name of a packaged scenario
    (for example ``sim5x6.json``). Base documents referenced by ``extends``
    resolve relative to their child first, then against the packaged set.
    """
    doc, base_dir = _read_document(str(path), None)
    depth = 0
    while "extends" in doc:
        depth += 1
        if depth > _MAX_EXTENDS_DEPTH:
            raise ConfigError("extends: chain too deep (cycle?)")
        parent_ref = doc.pop("extends")
        if not isinstance(parent_ref, str):
            raise ConfigError("extends: expected a file name")
        parent, parent_dir = _read_document(parent_ref, base_dir)
        merged = dict(parent)
        merged.update(doc)
        doc = merged
        base_dir = parent_dir
    return parse_scenario(doc)
