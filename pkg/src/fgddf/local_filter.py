"""Per-robot extended information filter over the robot's tasked states.

Each robot carries a factor graph over exactly the states it is responsible
for. A filter step is: predict (append next-slice variables through the
motion models, linearized at the current mean), marginalize the past slice
(after a conservative re-factorization that keeps neighbor-common blocks
decoupled), then fold in the tick's measurements. Fusion with neighbors
happens outside, between steps, by appending factors over shared variables.

Static states (sensor biases) keep time index 0 forever: they get no
transition factors and are never marginalized out.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Protocol, Sequence

import numpy as np

from .errors import ConfigError, SingularInformation, UnknownVariable
from .factor_graph import FactorGraph, Provenance, conservative_refactor
from .gaussian import InfoForm, MomentForm, to_moment
from .models import (
    LinearMeasurement,
    Measurement,
    NCV_POSITION_PICK,
    RangeBearingMeasurement,
    position_of,
    range_bearing_jacobians,
    range_bearing_predict,
    wrap_angle,
)
from .variables import VariableId, VariableKind, VariableOrdering


class TransitionModel(Protocol):
    """Supplies (F, c, Q) for one state block's step from tick k to k+1.

    Returns None for static blocks. ``mean`` is the block's current filter
    mean, used as the linearization point by nonlinear models.
    """

    def transition(
        self, slot: VariableId, k: int, mean: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray] | None: ...


@dataclass(frozen=True)
class TaskAllocation:
    """Which states each robot estimates, and who talks to whom.

    ``robots`` maps robot id to its time-0 template variables; ``edges`` are
    undirected communication links. Shared estimation tasks (the intersection
    of two neighbors' variable sets) are what flows over an edge.
    """

    robots: dict[int, tuple[VariableId, ...]]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "robots", {i: tuple(sorted(vs)) for i, vs in self.robots.items()}
        )
        norm = []
        for i, j in self.edges:
            if i == j:
                raise ConfigError(f"edge ({i},{j}) connects a robot to itself")
            norm.append((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", tuple(sorted(set(norm))))

    def validate(self) -> None:
        """Structural checks; raises ConfigError naming the offending part."""
        for i, j in self.edges:
            for r in (i, j):
                if r not in self.robots:
                    raise ConfigError(f"edge ({i},{j}) references unknown robot {r}")
            if not self.common(i, j):
                raise ConfigError(f"edge ({i},{j}) has no shared states to fuse over")
        for i, vs in self.robots.items():
            for v in vs:
                if v.kind in (VariableKind.ROBOT_POSE, VariableKind.BIAS_STATE):
                    for o, other in self.robots.items():
                        if o != i and v in other:
                            raise ConfigError(
                                f"platform state {v!r} of robot {v.owner} is also "
                                f"estimated by robot {o}; platform states are private"
                            )
                    if v.owner != i:
                        raise ConfigError(
                            f"robot {i} estimates platform state {v!r} it does not own"
                        )

    def neighbors(self, i: int) -> tuple[int, ...]:
        out = []
        for a, b in self.edges:
            if a == i:
                out.append(b)
            elif b == i:
                out.append(a)
        return tuple(sorted(out))

    def common(self, i: int, j: int) -> tuple[VariableId, ...]:
        """Template variables shared by robots i and j, canonically sorted."""
        si, sj = set(self.robots[i]), set(self.robots[j])
        return tuple(sorted(si & sj))

    def common_groups(self, i: int) -> list[tuple[VariableId, ...]]:
        return [self.common(i, j) for j in self.neighbors(i)]

    def local_slots(self, i: int) -> tuple[VariableId, ...]:
        shared: set[VariableId] = set()
        for grp in self.common_groups(i):
            shared.update(grp)
        return tuple(v for v in self.robots[i] if v not in shared)

    def all_slots(self) -> tuple[VariableId, ...]:
        every: set[VariableId] = set()
        for vs in self.robots.values():
            every.update(vs)
        return tuple(sorted(every))


def static_slots_of(slots: Iterable[VariableId]) -> frozenset[VariableId]:
    """Bias blocks have no dynamics; everything else steps forward in time."""
    return frozenset(v for v in slots if v.kind is VariableKind.BIAS_STATE)


@dataclass(frozen=True)
class RobotBelief:
    """One robot's posterior as a factor graph, plus time bookkeeping."""

    robot_id: int
    graph: FactorGraph
    time: int
    slots: tuple[VariableId, ...]
    statics: frozenset[VariableId]

    def current_variables(self) -> tuple[VariableId, ...]:
        """The tasked variables stamped at the belief's current time."""
        return tuple(
            sorted(v if v in self.statics else v.at(self.time) for v in self.slots)
        )

    def joint(self) -> InfoForm:
        return self.graph.joint_info()

    def estimate(self) -> MomentForm:
        """Posterior mean/covariance over the current variables."""
        return to_moment(self.graph.joint_info())


def initial_belief(
    robot_id: int,
    slots: Sequence[VariableId],
    prior_means: dict[VariableId, np.ndarray],
    prior_covs: dict[VariableId, np.ndarray],
) -> RobotBelief:
    """Independent Gaussian priors, one factor per state block, at time 0."""
    graph = FactorGraph()
    for v in sorted(slots):
        ordering = VariableOrdering([v])
        cov = np.asarray(prior_covs[v], dtype=float)
        lam = np.linalg.inv(cov)
        lam = 0.5 * (lam + lam.T)
        zeta = lam @ np.asarray(prior_means[v], dtype=float)
        graph = graph.add_factor(Provenance.PRIOR, InfoForm(ordering, zeta, lam))
    return RobotBelief(
        robot_id=robot_id,
        graph=graph,
        time=0,
        slots=tuple(sorted(slots)),
        statics=static_slots_of(slots),
    )


def transition_payload(
    var_k: VariableId,
    var_k1: VariableId,
    f: np.ndarray,
    c: np.ndarray,
    q: np.ndarray,
) -> InfoForm:
    """Information factor for x_{k+1} = F x_k + c + w, w ~ N(0, Q)."""
    qi = np.linalg.inv(np.asarray(q, dtype=float))
    qi = 0.5 * (qi + qi.T)
    fqi = f.T @ qi
    lam = np.block([[fqi @ f, -fqi], [-fqi.T, qi]])
    zeta = np.concatenate([-fqi @ c, qi @ c])
    ordering = VariableOrdering([var_k, var_k1])
    # canonical order puts the earlier time first, matching the block layout
    assert ordering.variables == (var_k, var_k1)
    return InfoForm(ordering, zeta, 0.5 * (lam + lam.T))


def _joint_and_mean(graph: FactorGraph) -> tuple[InfoForm, np.ndarray]:
    joint = graph.joint_info()
    try:
        mean = np.linalg.solve(joint.lam, joint.zeta)
    except np.linalg.LinAlgError as e:
        raise SingularInformation(f"belief joint is singular: {e}") from e
    return joint, mean


def predict(belief: RobotBelief, models: TransitionModel) -> RobotBelief:
    """Append the next time slice through the motion models.

    Linearizes at the current posterior mean. The belief's time advances;
    the past slice stays in the graph until `marginalize_past`.
    """
    joint, mean = _joint_and_mean(belief.graph)
    k = belief.time
    graph = belief.graph
    for slot in belief.slots:
        if slot in belief.statics:
            continue
        var_k = slot.at(k)
        s = joint.ordering.slice_of(var_k)
        model = models.transition(slot, k, mean[s])
        if model is None:
            raise ConfigError(f"dynamic block {slot!r} has no transition model")
        f, c, q = model
        graph = graph.add_factor(
            Provenance.TRANSITION, transition_payload(var_k, slot.at(k + 1), f, c, q)
        )
    return replace(belief, graph=graph, time=k + 1)


def marginalize_past(belief: RobotBelief, allocation: TaskAllocation) -> RobotBelief:
    """Drop all pre-current dynamic variables, conservatively re-factored first.

    The re-factorization decouples this robot's per-neighbor shared blocks
    (and its private block) before elimination, so that fill-in from the past
    slice never directly couples states shared with different neighbors.
    """
    graph = belief.graph
    by_slot: dict[tuple, list[VariableId]] = {}
    for v in graph.variables:
        by_slot.setdefault(v.slot, []).append(v)

    def expand(templates: Iterable[VariableId]) -> list[VariableId]:
        out: list[VariableId] = []
        for t in templates:
            out.extend(by_slot.get(t.slot, []))
        return out

    local = expand(allocation.local_slots(belief.robot_id))
    groups = [expand(g) for g in allocation.common_groups(belief.robot_id)]
    graph = conservative_refactor(graph, local, groups)

    drop = [
        v
        for v in graph.variables
        if v.time < belief.time and v.at(0) not in belief.statics
    ]
    return replace(belief, graph=graph.eliminate(drop))


def measurement_factor(
    m: Measurement, joint: InfoForm | None, mean: np.ndarray | None
) -> InfoForm:
    """Information factor for one measurement record.

    Linear records need no linearization point. Range-bearing records are
    linearized at the current mean; the bearing innovation is wrapped before
    entering the information vector.
    """
    if isinstance(m, LinearMeasurement):
        ri = np.linalg.inv(np.asarray(m.noise_cov, dtype=float))
        ri = 0.5 * (ri + ri.T)
        h = m.matrix
        lam = h.T @ ri @ h
        zeta = h.T @ ri @ m.z
        return InfoForm(VariableOrdering(m.variables), zeta, 0.5 * (lam + lam.T))

    if not isinstance(m, RangeBearingMeasurement):
        raise ConfigError(f"unsupported measurement type {type(m).__name__}")
    if joint is None or mean is None:
        raise SingularInformation("nonlinear measurement needs a linearization point")
    sp = joint.ordering.slice_of(m.pose)
    pose_mean = mean[sp]
    if m.landmark is not None:
        point = np.asarray(m.landmark, dtype=float)
        involved = (m.pose,)
    else:
        st = joint.ordering.slice_of(m.target)
        tmean = mean[st]
        point = position_of(tmean)
        involved = tuple(sorted((m.pose, m.target)))
    h_pose, h_point = range_bearing_jacobians(pose_mean, point)
    if m.landmark is not None:
        h = h_pose
        stack_mean = pose_mean
    else:
        h_t = h_point if m.target.dim == 2 else h_point @ NCV_POSITION_PICK
        blocks = {m.pose: h_pose, m.target: h_t}
        h = np.concatenate([blocks[v] for v in involved], axis=1)
        stack_mean = np.concatenate([mean[joint.ordering.slice_of(v)] for v in involved])
    innov = m.z - range_bearing_predict(pose_mean, point)
    innov[1] = wrap_angle(innov[1])
    ri = np.linalg.inv(np.asarray(m.noise_cov, dtype=float))
    ri = 0.5 * (ri + ri.T)
    lam = h.T @ ri @ h
    zeta = h.T @ ri @ (innov + h @ stack_mean)
    return InfoForm(VariableOrdering(involved), zeta, 0.5 * (lam + lam.T))


def measurement_update(
    belief: RobotBelief, measurements: Sequence[Measurement]
) -> RobotBelief:
    """Fold the tick's measurements into the belief; no-op on an empty batch."""
    if not measurements:
        return belief
    needs_lin = any(isinstance(m, RangeBearingMeasurement) for m in measurements)
    joint = mean = None
    if needs_lin:
        joint, mean = _joint_and_mean(belief.graph)
    graph = belief.graph
    current = set(graph.variables)
    for m in measurements:
        refs = (m.pose, m.target) if isinstance(m, RangeBearingMeasurement) else m.variables
        for v in refs:
            if v is not None and v not in current:
                raise UnknownVariable(
                    f"measurement references {v!r}, not estimated by robot {belief.robot_id}"
                )
        graph = graph.add_factor(
            Provenance.MEASUREMENT, measurement_factor(m, joint, mean)
        )
    return replace(belief, graph=graph)


def local_step(
    belief: RobotBelief,
    models: TransitionModel,
    allocation: TaskAllocation,
    measurements: Sequence[Measurement],
) -> RobotBelief:
    """One full filter tick: predict, marginalize the past, update."""
    belief = predict(belief, models)
    belief = marginalize_past(belief, allocation)
    return measurement_update(belief, measurements)
