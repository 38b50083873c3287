"""Fusion of neighbor marginals over shared states.

Two rules are provided. The channel-filter rule subtracts the explicitly
tracked common information (exact on acyclic networks with linear dynamics
over the shared states):

    fused = own + received - channel

The covariance-intersection rule replaces the tracked channel with a convex
combination chosen to minimize the fused uncertainty, which is conservative
under unknown correlations:

    common ~ (1-w) * own + w * received      =>   fused = w * own + (1-w) * received

Either way, the robot's belief absorbs the difference between the fused and
its own marginal as a single factor over the shared variables, which leaves
the conditional of its remaining states given the shared ones untouched.

Both ends of an edge run the same protocol simultaneously from their
pre-fusion beliefs. Under dropout a sender always commits its transmitted
marginal to its channel state (it cannot know the message was lost), which is
exactly how the two channel copies drift apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import (
    MalformedMessage,
    NonPsdFusion,
    SingularCombination,
    UnknownVariable,
)
from .factor_graph import FactorGraph, Provenance
from .gaussian import InfoForm, PSD_TOL, marginalize_info, subtract_info
from .local_filter import (
    RobotBelief,
    TaskAllocation,
    TransitionModel,
    static_slots_of,
    transition_payload,
)
from .variables import VariableId, VariableOrdering

WIRE_VERSION = 1

RULE_CHANNEL = "hs-cf"
RULE_INTERSECTION = "hs-ci"


@dataclass(frozen=True)
class FusionMessage:
    """One marginal over shared states, sent from one robot to a neighbor."""

    sender: int
    receiver: int
    timestep: int
    info: InfoForm
    rule: str
    version: int = WIRE_VERSION

    @property
    def scalar_count(self) -> int:
        """Scalars on the wire: the vector plus the matrix upper triangle."""
        d = self.info.dim
        return d + d * (d + 1) // 2


@dataclass(frozen=True)
class FusionWeight:
    """A covariance-intersection weight and the cost that selected it."""

    omega: float
    cost: str
    value: float


@dataclass(frozen=True)
class ChannelFilterState:
    """One end's running estimate of the information shared over an edge.

    ``graph`` represents the common density over the edge's shared variables
    at ``time``; an empty graph means zero common information. Each robot owns
    its copy; they agree as long as every message is delivered.
    """

    edge: tuple[int, int]
    owner: int
    slots: tuple[VariableId, ...]
    statics: frozenset[VariableId]
    graph: FactorGraph
    time: int

    def current_variables(self) -> tuple[VariableId, ...]:
        return tuple(
            sorted(v if v in self.statics else v.at(self.time) for v in self.slots)
        )

    def common_info(self) -> InfoForm:
        """Common density as one information form; zero when nothing shared yet."""
        ordering = VariableOrdering(self.current_variables())
        if len(self.graph) == 0:
            return InfoForm.zero(ordering)
        joint = self.graph.joint_info()
        if joint.ordering != ordering:
            raise MalformedMessage(
                f"channel graph covers {list(joint.ordering)!r}, expected {list(ordering)!r}"
            )
        return joint


@dataclass(frozen=True)
class FusionDiagnostic:
    """Per-exchange record for studying rule behavior; never written to disk."""

    tick: int
    edge: tuple[int, int]
    sender: int
    receiver: int
    rule_used: str
    fused_min_eig: float
    channel_minus_intersection_trace: float | None


def prepare_message(
    belief: RobotBelief,
    allocation: TaskAllocation,
    receiver: int,
    rule: str,
) -> FusionMessage:
    """Marginal of the sender's belief over the edge's shared variables."""
    common = allocation.common(belief.robot_id, receiver)
    if not common:
        raise UnknownVariable(
            f"robots {belief.robot_id} and {receiver} share no states"
        )
    statics = belief.statics
    current = [v if v in statics else v.at(belief.time) for v in common]
    marginal = marginalize_info(belief.joint(), current)
    return FusionMessage(
        sender=belief.robot_id,
        receiver=receiver,
        timestep=belief.time,
        info=marginal,
        rule=rule,
    )


def cf_predict(state: ChannelFilterState, models: TransitionModel, to_time: int) -> ChannelFilterState:
    """Advance the channel density through the shared states' dynamics.

    Mirrors the local filter's predict-then-marginalize on the common
    marginal. Zero common information stays zero: with no factors there is
    nothing to propagate.
    """
    if to_time < state.time:
        raise MalformedMessage(
            f"channel at time {state.time} cannot move back to {to_time}"
        )
    while state.time < to_time:
        k = state.time
        if len(state.graph) == 0:
            state = replace(state, time=k + 1)
            continue
        joint = state.graph.joint_info()
        mean = np.linalg.solve(joint.lam, joint.zeta)
        graph = state.graph
        drop = []
        for slot in state.slots:
            if slot in state.statics:
                continue
            var_k = slot.at(k)
            s = joint.ordering.slice_of(var_k)
            model = models.transition(slot, k, mean[s])
            if model is None:
                raise MalformedMessage(f"shared block {slot!r} lacks a transition model")
            f, c, q = model
            graph = graph.add_factor(
                Provenance.TRANSITION, transition_payload(var_k, slot.at(k + 1), f, c, q)
            )
            drop.append(var_k)
        state = replace(state, graph=graph.eliminate(drop), time=k + 1)
    return state


def _channel_from_info(state: ChannelFilterState, info: InfoForm) -> ChannelFilterState:
    graph = FactorGraph().add_factor(Provenance.FUSION, info)
    return replace(state, graph=graph)


def _channel_absorb(state: ChannelFilterState, sent: InfoForm) -> ChannelFilterState:
    """Commit a sent marginal to the channel without ever shrinking it.

    A robot's marginal can carry less information than the channel predicts
    (local conservative marginalization discards cross-couplings), so simply
    replacing the channel with the sent message would under-claim the common
    data and later exchanges would re-absorb it. The commit therefore keeps
    the channel and adds only the positive part of the update; whenever the
    sent marginal dominates the channel this reduces to the plain replacement.
    """
    channel = state.common_info()
    if channel.ordering != sent.ordering:
        raise MalformedMessage(
            f"channel over {channel.ordering} cannot absorb marginal over {sent.ordering}"
        )
    diff = sent.lam - channel.lam
    diff = (diff + diff.T) / 2.0
    w, vecs = np.linalg.eigh(diff)
    gain = (vecs * np.maximum(w, 0.0)) @ vecs.T
    lam = channel.lam + gain
    mean = np.linalg.solve(sent.lam, sent.zeta)
    return _channel_from_info(state, InfoForm(sent.ordering, lam @ mean, lam))


def _validate_incoming(belief: RobotBelief, msg: FusionMessage) -> InfoForm:
    """Check the message lines up with the belief and return the own marginal."""
    if msg.timestep != belief.time:
        raise MalformedMessage(
            f"message at tick {msg.timestep} arrived at belief time {belief.time}"
        )
    have = set(belief.graph.variables)
    missing = [v for v in msg.info.ordering if v not in have]
    if missing:
        raise UnknownVariable(
            f"message mentions {missing!r}, not estimated by robot {belief.robot_id}"
        )
    return marginalize_info(belief.joint(), msg.info.ordering.variables)


def _apply_fused(belief: RobotBelief, own: InfoForm, fused: InfoForm) -> RobotBelief:
    """Absorb (fused - own) over the shared variables; conditionals unchanged."""
    delta = subtract_info(fused, own)
    return replace(belief, graph=belief.graph.add_factor(Provenance.FUSION, delta))


def _hscf_core(
    belief: RobotBelief, own: InfoForm, state: ChannelFilterState, msg: FusionMessage
) -> tuple[RobotBelief, ChannelFilterState, float]:
    channel = state.common_info()
    if channel.ordering != own.ordering:
        raise MalformedMessage(
            f"channel over {list(channel.ordering)!r} does not match "
            f"message over {list(own.ordering)!r}"
        )
    fused_lam = own.lam + msg.info.lam - channel.lam
    fused_zeta = own.zeta + msg.info.zeta - channel.zeta
    w = np.linalg.eigvalsh(0.5 * (fused_lam + fused_lam.T))
    min_eig = float(w[0])
    if min_eig < -PSD_TOL * (1.0 + float(np.abs(w).max())):
        raise NonPsdFusion(
            f"fused information over {list(own.ordering)!r} has eigenvalue {min_eig:.3e}"
        )
    fused = InfoForm(own.ordering, fused_zeta, fused_lam)
    return _apply_fused(belief, own, fused), _channel_from_info(state, fused), min_eig


def hscf_fuse(
    belief: RobotBelief, state: ChannelFilterState, msg: FusionMessage
) -> tuple[RobotBelief, ChannelFilterState, float]:
    """Channel-filter fusion of one received message.

    Returns the updated belief, the updated channel state (set to the fused
    marginal), and the minimum eigenvalue of the fused information matrix.
    Raises NonPsdFusion when the channel over-counts and the difference goes
    indefinite; the caller decides how to recover.
    """
    own = _validate_incoming(belief, msg)
    return _hscf_core(belief, own, state, msg)


def _combination_cost(lam: np.ndarray, cost: str) -> float:
    w = np.linalg.eigvalsh(lam)
    if w[0] <= 0.0:
        return math.inf
    if cost == "trace":
        return float(np.sum(1.0 / w))  # trace of the fused covariance
    if cost == "logdet":
        return float(-np.sum(np.log(w)))  # log-volume of the fused covariance
    raise SingularCombination(f"unknown cost {cost!r}")


def ci_weight(lam_a: np.ndarray, lam_b: np.ndarray, cost: str = "trace") -> FusionWeight:
    """Weight minimizing the chosen cost of inv(w*lam_a + (1-w)*lam_b) on [0, 1].

    Golden-section search to an interval of 1e-6, then snapped to the best of
    {0, 1/2, 1, interior}; ties prefer the symmetric weight. Raises
    SingularCombination when no weight yields an invertible combination.
    """
    lam_a = np.asarray(lam_a, dtype=float)
    lam_b = np.asarray(lam_b, dtype=float)

    def f(w: float) -> float:
        return _combination_cost(w * lam_a + (1.0 - w) * lam_b, cost)

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = 0.0, 1.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > 1.0e-6:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    interior = 0.5 * (a + b)

    candidates = [0.0, 0.5, 1.0, interior]
    values = [f(w) for w in candidates]
    best = min(values)
    if math.isinf(best):
        raise SingularCombination("no convex combination of the inputs is invertible")
    tol = 1.0e-12 * (1.0 + abs(best))
    feasible = [(w, v) for w, v in zip(candidates, values) if v <= best + tol]
    omega, value = min(feasible, key=lambda t: abs(t[0] - 0.5))
    return FusionWeight(omega=omega, cost=cost, value=value)


def ci_common_info(a: InfoForm, b: InfoForm, omega: float) -> InfoForm:
    """Implied common density (1-w)*a + w*b, so that a + b - common = w*a + (1-w)*b."""
    if a.ordering != b.ordering:
        raise MalformedMessage("intersection requires identical orderings")
    return InfoForm(
        a.ordering,
        (1.0 - omega) * a.zeta + omega * b.zeta,
        (1.0 - omega) * a.lam + omega * b.lam,
    )


def _hsci_core(
    belief: RobotBelief, own: InfoForm, msg: FusionMessage, cost: str
) -> tuple[RobotBelief, FusionWeight, InfoForm]:
    weight = ci_weight(own.lam, msg.info.lam, cost)
    common = ci_common_info(own, msg.info, weight.omega)
    fused = InfoForm(
        own.ordering,
        own.zeta + msg.info.zeta - common.zeta,
        own.lam + msg.info.lam - common.lam,
    )
    return _apply_fused(belief, own, fused), weight, fused


def hsci_fuse(
    belief: RobotBelief, msg: FusionMessage, cost: str = "trace"
) -> tuple[RobotBelief, FusionWeight]:
    """Covariance-intersection fusion of one received message; stateless."""
    own = _validate_incoming(belief, msg)
    updated, weight, _ = _hsci_core(belief, own, msg, cost)
    return updated, weight


@dataclass(frozen=True)
class ChannelSyncResult:
    belief_i: RobotBelief
    belief_j: RobotBelief
    cf_i: ChannelFilterState | None
    cf_j: ChannelFilterState | None
    msg_ij: FusionMessage
    msg_ji: FusionMessage
    diagnostics: tuple[FusionDiagnostic, ...]


def channel_sync(
    belief_i: RobotBelief,
    belief_j: RobotBelief,
    allocation: TaskAllocation,
    rule: str,
    delivered_ij: bool,
    delivered_ji: bool,
    cf_i: ChannelFilterState | None = None,
    cf_j: ChannelFilterState | None = None,
    models: TransitionModel | None = None,
    ci_cost: str = "trace",
) -> ChannelSyncResult:
    """One edge's simultaneous two-way exchange at the current tick.

    Both messages are prepared from the pre-fusion beliefs. Each delivered
    message triggers fusion at its receiver. Under the channel-filter rule a
    sender whose own incoming message was dropped still commits what it sent
    to its channel copy; a non-PSD channel fusion falls back to covariance
    intersection for that exchange.
    """
    i, j = belief_i.robot_id, belief_j.robot_id
    edge = (min(i, j), max(i, j))
    tick = belief_i.time
    if belief_j.time != tick:
        raise MalformedMessage(f"edge {edge}: beliefs at ticks {tick} vs {belief_j.time}")

    if rule == RULE_CHANNEL:
        if cf_i is None or cf_j is None or models is None:
            raise MalformedMessage("channel-filter rule needs channel states and models")
        cf_i = cf_predict(cf_i, models, tick)
        cf_j = cf_predict(cf_j, models, tick)

    msg_ij = prepare_message(belief_i, allocation, receiver=j, rule=rule)
    msg_ji = prepare_message(belief_j, allocation, receiver=i, rule=rule)

    diags: list[FusionDiagnostic] = []

    def receive(belief, cf, incoming, outgoing, delivered_in):
        """Apply one direction at its receiver; returns (belief, cf)."""
        if not delivered_in:
            if rule == RULE_CHANNEL:
                cf = _channel_absorb(cf, outgoing.info)
            return belief, cf
        own = _validate_incoming(belief, incoming)
        if rule == RULE_CHANNEL:
            gap = None
            try:
                channel = cf.common_info()
                w_ci = ci_weight(own.lam, incoming.info.lam, ci_cost)
                ci_common = ci_common_info(own, incoming.info, w_ci.omega)
                gap = float(np.trace(channel.lam) - np.trace(ci_common.lam))
            except SingularCombination:
                gap = None
            try:
                belief, cf, min_eig = _hscf_core(belief, own, cf, incoming)
                diags.append(FusionDiagnostic(
                    tick, edge, incoming.sender, incoming.receiver,
                    RULE_CHANNEL, min_eig, gap))
            except NonPsdFusion:
                belief, _, fused_ci = _hsci_core(belief, own, incoming, ci_cost)
                cf = _channel_from_info(cf, fused_ci)
                diags.append(FusionDiagnostic(
                    tick, edge, incoming.sender, incoming.receiver,
                    "hs-ci-fallback", float(np.linalg.eigvalsh(fused_ci.lam)[0]), gap))
            return belief, cf
        belief, _, fused = _hsci_core(belief, own, incoming, ci_cost)
        diags.append(FusionDiagnostic(
            tick, edge, incoming.sender, incoming.receiver,
            RULE_INTERSECTION, float(np.linalg.eigvalsh(fused.lam)[0]), None))
        return belief, None

    belief_i, cf_i = receive(belief_i, cf_i, msg_ji, msg_ij, delivered_ji)
    belief_j, cf_j = receive(belief_j, cf_j, msg_ij, msg_ji, delivered_ij)

    return ChannelSyncResult(
        belief_i=belief_i,
        belief_j=belief_j,
        cf_i=cf_i,
        cf_j=cf_j,
        msg_ij=msg_ij,
        msg_ji=msg_ji,
        diagnostics=tuple(diags),
    )


def initial_channel_state(
    edge: tuple[int, int],
    owner: int,
    common_slots: Sequence[VariableId],
    prior: InfoForm | None,
) -> ChannelFilterState:
    """Channel seeded with the shared prior over the edge's common variables."""
    slots = tuple(sorted(common_slots))
    graph = FactorGraph()
    if prior is not None:
        graph = graph.add_factor(Provenance.PRIOR, prior)
    return ChannelFilterState(
        edge=(min(edge), max(edge)),
        owner=owner,
        slots=slots,
        statics=static_slots_of(slots),
        graph=graph,
        time=0,
    )
