"""Message transport between robots.

Topology says who talks to whom, the dropout model decides which messages
arrive, and the wire codec turns marginals into bytes. One exchange round runs
per edge per tick; both directions of an edge are computed from pre-fusion
beliefs and applied simultaneously, so edge order cannot matter in the exact
cases and the delivery log comes out in a canonical order regardless.

Delivery draws come from a dedicated stream per edge direction, so changing
the delivery probability, or adding edges, never perturbs truth or
measurement noise sequences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, MalformedMessage, UnknownVariable
from .fusion import (
    RULE_CHANNEL,
    RULE_INTERSECTION,
    ChannelFilterState,
    FusionDiagnostic,
    FusionMessage,
    WIRE_VERSION,
    channel_sync,
)
from .gaussian import InfoForm
from .local_filter import RobotBelief, TaskAllocation, TransitionModel
from .rng import DOMAIN_DROPOUT, stream
from .variables import VariableId, VariableKind, VariableOrdering


def _canonical_edges(edges: Iterable[Sequence[int]]) -> tuple[tuple[int, int], ...]:
    out = []
    for e in edges:
        i, j = int(e[0]), int(e[1])
        if i == j:
            raise ConfigError(f"topology.edges: self-loop on robot {i}")
        out.append((min(i, j), max(i, j)))
    if len(set(out)) != len(out):
        raise ConfigError("topology.edges: duplicate edge")
    return tuple(sorted(out))


@dataclass(frozen=True)
class Topology:
    """Undirected communication graph over robot ids; must be connected."""

    robots: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]

    def __init__(self, robots: Iterable[int], edges: Iterable[Sequence[int]]):
        object.__setattr__(self, "robots", tuple(sorted(set(int(r) for r in robots))))
        object.__setattr__(self, "edges", _canonical_edges(edges))
        ids = set(self.robots)
        for i, j in self.edges:
            if i not in ids or j not in ids:
                raise ConfigError(f"topology.edges: edge ({i},{j}) references unknown robot")
        if len(self.robots) > 1 and not self._connected():
            raise ConfigError("topology: communication graph is not connected")

    def _connected(self) -> bool:
        adj: dict[int, set[int]] = {r: set() for r in self.robots}
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        seen = {self.robots[0]}
        frontier = [self.robots[0]]
        while frontier:
            nxt = frontier.pop()
            for nb in adj[nxt]:
                if nb not in seen:
                    seen.add(nb)
                    frontier.append(nb)
        return len(seen) == len(self.robots)

    @property
    def is_tree(self) -> bool:
        return len(self.edges) == len(self.robots) - 1

    def validate_for_rule(self, rule: str) -> None:
        """Channel filters need a unique path between any two robots."""
        if rule == RULE_CHANNEL and not self.is_tree:
            raise ConfigError(
                "topology: channel-filter fusion requires an acyclic (tree) "
                f"communication graph, got {len(self.edges)} edges over "
                f"{len(self.robots)} robots"
            )
        if rule not in (RULE_CHANNEL, RULE_INTERSECTION):
            raise ConfigError(f"fusion rule {rule!r} unknown")


class DropoutModel:
    """Independent Bernoulli delivery per message.

    Each edge direction owns its generator, seeded from (root, run, edge
    endpoints, direction), and one uniform is consumed per message in
    canonical (tick, edge, direction) order. Draws happen even at p=0 or p=1
    so that sweeping the delivery probability replays identical randomness
    everywhere else.
    """

    def __init__(self, p: float, topology: Topology, root_seed: int, run_idx: int):
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"dropout: delivery probability {p} outside [0, 1]")
        self.p = float(p)
        self._gens = {}
        for (i, j) in topology.edges:
            self._gens[(i, j, 0)] = stream(root_seed, run_idx, DOMAIN_DROPOUT, i, j, 0)
            self._gens[(i, j, 1)] = stream(root_seed, run_idx, DOMAIN_DROPOUT, i, j, 1)

    def deliver(self, edge: tuple[int, int], direction: int) -> bool:
        """Whether the message in the given direction (0: i->j, 1: j->i) arrives."""
        u = float(self._gens[(edge[0], edge[1], direction)].random())
        return u < self.p


def serialize_message(msg: FusionMessage) -> bytes:
    """Encode a fusion message as UTF-8 JSON.

    The information matrix travels as its upper triangle in row-major order,
    diagonal included; floats use the shortest decimal that round-trips, so
    decoding gives back the exact same doubles.
    """
    info = msg.info
    d = info.dim
    upper = [float(info.lam[r, c]) for r in range(d) for c in range(r, d)]
    obj = {
        "version": msg.version,
        "sender": msg.sender,
        "receiver": msg.receiver,
        "timestep": msg.timestep,
        "variables": [[v.kind.wire_name, v.owner, v.time] for v in info.ordering],
        "zeta": [float(x) for x in info.zeta],
        "lambda_upper": upper,
        "rule": msg.rule,
    }
    return json.dumps(obj, separators=(",", ":")).encode("utf-8")


def _require(obj: dict, key: str):
    if key not in obj:
        raise MalformedMessage(f"wire message missing field {key!r}")
    return obj[key]


def deserialize_message(
    data: bytes, dims: Mapping[tuple[VariableKind, int], int] | None = None
) -> FusionMessage:
    """Decode a wire message back into a fusion message.

    Block sizes are not on the wire. When ``dims`` maps (kind, owner) to a
    block dimension it is used (and checked against the payload length);
    otherwise the total dimension from the zeta length is split evenly over
    the listed variables, which covers every shipped scenario since an edge's
    shared states are same-sized target blocks.
    """
    try:
        obj = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedMessage(f"undecodable wire message: {exc}") from None
    if not isinstance(obj, dict):
        raise MalformedMessage("wire message is not a JSON object")

    version = _require(obj, "version")
    if version != WIRE_VERSION:
        raise MalformedMessage(f"wire version {version!r}, expected {WIRE_VERSION}")
    triples = _require(obj, "variables")
    zeta = _require(obj, "zeta")
    upper = _require(obj, "lambda_upper")
    rule = _require(obj, "rule")
    if rule not in (RULE_CHANNEL, RULE_INTERSECTION):
        raise MalformedMessage(f"wire message rule {rule!r} unknown")
    if not triples or not isinstance(triples, list):
        raise MalformedMessage("wire message field 'variables' must be a nonempty array")
    if not isinstance(zeta, list) or not all(isinstance(x, (int, float)) for x in zeta):
        raise MalformedMessage("wire message field 'zeta' must be an array of numbers")
    if not isinstance(upper, list) or not all(isinstance(x, (int, float)) for x in upper):
        raise MalformedMessage("wire message field 'lambda_upper' must be an array of numbers")

    d = len(zeta)
    if len(upper) != d * (d + 1) // 2:
        raise MalformedMessage(
            f"lambda_upper holds {len(upper)} scalars, expected "
            f"{d * (d + 1) // 2} for dimension {d}"
        )

    variables = []
    for t in triples:
        if not (isinstance(t, list) and len(t) == 3):
            raise MalformedMessage(f"variable triple {t!r} is not [kind, owner, time]")
        try:
            kind = VariableKind.from_wire(t[0])
        except UnknownVariable as exc:
            raise MalformedMessage(f"wire message field 'variables': {exc}") from None
        owner, time = int(t[1]), int(t[2])
        if dims is not None:
            if (kind, owner) not in dims:
                raise MalformedMessage(f"no known dimension for {t[0]}[{owner}]")
            block = dims[(kind, owner)]
        else:
            if d % len(triples) != 0:
                raise MalformedMessage(
                    f"cannot split dimension {d} evenly over {len(triples)} variables"
                )
            block = d // len(triples)
        variables.append(VariableId(kind, owner, time, block))
    if sum(v.dim for v in variables) != d:
        raise MalformedMessage(
            f"variable dimensions sum to {sum(v.dim for v in variables)}, payload has {d}"
        )

    ordering = VariableOrdering(variables)
    if tuple(ordering.variables) != tuple(variables):
        raise MalformedMessage("wire message variables are not in canonical order")

    lam = np.zeros((d, d))
    pos = 0
    for r in range(d):
        for c in range(r, d):
            lam[r, c] = upper[pos]
            lam[c, r] = upper[pos]
            pos += 1
    info = InfoForm(ordering, np.asarray(zeta, dtype=float), lam)
    return FusionMessage(
        sender=int(_require(obj, "sender")),
        receiver=int(_require(obj, "receiver")),
        timestep=int(_require(obj, "timestep")),
        info=info,
        rule=rule,
        version=int(version),
    )


@dataclass(frozen=True)
class DeliveryRecord:
    """One message's fate: sent every tick per direction, delivered or not."""

    tick: int
    edge: tuple[int, int]
    sender: int
    receiver: int
    delivered: bool
    scalars: int
    bytes: int


@dataclass
class ExchangeResult:
    beliefs: dict[int, RobotBelief]
    channels: dict[tuple[tuple[int, int], int], ChannelFilterState]
    records: list[DeliveryRecord] = field(default_factory=list)
    diagnostics: list[FusionDiagnostic] = field(default_factory=list)


def exchange_tick(
    beliefs: Mapping[int, RobotBelief],
    channels: Mapping[tuple[tuple[int, int], int], ChannelFilterState],
    allocation: TaskAllocation,
    topology: Topology,
    dropout: DropoutModel,
    rule: str,
    models: TransitionModel | None = None,
    ci_cost: str = "trace",
) -> ExchangeResult:
    """Run one communication round over every edge.

    Edges run one at a time in canonical (sorted) order, each exchange seeing
    the beliefs as the previous edges left them; the topology canonicalizes
    its edge list at construction, so the order a caller wrote the edges in
    can never change the outcome. Processing edges one by one also keeps every
    fused-marginal safety check meaningful: a correction factor lands on a
    robot's graph before the next edge reads that robot's marginal, so each
    exchange validates (at both ends, identically) against the state it will
    actually modify. Edges consume their two delivery draws (the low-to-high
    id direction first) in canonical edge order. The result carries updated
    beliefs and channel states plus a delivery record per direction, with
    payload sizes measured on the actual encoded bytes.
    """
    out = ExchangeResult(beliefs=dict(beliefs), channels=dict(channels))
    for edge in topology.edges:
        i, j = edge
        delivered_ij = dropout.deliver(edge, 0)
        delivered_ji = dropout.deliver(edge, 1)
        res = channel_sync(
            out.beliefs[i],
            out.beliefs[j],
            allocation,
            rule,
            delivered_ij,
            delivered_ji,
            cf_i=out.channels.get((edge, i)),
            cf_j=out.channels.get((edge, j)),
            models=models,
            ci_cost=ci_cost,
        )
        out.beliefs[i] = res.belief_i
        out.beliefs[j] = res.belief_j
        if res.cf_i is not None:
            out.channels[(edge, i)] = res.cf_i
        if res.cf_j is not None:
            out.channels[(edge, j)] = res.cf_j
        tick = res.belief_i.time
        for msg, delivered in ((res.msg_ij, delivered_ij), (res.msg_ji, delivered_ji)):
            out.records.append(
                DeliveryRecord(
                    tick=tick,
                    edge=edge,
                    sender=msg.sender,
                    receiver=msg.receiver,
                    delivered=delivered,
                    scalars=msg.scalar_count,
                    bytes=len(serialize_message(msg)),
                )
            )
        out.diagnostics.extend(res.diagnostics)
    return out


@dataclass(frozen=True)
class CommunicationCost:
    """Scalar and byte totals per sender, against the homogeneous reference.

    The reference is what each message would cost if robots exchanged a full
    joint over the global state: D + D(D+1)/2 scalars for global dimension D.
    Sends are counted whether or not they were delivered; dropout does not
    change what a robot transmitted.
    """

    scalars_by_robot: dict[int, int]
    bytes_by_robot: dict[int, int]
    messages: int
    scalars_total: int
    max_message_scalars: int
    homogeneous_scalars_per_message: int

    @property
    def homogeneous_scalars_total(self) -> int:
        return self.messages * self.homogeneous_scalars_per_message

    @property
    def reduction(self) -> float:
        """Fraction of homogeneous traffic avoided; 0.0 for an empty log."""
        if self.messages == 0:
            return 0.0
        return 1.0 - self.scalars_total / self.homogeneous_scalars_total

    @property
    def max_message_reduction(self) -> float:
        """Reduction for the largest single message against the reference."""
        if self.messages == 0:
            return 0.0
        return 1.0 - self.max_message_scalars / self.homogeneous_scalars_per_message


def communication_cost(records: Iterable[DeliveryRecord], global_dim: int) -> CommunicationCost:
    """Aggregate a delivery log into per-robot and total traffic."""
    scalars: dict[int, int] = {}
    nbytes: dict[int, int] = {}
    total = 0
    count = 0
    largest = 0
    for rec in records:
        scalars[rec.sender] = scalars.get(rec.sender, 0) + rec.scalars
        nbytes[rec.sender] = nbytes.get(rec.sender, 0) + rec.bytes
        total += rec.scalars
        largest = max(largest, rec.scalars)
        count += 1
    return CommunicationCost(
        scalars_by_robot=scalars,
        bytes_by_robot=nbytes,
        messages=count,
        scalars_total=total,
        max_message_scalars=largest,
        homogeneous_scalars_per_message=global_dim + global_dim * (global_dim + 1) // 2,
    )
