"""Variable identities and canonical orderings for block-structured Gaussians.

Every random variable in the system is a small vector block (a robot pose, a
target state, a sensor bias) identified by kind, owning platform, and discrete
time index. Orderings are always canonical: blocks sorted by
(kind, owner, time). Two containers built over the same variable set therefore
agree on layout without negotiation, which is what makes entrywise addition of
information vectors/matrices across robots meaningful.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Iterable, Iterator

import numpy as np

from .errors import DimensionMismatch, UnknownVariable


class VariableKind(enum.IntEnum):
    """Block type; the integer value fixes canonical sort precedence."""

    ROBOT_POSE = 0
    TARGET_STATE = 1
    BIAS_STATE = 2

    @property
    def wire_name(self) -> str:
        return _WIRE_NAMES[self]

    @staticmethod
    def from_wire(name: str) -> "VariableKind":
        try:
            return _WIRE_KINDS[name]
        except KeyError:
            raise UnknownVariable(f"unknown variable kind {name!r}") from None


_WIRE_NAMES = {
    VariableKind.ROBOT_POSE: "robot_pose",
    VariableKind.TARGET_STATE: "target_state",
    VariableKind.BIAS_STATE: "bias_state",
}
_WIRE_KINDS = {v: k for k, v in _WIRE_NAMES.items()}


@dataclass(frozen=True, order=True)
class VariableId:
    """One vector-valued random variable at one time index.

    Sort order is (kind, owner, time); ``dim`` rides along and never differs
    between two references to the same variable.
    """

    kind: VariableKind
    owner: int
    time: int
    dim: int

    def at(self, time: int) -> "VariableId":
        """The same state slot re-stamped at another time index."""
        return replace(self, time=time)

    @property
    def slot(self) -> tuple[VariableKind, int]:
        """Time-free identity of the underlying state."""
        return (self.kind, self.owner)

    def __repr__(self) -> str:  # compact; shows up a lot in test output
        return f"{self.kind.wire_name}[{self.owner}]@{self.time}"


class VariableOrdering:
    """An immutable canonically-sorted tuple of variables with index lookup.

    Provides the block offsets used to scatter factor payloads into joint
    arrays. Construction sorts, so callers never need to pre-sort.
    """

    __slots__ = ("_vars", "_offsets", "_dim")

    def __init__(self, variables: Iterable[VariableId]):
        vs = tuple(sorted(variables))
        for a, b in zip(vs, vs[1:]):
            if a.slot == b.slot and a.time == b.time:
                raise DimensionMismatch(f"duplicate variable {a!r} in ordering")
        offsets = {}
        pos = 0
        for v in vs:
            offsets[v] = pos
            pos += v.dim
        self._vars = vs
        self._offsets = offsets
        self._dim = pos

    @property
    def variables(self) -> tuple[VariableId, ...]:
        return self._vars

    @property
    def dim(self) -> int:
        return self._dim

    def __len__(self) -> int:
        return len(self._vars)

    def __iter__(self) -> Iterator[VariableId]:
        return iter(self._vars)

    def __contains__(self, v: VariableId) -> bool:
        return v in self._offsets

    def __eq__(self, other) -> bool:
        return isinstance(other, VariableOrdering) and self._vars == other._vars

    def __hash__(self) -> int:
        return hash(self._vars)

    def __repr__(self) -> str:
        return f"VariableOrdering({list(self._vars)!r})"

    def offset(self, v: VariableId) -> int:
        try:
            return self._offsets[v]
        except KeyError:
            raise UnknownVariable(f"{v!r} not in ordering") from None

    def slice_of(self, v: VariableId) -> slice:
        off = self.offset(v)
        return slice(off, off + v.dim)

    def indices_of(self, variables: Iterable[VariableId]) -> np.ndarray:
        """Flat scalar indices of the given variables, in their canonical order.

        Used to embed a sub-ordering's vector/matrix into this ordering via
        ``np.ix_``. Raises UnknownVariable for members not present here.
        """
        idx = []
        for v in sorted(variables):
            off = self.offset(v)
            idx.extend(range(off, off + v.dim))
        return np.asarray(idx, dtype=np.intp)

    def union(self, other: "VariableOrdering") -> "VariableOrdering":
        return VariableOrdering(set(self._vars) | set(other._vars))

    def restrict(self, keep: Iterable[VariableId]) -> "VariableOrdering":
        keep = set(keep)
        missing = keep - set(self._vars)
        if missing:
            raise UnknownVariable(f"variables {sorted(missing)!r} not in ordering")
        return VariableOrdering(keep)
