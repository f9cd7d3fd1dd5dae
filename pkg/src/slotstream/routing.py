"""Slot-granular key routing.

Keys hash onto a fixed list of slots; slots map to owning stateful
operators through a routing table that migrations edit.  The hash and
the slot list never change after graph build, so every map instance
routes identically; only slot ownership moves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from slotstream import kernels
from slotstream.messages import MigrationInstruction, ProtocolError


def slot_name(reducer_index: int, slot_index: int) -> str:
    return f"r_{reducer_index}_{slot_index}"


@dataclass(frozen=True)
class HashRouter:
    """Deterministic key -> slot mapping shared by every map instance."""

    slot_ids: tuple[str, ...]
    seed: int = kernels.FNV64_OFFSET

    def __post_init__(self) -> None:
        if not self.slot_ids:
            raise ValueError("router needs at least one slot")

    @property
    def num_slots(self) -> int:
        return len(self.slot_ids)

    def route(self, key: str) -> str:
        h = kernels.fnv1a64(key.encode("utf-8"), self.seed)
        return self.slot_ids[h % len(self.slot_ids)]


@dataclass(frozen=True)
class RoutingTable:
    """Total map from slot id to owning stateful operator."""

    owner: dict[str, str] = field(default_factory=dict)
    version: int = 0

    def owner_of(self, slot_id: str) -> str:
        try:
            return self.owner[slot_id]
        except KeyError:
            raise ProtocolError(f"unknown slot id: {slot_id}") from None

    def slots_of(self, operator_id: str) -> list[str]:
        return sorted(s for s, o in self.owner.items() if o == operator_id)

    def apply_migration(self, instruction: MigrationInstruction) -> RoutingTable:
        """Return a new table with the instruction's slots reassigned.

        Raises if any listed slot is not currently owned by the sender,
        which would mean the scheduler and the operators disagree about
        ownership.
        """
        for slot_id in instruction.slot_ids:
            current = self.owner_of(slot_id)
            if current != instruction.sender:
                raise ProtocolError(
                    f"slot {slot_id} owned by {current}, "
                    f"not migration sender {instruction.sender}"
                )
        new_owner = dict(self.owner)
        for slot_id in instruction.slot_ids:
            new_owner[slot_id] = instruction.receiver
        return RoutingTable(owner=new_owner, version=self.version + 1)


def initial_assignment(
    reducer_ids: list[str], slots_per_reducer: int
) -> tuple[HashRouter, RoutingTable]:
    """Build the slot list and its initial ownership.

    Slot ``r_i_j`` starts out owned by ``reducer_ids[i]``.
    """
    if not reducer_ids:
        raise ValueError("need at least one reducer")
    if len(set(reducer_ids)) != len(reducer_ids):
        raise ValueError("reducer ids must be distinct")
    if slots_per_reducer < 1:
        raise ValueError("slots_per_reducer must be positive")
    slot_ids: list[str] = []
    owner: dict[str, str] = {}
    for i, reducer in enumerate(reducer_ids):
        for j in range(slots_per_reducer):
            sid = slot_name(i, j)
            slot_ids.append(sid)
            owner[sid] = reducer
    return HashRouter(slot_ids=tuple(slot_ids)), RoutingTable(owner=owner)


def apply_migration(
    table: RoutingTable, instruction: MigrationInstruction
) -> RoutingTable:
    return table.apply_migration(instruction)
