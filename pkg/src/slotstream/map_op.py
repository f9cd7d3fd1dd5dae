"""Stateless routing operator with barrier-coordinated table switches.

The operator forwards each record to the owner of its slot.  While a
migration is in flight it buffers exactly the records that (a) hash to a
migrating slot and (b) arrive on an input channel that has already
passed the migration's control message; everything else flows through
untouched.  When copies of a control timestamp have arrived on every
input channel (the implicit barrier) it broadcasts the control message
downstream, switches the routing table, and then flushes the buffer to
the new owners -- broadcast first, so FIFO guarantees the receiving
reducer sees the migration control before any flushed record.
"""

from __future__ import annotations

import threading

from slotstream import trace as tr
from slotstream.channels import Channel, Shutdown
from slotstream.messages import (
    ControlMessage,
    DataMessage,
    MigrationInstruction,
    ProtocolError,
)
from slotstream.routing import HashRouter, RoutingTable
from slotstream.trace import Tracer


class MapOperator:
    def __init__(
        self,
        op_id: str,
        num_inputs: int,
        router: HashRouter,
        table: RoutingTable,
        outputs: dict[str, Channel],
        tracer: Tracer | None = None,
        stop: threading.Event | None = None,
    ) -> None:
        if num_inputs < 1:
            raise ValueError("map operator needs at least one input channel")
        self.op_id = op_id
        self.num_inputs = num_inputs
        self.router = router
        self.table = table
        self.outputs = outputs
        self.tracer = tracer
        self.stop = stop
        self.finished = False

        self._marker: dict[int, int] = {}
        self._channel_passed: dict[int, set[int]] = {}
        self._control_msg: dict[int, ControlMessage] = {}
        self._inflight: dict[int, MigrationInstruction] = {}
        self._migrated_slots: dict[int, set[str]] = {}
        # Buffered records keep arrival order; entries remember slot and
        # originating input channel.
        self._buffer: list[tuple[DataMessage, str, int]] = []
        self._last_control = [-1] * num_inputs
        self._last_seq = [-1] * num_inputs
        self._shutdown_seen: set[int] = set()

    def _trace(self, kind: str, channel: str, msg) -> None:
        if self.tracer is not None:
            self.tracer.record(self.op_id, kind, channel, msg)

    def _send(self, reducer_id: str, msg) -> None:
        channel = self.outputs[reducer_id]
        self._trace(tr.SEND, channel.name, msg)
        channel.put(msg, stop=self.stop)

    def handle(self, msg, channel: int) -> None:
        if isinstance(msg, DataMessage):
            self._trace(tr.RECV, f"in{channel}", msg)
            self._handle_data(msg, channel)
        elif isinstance(msg, ControlMessage):
            self._trace(tr.RECV, f"in{channel}", msg)
            self._handle_control(msg, channel)
        elif isinstance(msg, Shutdown):
            self._handle_shutdown(channel)
        else:
            raise ProtocolError(f"{self.op_id}: unexpected message {type(msg).__name__}")

    def _handle_data(self, msg: DataMessage, channel: int) -> None:
        if msg.seq <= self._last_seq[channel]:
            raise ProtocolError(
                f"{self.op_id}: seq regression on input {channel}: "
                f"{msg.seq} after {self._last_seq[channel]}"
            )
        self._last_seq[channel] = msg.seq
        slot = self.router.route(msg.key)
        for t, slots in self._migrated_slots.items():
            if slot in slots and channel in self._channel_passed[t]:
                self._trace(tr.BUFFER, f"in{channel}", msg)
                self._buffer.append((msg, slot, channel))
                return
        self._send(self.table.owner_of(slot), msg)

    def _handle_control(self, msg: ControlMessage, channel: int) -> None:
        t = msg.event_time
        if t <= self._last_control[channel]:
            raise ProtocolError(
                f"{self.op_id}: control timestamp regression on input {channel}: "
                f"{t} after {self._last_control[channel]}"
            )
        self._last_control[channel] = t

        if t not in self._marker:
            self._marker[t] = 1
            self._channel_passed[t] = {channel}
            self._control_msg[t] = msg
            if msg.migration is not None:
                self._inflight[t] = msg.migration
                self._migrated_slots[t] = set(msg.migration.slot_ids)
        else:
            self._marker[t] += 1
            self._channel_passed[t].add(channel)

        if self._marker[t] == self.num_inputs:
            self._complete_barrier(t)

    def _complete_barrier(self, t: int) -> None:
        original = self._control_msg.pop(t)
        for reducer_id in self.outputs:
            self._send(reducer_id, original)

        instruction = self._inflight.pop(t, None)
        if instruction is not None:
            self.table = self.table.apply_migration(instruction)
            moved = self._migrated_slots.pop(t)
            kept: list[tuple[DataMessage, str, int]] = []
            for msg, slot, channel in self._buffer:
                if slot in moved:
                    self._trace(tr.FLUSH, f"in{channel}", msg)
                    self._send(self.table.owner_of(slot), msg)
                else:
                    kept.append((msg, slot, channel))
            self._buffer = kept

        del self._marker[t]
        del self._channel_passed[t]

    def _handle_shutdown(self, channel: int) -> None:
        if channel in self._shutdown_seen:
            raise ProtocolError(f"{self.op_id}: duplicate shutdown on input {channel}")
        self._shutdown_seen.add(channel)
        if len(self._shutdown_seen) == self.num_inputs:
            if self._inflight or self._buffer:
                raise ProtocolError(
                    f"{self.op_id}: shutdown with in-flight migration state"
                )
            for reducer_id in self.outputs:
                self.outputs[reducer_id].put(Shutdown(), stop=self.stop)
            self.finished = True
