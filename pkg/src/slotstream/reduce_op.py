"""Stateful keyed-sum operator with barrier-coordinated slot transfer.

Each reducer owns a set of slots, each holding a key -> running-sum
table.  At a migration barrier the sending reducer serializes the listed
slots onto a side channel and drops them; the receiving reducer buffers
any record for a migrating slot from the moment it first sees the
migration control until the state arrives, then installs the state and
replays the buffer in arrival order.  Processing of unaffected slots
never pauses.

Records are attributed to metric intervals by channel epoch: a record
counts toward the interval of the next control message behind it on its
own input channel, which makes interval contents a property of the
stream, not of scheduling.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Callable

from slotstream import trace as tr
from slotstream.channels import Channel, Done, Shutdown
from slotstream.messages import (
    ControlMessage,
    DataMessage,
    MetricsReport,
    ProtocolError,
    StateTransfer,
)
from slotstream.routing import HashRouter


@dataclass
class _Incoming:
    slot_ids: set[str]
    buffer: list[tuple[DataMessage, int]] = field(default_factory=list)
    state_arrived: bool = False


class ReduceOperator:
    def __init__(
        self,
        op_id: str,
        num_data_inputs: int,
        router: HashRouter,
        slots: dict[str, dict[str, int]],
        scheduler_out: Channel,
        side_out: dict[str, Channel],
        tracer: tr.Tracer | None = None,
        stop: threading.Event | None = None,
        sample_sink: Callable[[object], None] | None = None,
        pacer=None,
    ) -> None:
        if num_data_inputs < 1:
            raise ValueError("reduce operator needs at least one data input")
        self.op_id = op_id
        self.num_data_inputs = num_data_inputs
        self.router = router
        self.slots = slots
        self.scheduler_out = scheduler_out
        self.side_out = side_out
        self.tracer = tracer
        self.stop = stop
        self.sample_sink = sample_sink
        self.pacer = pacer
        self.finished = False

        self.processed_total = 0
        self._marker: dict[int, int] = {}
        self._control_msg: dict[int, ControlMessage] = {}
        self._incoming: dict[int, _Incoming] = {}
        self._buckets: dict[int, dict[str, int]] = {}
        self._channel_epoch = [-1] * num_data_inputs
        self._last_control = [-1] * num_data_inputs
        self._last_completed = -1
        self._shutdown_seen: set[int] = set()
        self._kilo_mark: float | None = None

    def _trace(self, kind: str, channel: str, msg) -> None:
        if self.tracer is not None:
            self.tracer.record(self.op_id, kind, channel, msg)

    # ------------------------------------------------------------------
    # message entry points

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

    def handle_state(self, transfer: StateTransfer, channel_name: str) -> None:
        self._trace(tr.RECV, channel_name, transfer)
        if transfer.receiver != self.op_id:
            raise ProtocolError(
                f"{self.op_id}: state transfer addressed to {transfer.receiver}"
            )
        t = transfer.event_time
        incoming = self._incoming.get(t)
        if incoming is None:
            # State can overtake the control message; install immediately
            # and skip arming when the control eventually arrives.
            incoming = _Incoming(slot_ids=set(transfer.slots), state_arrived=False)
            self._incoming[t] = incoming
        if incoming.state_arrived:
            raise ProtocolError(
                f"{self.op_id}: duplicate state transfer for barrier {t}"
            )
        for slot_id, table in transfer.slots.items():
            if slot_id in self.slots:
                raise ProtocolError(
                    f"{self.op_id}: state transfer for already-owned slot {slot_id}"
                )
            self.slots[slot_id] = dict(table)
        self._trace(tr.INSTALL, channel_name, transfer)
        incoming.state_arrived = True
        for msg, bucket in incoming.buffer:
            self._trace(tr.REPLAY, channel_name, msg)
            self._apply_record(msg, max(bucket, self._last_completed + 1))
        incoming.buffer.clear()
        if t <= self._last_completed:
            del self._incoming[t]
        self._maybe_finish()

    # ------------------------------------------------------------------
    # data path

    def _handle_data(self, msg: DataMessage, channel: int) -> None:
        slot = self.router.route(msg.key)
        bucket = self._channel_epoch[channel] + 1
        for incoming in self._incoming.values():
            if not incoming.state_arrived and slot in incoming.slot_ids:
                self._trace(tr.BUFFER, f"in{channel}", msg)
                incoming.buffer.append((msg, bucket))
                return
        if slot not in self.slots:
            raise ProtocolError(
                f"{self.op_id}: record for slot {slot} neither owned nor armed"
            )
        self._apply_record(msg, bucket)

    def _apply_record(self, msg: DataMessage, bucket: int) -> None:
        if self.pacer is not None:
            self.pacer.acquire(stop=self.stop)
        slot = self.router.route(msg.key)
        table = self.slots[slot]
        table[msg.key] = table.get(msg.key, 0) + msg.value
        counts = self._buckets.setdefault(bucket, {})
        counts[slot] = counts.get(slot, 0) + 1
        self.processed_total += 1
        self._sample(msg)

    def _sample(self, msg: DataMessage) -> None:
        if self.sample_sink is None:
            return
        now = time.time()
        if self.processed_total % 100 == 0:
            latency_ms = (time.time_ns() - msg.ingest_clock) / 1e6
            self.sample_sink(("lat", msg.seq, self.op_id, latency_ms))
        if self.processed_total % 1000 == 0:
            if self._kilo_mark is not None and now > self._kilo_mark:
                rate = 1000.0 / (now - self._kilo_mark)
                self.sample_sink(("thr", self.op_id, now, rate))
            self._kilo_mark = now

    # ------------------------------------------------------------------
    # control path

    def _handle_control(self, msg: ControlMessage, channel: int) -> None:
        t = msg.event_time
        if t <= self._last_control[channel]:
            raise ProtocolError(
                f"{self.op_id}: control timestamp regression on input {channel}: "
                f"{t} after {self._last_control[channel]}"
            )
        self._last_control[channel] = t
        self._channel_epoch[channel] = t

        if t not in self._marker:
            self._marker[t] = 1
            self._control_msg[t] = msg
            m = msg.migration
            if m is not None and m.receiver == self.op_id and t not in self._incoming:
                self._incoming[t] = _Incoming(slot_ids=set(m.slot_ids))
        else:
            self._marker[t] += 1

        if self._marker[t] == self.num_data_inputs:
            self._complete_barrier(t)

    def _complete_barrier(self, t: int) -> None:
        original = self._control_msg.pop(t)
        m = original.migration
        if m is not None and m.sender == self.op_id:
            self._send_state(t, m)

        counts = self._buckets.pop(t, {})
        report = MetricsReport(
            worker=self.op_id,
            event_time=t,
            total_count=sum(counts.values()),
            slot_count=counts,
        )
        self._trace(tr.SEND, self.scheduler_out.name, original)
        self.scheduler_out.put(original, stop=self.stop)
        self._trace(tr.SEND, self.scheduler_out.name, report)
        self.scheduler_out.put(report, stop=self.stop)

        self._last_completed = t
        del self._marker[t]
        incoming = self._incoming.get(t)
        if incoming is not None and incoming.state_arrived:
            del self._incoming[t]

    def _send_state(self, t: int, m) -> None:
        payload: dict[str, dict[str, int]] = {}
        for slot_id in m.slot_ids:
            if slot_id not in self.slots:
                raise ProtocolError(
                    f"{self.op_id}: told to migrate slot {slot_id} it does not own"
                )
            payload[slot_id] = self.slots.pop(slot_id)
        transfer = StateTransfer(
            sender=self.op_id, receiver=m.receiver, event_time=t, slots=payload
        )
        channel = self.side_out[m.receiver]
        self._trace(tr.SEND, channel.name, transfer)
        channel.put(transfer, stop=self.stop)

    # ------------------------------------------------------------------
    # drain

    def _handle_shutdown(self, channel: int) -> None:
        if channel in self._shutdown_seen:
            raise ProtocolError(f"{self.op_id}: duplicate shutdown on input {channel}")
        self._shutdown_seen.add(channel)
        self._maybe_finish()

    def _maybe_finish(self) -> None:
        if self.finished:
            return
        if len(self._shutdown_seen) < self.num_data_inputs:
            return
        if any(not inc.state_arrived for inc in self._incoming.values()):
            return  # keep polling side channels until in-flight state lands
        self.scheduler_out.put(Done(self.op_id), stop=self.stop)
        self.finished = True

    def pending_state(self) -> bool:
        return any(not inc.state_arrived for inc in self._incoming.values())
