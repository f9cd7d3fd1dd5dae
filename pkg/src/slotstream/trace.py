"""Optional protocol trace: every send/receive/buffer event, per operator.

Operators are single-threaded, so each one appends to its own event list
without locking; the aggregate is read only after the run stops.  The
file form reuses the message line encoding and is what protocol replay
tests consume.
"""

from __future__ import annotations

from dataclasses import dataclass

from slotstream.messages import CodecError, Message, decode, encode

RECV = "recv"
SEND = "send"
BUFFER = "buffer"
FLUSH = "flush"
INSTALL = "install"
REPLAY = "replay"


@dataclass(frozen=True)
class TraceEvent:
    op: str
    seq: int
    kind: str
    channel: str
    msg: Message


class Tracer:
    def __init__(self, enabled: bool = True) -> None:
        self.enabled = enabled
        self._events: dict[str, list[TraceEvent]] = {}

    def record(self, op: str, kind: str, channel: str, msg: Message) -> None:
        if not self.enabled:
            return
        events = self._events.setdefault(op, [])
        events.append(TraceEvent(op=op, seq=len(events), kind=kind, channel=channel, msg=msg))

    def events(self, op: str | None = None) -> list[TraceEvent]:
        if op is not None:
            return list(self._events.get(op, []))
        out: list[TraceEvent] = []
        for op_id in sorted(self._events):
            out.extend(self._events[op_id])
        return out

    def operators(self) -> list[str]:
        return sorted(self._events)

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for ev in self.events():
                fh.write(f"{ev.op}\t{ev.seq}\t{ev.kind}\t{ev.channel}\t{encode(ev.msg)}\n")


def read_trace(path: str) -> list[TraceEvent]:
    events: list[TraceEvent] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 4)
            if len(parts) != 5:
                raise CodecError(f"trace line needs 5 fields, got {len(parts)}")
            events.append(
                TraceEvent(
                    op=parts[0],
                    seq=int(parts[1]),
                    kind=parts[2],
                    channel=parts[3],
                    msg=decode(parts[4]),
                )
            )
    return events
