"""Messages that cross operator boundaries, and their line encoding.

Two kinds of traffic flow through the graph: keyed data records and
scheduler-issued control messages.  Control messages are totally ordered
by their logical timestamp and may carry a slot-migration instruction;
when they carry none, the migration fields are empty.  Data records are
deliberately timestamp-free: FIFO channels plus the control stream give
every operator all the ordering it needs.

The text encoding is one message per line, tab-separated, fixed field
order.  It backs the trace log, the emit log, the state dump, and the
golden tests; ``decode(encode(m)) == m`` for every encodable message.
Field values must not contain the delimiter characters (tab, comma,
semicolon, colon) -- the identifiers and keys this engine generates never
do, and ``encode`` rejects ones that would not round-trip.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class SlotstreamError(Exception):
    """Base class for errors raised by this package."""


class CodecError(SlotstreamError):
    """A line could not be decoded; the message names the offending field."""


class ProtocolError(SlotstreamError):
    """An operator observed traffic that violates the control protocol."""


class ConfigError(SlotstreamError):
    """Invalid graph, workload, or experiment configuration."""


_FORBIDDEN = "\t\n,;:"


def _check_token(value: str, what: str) -> str:
    if not value:
        raise ValueError(f"{what} must be non-empty")
    if any(ch in value for ch in _FORBIDDEN):
        raise ValueError(f"{what} contains a delimiter character: {value!r}")
    return value


@dataclass(frozen=True)
class MigrationInstruction:
    """Orders ``sender`` to hand the listed slots to ``receiver``."""

    sender: str
    receiver: str
    slot_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        _check_token(self.sender, "sender")
        _check_token(self.receiver, "receiver")
        if self.sender == self.receiver:
            raise ValueError("migration sender and receiver must differ")
        if not self.slot_ids:
            raise ValueError("migration must list at least one slot")
        if len(set(self.slot_ids)) != len(self.slot_ids):
            raise ValueError("migration slot list has duplicates")
        for slot in self.slot_ids:
            _check_token(slot, "slot id")
        object.__setattr__(self, "slot_ids", tuple(self.slot_ids))


@dataclass(frozen=True)
class ControlMessage:
    """Scheduler-issued barrier marker, optionally carrying a migration."""

    event_time: int
    migration: MigrationInstruction | None = None

    def __post_init__(self) -> None:
        if self.event_time < 0:
            raise ValueError("event_time must be non-negative")


@dataclass(frozen=True)
class DataMessage:
    """One keyed record.

    ``seq`` and ``ingest_clock`` are metrics/test plumbing only: ``seq``
    is the per-producer emit index and ``ingest_clock`` the scheduled
    ingest wall-clock in nanoseconds.  Protocol decisions never read
    either field.
    """

    key: str
    value: int
    seq: int
    ingest_clock: int


@dataclass(frozen=True)
class StateTransfer:
    """Slot tables in flight between two stateful operators."""

    sender: str
    receiver: str
    event_time: int
    slots: dict[str, dict[str, int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.slots:
            raise ValueError("state transfer must carry at least one slot")


@dataclass(frozen=True)
class MetricsReport:
    """Per-barrier processing counts a stateful operator sends upstream."""

    worker: str
    event_time: int
    total_count: int
    slot_count: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.total_count != sum(self.slot_count.values()):
            raise ValueError("total_count must equal the sum of slot counts")


Message = ControlMessage | DataMessage | StateTransfer | MetricsReport


class ControlClock:
    """Issues control messages with strictly increasing timestamps.

    One instance lives in the scheduler; a timestamp at or below the last
    issued one indicates a scheduler bug and is rejected.
    """

    def __init__(self) -> None:
        self._last: int | None = None

    @property
    def last_issued(self) -> int | None:
        return self._last

    def _advance(self, t: int) -> None:
        if t < 0:
            raise ValueError("timestamp must be non-negative")
        if self._last is not None and t <= self._last:
            raise ProtocolError(
                f"control timestamp {t} not greater than last issued {self._last}"
            )
        self._last = t

    def make_empty_control(self, t: int) -> ControlMessage:
        self._advance(t)
        return ControlMessage(event_time=t)

    def make_migration_control(
        self, t: int, instruction: MigrationInstruction
    ) -> ControlMessage:
        self._advance(t)
        return ControlMessage(event_time=t, migration=instruction)


# Field layouts, in encoding order:
#   ControlMsg  event_time  has_migration  sender  receiver  slot_ids
#   DataMsg     key  value  seq  ingest_clock
#   StateMsg    sender  receiver  event_time  slot=k:v,k:v;slot=...
#   MetricsMsg  worker  event_time  total_count  slot:count,...

def encode(msg: Message) -> str:
    if isinstance(msg, ControlMessage):
        if msg.migration is None:
            return f"ControlMsg\t{msg.event_time}\t0\t\t\t"
        m = msg.migration
        slots = ",".join(m.slot_ids)
        return f"ControlMsg\t{msg.event_time}\t1\t{m.sender}\t{m.receiver}\t{slots}"
    if isinstance(msg, DataMessage):
        _check_token(msg.key, "key")
        return f"DataMsg\t{msg.key}\t{msg.value}\t{msg.seq}\t{msg.ingest_clock}"
    if isinstance(msg, StateTransfer):
        chunks = []
        for slot_id in sorted(msg.slots):
            _check_token(slot_id, "slot id")
            items = msg.slots[slot_id]
            body = ",".join(
                f"{_check_token(k, 'key')}:{v}" for k, v in sorted(items.items())
            )
            chunks.append(f"{slot_id}={body}")
        payload = ";".join(chunks)
        return f"StateMsg\t{msg.sender}\t{msg.receiver}\t{msg.event_time}\t{payload}"
    if isinstance(msg, MetricsReport):
        body = ",".join(
            f"{_check_token(s, 'slot id')}:{c}" for s, c in sorted(msg.slot_count.items())
        )
        return f"MetricsMsg\t{msg.worker}\t{msg.event_time}\t{msg.total_count}\t{body}"
    raise TypeError(f"not an encodable message: {type(msg).__name__}")


def _parse_int(text: str, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise CodecError(f"field {what!r} is not an integer: {text!r}") from None


def decode(line: str) -> Message:
    parts = line.rstrip("\n").split("\t")
    kind = parts[0] if parts else ""
    if kind == "ControlMsg":
        if len(parts) != 6:
            raise CodecError(f"ControlMsg needs 6 fields, got {len(parts)}")
        t = _parse_int(parts[1], "event_time")
        if parts[2] == "0":
            if parts[3] or parts[4] or parts[5]:
                raise CodecError("migration fields must be empty when migration=0")
            return ControlMessage(event_time=t)
        if parts[2] != "1":
            raise CodecError(f"field 'migration' must be 0 or 1: {parts[2]!r}")
        try:
            instr = MigrationInstruction(
                sender=parts[3],
                receiver=parts[4],
                slot_ids=tuple(parts[5].split(",")) if parts[5] else (),
            )
        except ValueError as exc:
            raise CodecError(f"bad migration payload: {exc}") from None
        return ControlMessage(event_time=t, migration=instr)
    if kind == "DataMsg":
        if len(parts) != 5:
            raise CodecError(f"DataMsg needs 5 fields, got {len(parts)}")
        if not parts[1]:
            raise CodecError("field 'key' is empty")
        return DataMessage(
            key=parts[1],
            value=_parse_int(parts[2], "value"),
            seq=_parse_int(parts[3], "seq"),
            ingest_clock=_parse_int(parts[4], "ingest_clock"),
        )
    if kind == "StateMsg":
        if len(parts) != 5:
            raise CodecError(f"StateMsg needs 5 fields, got {len(parts)}")
        slots: dict[str, dict[str, int]] = {}
        for chunk in parts[4].split(";"):
            if "=" not in chunk:
                raise CodecError(f"bad slot payload chunk: {chunk!r}")
            slot_id, body = chunk.split("=", 1)
            if not slot_id:
                raise CodecError("field 'slot id' is empty")
            table: dict[str, int] = {}
            if body:
                for pair in body.split(","):
                    if ":" not in pair:
                        raise CodecError(f"bad key:value pair: {pair!r}")
                    k, v = pair.split(":", 1)
                    if not k:
                        raise CodecError("field 'key' is empty")
                    table[k] = _parse_int(v, "value")
            slots[slot_id] = table
        try:
            return StateTransfer(
                sender=parts[1],
                receiver=parts[2],
                event_time=_parse_int(parts[3], "event_time"),
                slots=slots,
            )
        except ValueError as exc:
            raise CodecError(f"bad state payload: {exc}") from None
    if kind == "MetricsMsg":
        if len(parts) != 5:
            raise CodecError(f"MetricsMsg needs 5 fields, got {len(parts)}")
        slot_count: dict[str, int] = {}
        if parts[4]:
            for pair in parts[4].split(","):
                if ":" not in pair:
                    raise CodecError(f"bad slot:count pair: {pair!r}")
                s, c = pair.split(":", 1)
                if not s:
                    raise CodecError("field 'slot id' is empty")
                slot_count[s] = _parse_int(c, "count")
        try:
            return MetricsReport(
                worker=parts[1],
                event_time=_parse_int(parts[2], "event_time"),
                total_count=_parse_int(parts[3], "total_count"),
                slot_count=slot_count,
            )
        except ValueError as exc:
            raise CodecError(f"bad metrics payload: {exc}") from None
    raise CodecError(f"unknown event_type: {kind!r}")
