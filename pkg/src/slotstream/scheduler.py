"""Centralized control operator: clock, metrics window, and balancing.

The scheduler owns the totally ordered control-message clock.  Stateful
operators report per-slot processing counts at every barrier; once every
operator has reported for a timestamp the interval is sealed into a ring
of the most recent ``window_length`` intervals.  At each tick the window
sums feed the hotspot-diminishing decision: find the most and least
loaded workers, and if the relative imbalance clears the threshold,
first-fit-pack the busiest worker's slots (largest count first) into
half the gap and migrate the packed slots to the least loaded worker.

At most one migration is outstanding at a time: a new decision is not
issued until the interval of the previous migration's barrier seals,
which proves every stateful operator has passed it.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from slotstream.messages import (
    ControlClock,
    ControlMessage,
    MetricsReport,
    MigrationInstruction,
    ProtocolError,
)
from slotstream.routing import RoutingTable


@dataclass(frozen=True)
class SchedulerConfig:
    period_ms: float = 1000.0
    window_length: int = 5
    factor: float = 0.25
    balance_enabled: bool = False

    def __post_init__(self) -> None:
        if self.period_ms <= 0:
            raise ValueError("period_ms must be positive")
        if self.window_length < 1:
            raise ValueError("window_length must be positive")
        if not 0.0 <= self.factor <= 1.0:
            raise ValueError("factor must lie in [0, 1]")


def _heaviest_worker(total_count: dict[str, int]) -> str:
    return min(total_count, key=lambda w: (-total_count[w], w))


def _lightest_worker(total_count: dict[str, int]) -> str:
    return min(total_count, key=lambda w: (total_count[w], w))


def process_window(
    total_count: dict[str, int],
    slot_count: dict[str, dict[str, int]],
    factor: float,
) -> list[str]:
    """Pick the slots to migrate off the most loaded worker.

    Ties for the extreme workers and for equal slot counts break toward
    the lexicographically smaller id, which keeps decisions reproducible.
    Every inspected slot leaves the candidate set whether or not it fits
    in the remaining gap.  Returns an empty list when there is nothing
    to balance.
    """
    if len(total_count) < 2:
        return []
    max_id = _heaviest_worker(total_count)
    min_id = _lightest_worker(total_count)
    migrated: list[str] = []
    diff = total_count[max_id] - total_count[min_id]
    if total_count[max_id] <= 0:
        return []
    if diff / total_count[max_id] >= factor:
        gap = diff // 2
        candidates = dict(slot_count.get(max_id, {}))
        while gap > 0 and candidates:
            slot_id = min(candidates, key=lambda s: (-candidates[s], s))
            num = candidates.pop(slot_id)
            if gap >= num:
                migrated.append(slot_id)
                gap -= num
    return migrated


class Scheduler:
    """Pure control logic; the engine drives ticks and feeds messages."""

    def __init__(
        self,
        config: SchedulerConfig,
        reducer_ids: list[str],
        table: RoutingTable,
        forced_migrations: dict[int, tuple[int, int, int]] | None = None,
    ) -> None:
        self.config = config
        self.reducer_ids = list(reducer_ids)
        self.shadow = table
        self.clock = ControlClock()
        self.next_time = 0
        self.window: deque[dict[str, MetricsReport]] = deque(maxlen=config.window_length)
        self.pending: dict[int, dict[str, MetricsReport]] = {}
        self.outstanding: int | None = None
        self.migrations: list[tuple[int, MigrationInstruction]] = []
        self.decision_log: list[str] = []
        # Test plumbing: tick timestamp -> (sender index, receiver index,
        # slot count); resolved against the shadow table at tick time.
        self.forced_migrations = dict(forced_migrations or {})
        self._issued: set[int] = set()
        self._last_return: dict[str, int] = {}

    # ------------------------------------------------------------------
    # clock

    def tick(self) -> ControlMessage:
        t = self.next_time
        self.next_time += 1
        instruction = self._forced_instruction(t)
        if (
            instruction is None
            and self.config.balance_enabled
            and self.outstanding is None
            and self.window
        ):
            instruction = self.decide()
        if instruction is not None:
            self.shadow = self.shadow.apply_migration(instruction)
            self.outstanding = t
            self.migrations.append((t, instruction))
            msg = self.clock.make_migration_control(t, instruction)
        else:
            msg = self.clock.make_empty_control(t)
        self._issued.add(t)
        self._log_tick(t, instruction)
        return msg

    def _forced_instruction(self, t: int) -> MigrationInstruction | None:
        plan = self.forced_migrations.pop(t, None)
        if plan is None:
            return None
        sender_idx, receiver_idx, count = plan
        sender = self.reducer_ids[sender_idx % len(self.reducer_ids)]
        receiver = self.reducer_ids[receiver_idx % len(self.reducer_ids)]
        if sender == receiver:
            return None
        slots = self.shadow.slots_of(sender)[: max(1, count)]
        if not slots:
            return None
        return MigrationInstruction(sender=sender, receiver=receiver, slot_ids=tuple(slots))

    # ------------------------------------------------------------------
    # metrics

    def on_metrics(self, report: MetricsReport) -> None:
        t = report.event_time
        if t not in self._issued:
            raise ProtocolError(f"metrics for never-issued timestamp {t}")
        entry = self.pending.setdefault(t, {})
        if report.worker in entry:
            raise ProtocolError(f"duplicate metrics from {report.worker} for {t}")
        if report.worker not in self.reducer_ids:
            raise ProtocolError(f"metrics from unknown worker {report.worker}")
        entry[report.worker] = report
        if len(entry) == len(self.reducer_ids):
            del self.pending[t]
            self.window.append(entry)
            if self.outstanding == t:
                self.outstanding = None
            self._log_seal(t, entry)

    def on_control_return(self, worker: str, msg: ControlMessage) -> None:
        t = msg.event_time
        if t not in self._issued:
            raise ProtocolError(f"control return for never-issued timestamp {t}")
        last = self._last_return.get(worker, -1)
        if t <= last:
            raise ProtocolError(
                f"control return regression from {worker}: {t} after {last}"
            )
        self._last_return[worker] = t

    # ------------------------------------------------------------------
    # decisions

    def window_sums(self) -> tuple[dict[str, int], dict[str, dict[str, int]]]:
        totals: dict[str, int] = {}
        slot_sums: dict[str, dict[str, int]] = {}
        for interval in self.window:
            for worker, report in interval.items():
                totals[worker] = totals.get(worker, 0) + report.total_count
                per = slot_sums.setdefault(worker, {})
                for slot, count in report.slot_count.items():
                    per[slot] = per.get(slot, 0) + count
        return totals, slot_sums

    def decide(self) -> MigrationInstruction | None:
        if not self.window:
            return None
        totals, slot_sums = self.window_sums()
        # Old intervals may count slots a worker no longer owns; packing
        # only ever considers slots the shadow table still assigns to it.
        filtered: dict[str, dict[str, int]] = {}
        for worker, per in slot_sums.items():
            owned = set(self.shadow.slots_of(worker))
            filtered[worker] = {s: c for s, c in per.items() if s in owned}
        slots = process_window(totals, filtered, self.config.factor)
        if not slots:
            return None
        return MigrationInstruction(
            sender=_heaviest_worker(totals),
            receiver=_lightest_worker(totals),
            slot_ids=tuple(slots),
        )

    # ------------------------------------------------------------------
    # decision log

    @staticmethod
    def _fmt_counts(counts: dict[str, int]) -> str:
        if not counts:
            return "-"
        return ",".join(f"{k}:{counts[k]}" for k in sorted(counts))

    def _log_tick(self, t: int, instruction: MigrationInstruction | None) -> None:
        totals, _ = self.window_sums()
        mig = "-"
        if instruction is not None:
            slots = ",".join(instruction.slot_ids)
            mig = f"{instruction.sender}>{instruction.receiver}:{slots}"
        self.decision_log.append(
            f"tick\t{t}\t{self._fmt_counts(totals)}\t{mig}"
        )

    def _log_seal(self, t: int, entry: dict[str, MetricsReport]) -> None:
        counts = {w: r.total_count for w, r in entry.items()}
        out = "-" if self.outstanding is None else str(self.outstanding)
        self.decision_log.append(
            f"seal\t{t}\t{self._fmt_counts(counts)}\t{out}"
        )
