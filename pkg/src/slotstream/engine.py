"""Single-process dataflow runtime.

Builds the physical graph -- scheduler, sources, maps, reducers -- and
runs each operator on its own thread.  All interaction is message
passing over FIFO channels: bounded data channels (whose blocking sends
carry backpressure upstream) plus roomy control-plane channels for
control broadcast, metrics, and reducer-to-reducer state transfer, so
the control plane can never deadlock against a full data path.

Drain protocol: once every source has emitted its last record, the
scheduler issues one final control barrier (flushing the last metric
interval everywhere) followed by shutdown markers.  Operators forward
the markers once they have arrived on every input channel, and a
reducer additionally waits for any in-flight state transfer, so a
migration straddling shutdown always completes.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field, replace

from slotstream import trace as tr
from slotstream.channels import (
    CONTROL_PLANE_CAPACITY,
    Channel,
    ChannelAborted,
    Done,
    Shutdown,
)
from slotstream.map_op import MapOperator
from slotstream.messages import (
    ConfigError,
    ControlMessage,
    DataMessage,
    MetricsReport,
    ProtocolError,
    SlotstreamError,
    StateTransfer,
)
from slotstream.reduce_op import ReduceOperator
from slotstream.routing import initial_assignment
from slotstream.scheduler import Scheduler, SchedulerConfig
from slotstream.trace import Tracer
from slotstream.workload import BidGenerator, HotKeyPlan, TokenBucket, WorkloadSpec

logger = logging.getLogger(__name__)

_IDLE_SLEEP = 0.0002


class EngineAbort(SlotstreamError):
    """An operator failed; carries the operator name and the cause."""

    def __init__(self, operator: str, cause: BaseException | str) -> None:
        super().__init__(f"operator {operator} aborted: {cause}")
        self.operator = operator
        self.cause = cause


@dataclass(frozen=True)
class GraphSpec:
    num_sources: int = 1
    num_mappers: int = 1
    num_reducers: int = 3
    channel_capacity: int = 1024
    slots_per_reducer: int = 16
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    # Records per second one reducer can apply; None means unpaced.
    service_rate: float | None = None
    # Receive-delay range in seconds on data and side channels (stress knob).
    recv_jitter: tuple[float, float] | None = None
    jitter_seed: int = 0

    def __post_init__(self) -> None:
        if min(self.num_sources, self.num_mappers, self.num_reducers) < 1:
            raise ConfigError("operator counts must be positive")
        if self.channel_capacity < 1:
            raise ConfigError("channel capacity must be positive")
        if self.slots_per_reducer < 1:
            raise ConfigError("slots_per_reducer must be positive")
        if self.service_rate is not None and self.service_rate <= 0:
            raise ConfigError("service_rate must be positive when set")


class SourceOperator:
    """Paced record emitter that weaves the control stream into its output.

    Control message T is forwarded (to every map, keeping each channel's
    copy) before any record whose scheduled emit time falls past T's
    scheduled emission, so the record-vs-barrier interleaving on each
    channel is a pure function of the workload and the control period.
    """

    def __init__(
        self,
        op_id: str,
        control_in: Channel,
        outputs: list[Channel],
        generator: BidGenerator | None,
        period_s: float,
        tracer: Tracer | None,
        stop: threading.Event,
    ) -> None:
        self.op_id = op_id
        self.control_in = control_in
        self.outputs = outputs
        self.generator = generator
        self.period_s = period_s
        self.tracer = tracer
        self.stop = stop
        self.emit_log: list[DataMessage] = []
        self.done_generating = threading.Event()
        self.finished = False
        self.start_perf = 0.0
        self._start_ns = 0

    def set_start(self, start_perf: float, start_ns: int) -> None:
        self.start_perf = start_perf
        self._start_ns = start_ns

    def _trace(self, kind: str, channel: str, msg) -> None:
        if self.tracer is not None:
            self.tracer.record(self.op_id, kind, channel, msg)

    def _forward_control(self, expected: int) -> None:
        msg = self.control_in.get(stop=self.stop)
        if not isinstance(msg, ControlMessage):
            raise ProtocolError(
                f"{self.op_id}: expected control {expected}, got {type(msg).__name__}"
            )
        if msg.event_time != expected:
            raise ProtocolError(
                f"{self.op_id}: control sequence gap: expected {expected}, "
                f"got {msg.event_time}"
            )
        self._trace(tr.RECV, self.control_in.name, msg)
        for out in self.outputs:
            self._trace(tr.SEND, out.name, msg)
            out.put(msg, stop=self.stop)

    def _pace_to(self, sched_s: float) -> None:
        target = self.start_perf + sched_s
        while True:
            now = time.perf_counter()
            if now >= target:
                return
            if self.stop.is_set():
                raise ChannelAborted(self.op_id)
            time.sleep(min(target - now, 0.05))

    def run(self) -> None:
        next_control = 0
        if self.generator is not None:
            for record in self.generator.records():
                sched_s = record.ingest_clock / 1e9
                while (next_control + 1) * self.period_s <= sched_s:
                    self._forward_control(next_control)
                    next_control += 1
                self._pace_to(sched_s)
                live = replace(record, ingest_clock=self._start_ns + record.ingest_clock)
                out = self.outputs[record.seq % len(self.outputs)]
                self._trace(tr.SEND, out.name, live)
                out.put(live, stop=self.stop)
                self.emit_log.append(record)
        self.done_generating.set()
        while True:
            msg = self.control_in.get(stop=self.stop)
            if isinstance(msg, Shutdown):
                for out in self.outputs:
                    out.put(Shutdown(), stop=self.stop)
                break
            if not isinstance(msg, ControlMessage) or msg.event_time != next_control:
                raise ProtocolError(f"{self.op_id}: bad drain-phase control message")
            self._trace(tr.RECV, self.control_in.name, msg)
            for out in self.outputs:
                self._trace(tr.SEND, out.name, msg)
                out.put(msg, stop=self.stop)
            next_control += 1
        self.finished = True


class Runtime:
    """A built dataflow graph, ready to run once."""

    def __init__(
        self,
        spec: GraphSpec,
        workload: WorkloadSpec | None = None,
        tracer: Tracer | None = None,
        sample_sink=None,
        forced_migrations: dict[int, tuple[int, int, int]] | None = None,
    ) -> None:
        self.spec = spec
        self.workload = workload
        self.tracer = tracer
        self.state = "built"
        self._stop = threading.Event()
        self._drain = threading.Event()
        self._failures: list[tuple[str, BaseException]] = []

        self.source_ids = [f"source-{i}" for i in range(spec.num_sources)]
        self.mapper_ids = [f"mapper-{i}" for i in range(spec.num_mappers)]
        self.reducer_ids = [f"reducer-{i}" for i in range(spec.num_reducers)]

        self.router, self.table = initial_assignment(
            self.reducer_ids, spec.slots_per_reducer
        )
        self.scheduler = Scheduler(
            spec.scheduler, self.reducer_ids, self.table, forced_migrations
        )

        jitter = spec.recv_jitter
        jseed = spec.jitter_seed

        self.control_out = [
            Channel(f"scheduler->{s}", CONTROL_PLANE_CAPACITY) for s in self.source_ids
        ]
        self.metrics_in = [
            Channel(f"{r}->scheduler", CONTROL_PLANE_CAPACITY) for r in self.reducer_ids
        ]
        self.source_to_map = [
            [
                Channel(
                    f"{s}->{m}",
                    spec.channel_capacity,
                    recv_jitter=jitter,
                    jitter_seed=jseed + 13 * si + mi,
                )
                for mi, m in enumerate(self.mapper_ids)
            ]
            for si, s in enumerate(self.source_ids)
        ]
        self.map_to_reduce = [
            [
                Channel(
                    f"{m}->{r}",
                    spec.channel_capacity,
                    recv_jitter=jitter,
                    jitter_seed=jseed + 131 * mi + ri,
                )
                for ri, r in enumerate(self.reducer_ids)
            ]
            for mi, m in enumerate(self.mapper_ids)
        ]
        self.side_channels = {
            (a, b): Channel(
                f"{a}=>{b}",
                CONTROL_PLANE_CAPACITY,
                recv_jitter=jitter,
                jitter_seed=jseed + 1313 * ai + bi,
            )
            for ai, a in enumerate(self.reducer_ids)
            for bi, b in enumerate(self.reducer_ids)
            if a != b
        }

        plan = None
        if workload is not None:
            plan = HotKeyPlan(workload, self.router, self.table, self.reducer_ids)
        period_s = spec.scheduler.period_ms / 1000.0
        self.sources = [
            SourceOperator(
                op_id=s,
                control_in=self.control_out[si],
                outputs=[self.source_to_map[si][mi] for mi in range(spec.num_mappers)],
                generator=(
                    BidGenerator(workload, plan, si, spec.num_sources)
                    if workload is not None
                    else None
                ),
                period_s=period_s,
                tracer=tracer,
                stop=self._stop,
            )
            for si, s in enumerate(self.source_ids)
        ]
        self.maps = [
            MapOperator(
                op_id=m,
                num_inputs=spec.num_sources,
                router=self.router,
                table=self.table,
                outputs={
                    r: self.map_to_reduce[mi][ri]
                    for ri, r in enumerate(self.reducer_ids)
                },
                tracer=tracer,
                stop=self._stop,
            )
            for mi, m in enumerate(self.mapper_ids)
        ]
        self.reducers = [
            ReduceOperator(
                op_id=r,
                num_data_inputs=spec.num_mappers,
                router=self.router,
                slots={s: {} for s in self.table.slots_of(r)},
                scheduler_out=self.metrics_in[ri],
                side_out={
                    peer: self.side_channels[(r, peer)]
                    for peer in self.reducer_ids
                    if peer != r
                },
                tracer=tracer,
                stop=self._stop,
                sample_sink=sample_sink,
                pacer=(
                    TokenBucket(spec.service_rate, burst=16.0)
                    if spec.service_rate is not None
                    else None
                ),
            )
            for ri, r in enumerate(self.reducer_ids)
        ]
        self._threads: list[threading.Thread] = []
        self.start_perf = 0.0

    # ------------------------------------------------------------------
    # operator loops

    def _guard(self, op_id: str, fn):
        def wrapped() -> None:
            try:
                fn()
            except ChannelAborted:
                pass
            except BaseException as exc:  # noqa: BLE001 - reported via run()
                logger.error("operator %s failed: %s", op_id, exc)
                self._failures.append((op_id, exc))
                self._stop.set()

        return wrapped

    def _map_loop(self, op: MapOperator, inputs: list[Channel]) -> None:
        while not op.finished:
            progressed = False
            for idx, channel in enumerate(inputs):
                msg = channel.try_get()
                if msg is not None:
                    op.handle(msg, idx)
                    progressed = True
            if not progressed:
                if self._stop.is_set():
                    raise ChannelAborted(op.op_id)
                time.sleep(_IDLE_SLEEP)

    def _reduce_loop(
        self,
        op: ReduceOperator,
        data_inputs: list[Channel],
        side_inputs: list[Channel],
    ) -> None:
        while not op.finished:
            progressed = False
            for idx, channel in enumerate(data_inputs):
                msg = channel.try_get()
                if msg is not None:
                    op.handle(msg, idx)
                    progressed = True
            for channel in side_inputs:
                msg = channel.try_get()
                if msg is not None:
                    if not isinstance(msg, StateTransfer):
                        raise ProtocolError(
                            f"{op.op_id}: non-state message on side channel"
                        )
                    op.handle_state(msg, channel.name)
                    progressed = True
            if not progressed:
                if self._stop.is_set():
                    raise ChannelAborted(op.op_id)
                time.sleep(_IDLE_SLEEP)

    def _scheduler_loop(self) -> None:
        period_s = self.spec.scheduler.period_ms / 1000.0
        done: set[str] = set()
        drained = False
        while len(done) < len(self.reducer_ids):
            progressed = False
            if not drained:
                if self._drain.is_set():
                    self._broadcast_control(self.scheduler.tick())
                    for channel in self.control_out:
                        channel.put(Shutdown(), stop=self._stop)
                    drained = True
                    progressed = True
                elif (
                    time.perf_counter()
                    >= self.start_perf + (self.scheduler.next_time + 1) * period_s
                ):
                    self._broadcast_control(self.scheduler.tick())
                    progressed = True
            for ri, channel in enumerate(self.metrics_in):
                msg = channel.try_get()
                if msg is None:
                    continue
                progressed = True
                if isinstance(msg, ControlMessage):
                    if self.tracer is not None:
                        self.tracer.record("scheduler", tr.RECV, channel.name, msg)
                    self.scheduler.on_control_return(self.reducer_ids[ri], msg)
                elif isinstance(msg, MetricsReport):
                    if self.tracer is not None:
                        self.tracer.record("scheduler", tr.RECV, channel.name, msg)
                    self.scheduler.on_metrics(msg)
                elif isinstance(msg, Done):
                    done.add(msg.operator)
                else:
                    raise ProtocolError("scheduler: unexpected metrics-channel message")
            if not progressed:
                if self._stop.is_set():
                    raise ChannelAborted("scheduler")
                time.sleep(_IDLE_SLEEP)

    def _broadcast_control(self, msg: ControlMessage) -> None:
        for channel in self.control_out:
            if self.tracer is not None:
                self.tracer.record("scheduler", tr.SEND, channel.name, msg)
            channel.put(msg, stop=self._stop)

    # ------------------------------------------------------------------
    # lifecycle

    def run(self, duration_s: float | None = None, timeout: float | None = None) -> None:
        """Run the graph to completion (all reducers drained).

        With a workload, its duration bounds the record stream and
        ``duration_s`` is ignored; without one, the graph idles for
        ``duration_s`` (default one control period) before draining.
        """
        if self.state != "built":
            raise ConfigError(f"runtime is {self.state}, can only run once")
        self.state = "running"
        self.start_perf = time.perf_counter()
        start_ns = time.time_ns()
        for source in self.sources:
            source.set_start(self.start_perf, start_ns)

        if timeout is None:
            base = self.workload.duration_s if self.workload is not None else (
                duration_s or self.spec.scheduler.period_ms / 1000.0
            )
            timeout = 3.0 * base + 60.0
        deadline = self.start_perf + timeout

        self._threads = [
            threading.Thread(
                target=self._guard("scheduler", self._scheduler_loop),
                name="scheduler",
                daemon=True,
            )
        ]
        for ri, op in enumerate(self.reducers):
            data_inputs = [self.map_to_reduce[mi][ri] for mi in range(self.spec.num_mappers)]
            side_inputs = [
                self.side_channels[(peer, op.op_id)]
                for peer in self.reducer_ids
                if peer != op.op_id
            ]
            self._threads.append(
                threading.Thread(
                    target=self._guard(
                        op.op_id, lambda o=op, d=data_inputs, s=side_inputs: self._reduce_loop(o, d, s)
                    ),
                    name=op.op_id,
                    daemon=True,
                )
            )
        for mi, op in enumerate(self.maps):
            inputs = [self.source_to_map[si][mi] for si in range(self.spec.num_sources)]
            self._threads.append(
                threading.Thread(
                    target=self._guard(op.op_id, lambda o=op, i=inputs: self._map_loop(o, i)),
                    name=op.op_id,
                    daemon=True,
                )
            )
        for source in self.sources:
            self._threads.append(
                threading.Thread(
                    target=self._guard(source.op_id, source.run),
                    name=source.op_id,
                    daemon=True,
                )
            )
        for thread in self._threads:
            thread.start()

        min_elapsed = 0.0
        if self.workload is None:
            min_elapsed = duration_s if duration_s is not None else (
                self.spec.scheduler.period_ms / 1000.0
            )
        try:
            while True:
                if self._failures:
                    break
                sources_done = all(s.done_generating.is_set() for s in self.sources)
                elapsed = time.perf_counter() - self.start_perf
                if sources_done and elapsed >= min_elapsed:
                    break
                if time.perf_counter() > deadline:
                    raise EngineAbort("runtime", "timed out waiting for sources")
                time.sleep(0.002)
            if not self._failures:
                self._drain.set()
            for thread in self._threads:
                remaining = max(0.1, deadline - time.perf_counter())
                thread.join(timeout=remaining)
                if thread.is_alive():
                    raise EngineAbort("runtime", f"{thread.name} failed to drain in time")
        except EngineAbort:
            self._stop.set()
            for thread in self._threads:
                thread.join(timeout=2.0)
            self.state = "stopped"
            raise
        self.state = "stopped"
        if self._failures:
            op_id, cause = self._failures[0]
            raise EngineAbort(op_id, cause) from cause

    # ------------------------------------------------------------------
    # post-run inspection

    def final_states(self) -> dict[str, dict[str, dict[str, int]]]:
        if self.state != "stopped":
            raise ConfigError("final states are only available after the run stops")
        return {r.op_id: {s: dict(t) for s, t in r.slots.items()} for r in self.reducers}

    def emit_log(self) -> list[DataMessage]:
        if self.state != "stopped":
            raise ConfigError("emit log is only available after the run stops")
        records: list[DataMessage] = []
        for source in self.sources:
            records.extend(source.emit_log)
        return records

    def processed_totals(self) -> dict[str, int]:
        return {r.op_id: r.processed_total for r in self.reducers}


def build(
    spec: GraphSpec,
    workload: WorkloadSpec | None = None,
    tracer: Tracer | None = None,
    sample_sink=None,
    forced_migrations: dict[int, tuple[int, int, int]] | None = None,
) -> Runtime:
    return Runtime(
        spec,
        workload=workload,
        tracer=tracer,
        sample_sink=sample_sink,
        forced_migrations=forced_migrations,
    )
