"""Experiment runner: wires workload -> engine, collects metric series.

Outputs per run directory:

* ``latency.csv``    -- ``sample_index,reducer,latency_ms``; one sample per
  100 records processed by a reducer.  ``sample_index`` is the record's
  per-source emit index.
* ``throughput.csv`` -- ``reducer,elapsed_s,records_per_s``; one row per
  1000 records processed by a reducer.
* ``decisions.log``  -- one line per scheduler tick (timestamp, window
  totals, migration if any) and per sealed metric interval.
* ``emit.log``       -- every generated record, line-encoded; the input
  to the conservation check.
* ``state.tsv``      -- final reducer state dump.
* ``summary.txt``    -- flat key=value run summary.
* ``trace.log``      -- protocol trace (only when tracing is on).

Latency is measured at the reducer as completion wall clock minus the
record's scheduled ingest time, so queueing delay anywhere upstream
(including a backpressured source) shows up in the series.
"""

from __future__ import annotations

import logging
import queue
from dataclasses import dataclass, field, fields
from pathlib import Path

from slotstream import kernels
from slotstream.engine import GraphSpec, Runtime, build
from slotstream.messages import (
    ConfigError,
    DataMessage,
    decode,
    encode,
)
from slotstream.scheduler import SchedulerConfig
from slotstream.trace import Tracer
from slotstream.workload import (
    FixedSkew,
    Pattern,
    RotatingSkew,
    SpikeSkew,
    WorkloadSpec,
)

logger = logging.getLogger(__name__)

_PATTERNS = ("fixed", "spike", "rotating")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment run needs; round-trips via key=value text."""

    sources: int = 2
    mappers: int = 2
    reducers: int = 3
    skew: float = 50.0
    pattern: str = "fixed"
    rate: float = 3000.0
    duration: float = 60.0
    balance: bool = False
    window_length: int = 5
    factor: float = 0.25
    period: float = 1000.0
    seed: int = 1
    out: str = "runs/out"
    trace: bool = False
    # Pattern details beyond the base skew percentage.
    spike_skew: float = 80.0
    spike_start: float = 15.0
    spike_length: float = 20.0
    rotate_every: float = 20.0
    # Engine knobs.
    hot_keys: int = 0  # 0 means one hot key per slot of the hot reducer
    slots_per_reducer: int = 16
    service_rate: float = 0.0  # 0 means unpaced
    capacity: int = 1024
    key_space: int = 10_000

    def __post_init__(self) -> None:
        if self.pattern not in _PATTERNS:
            raise ConfigError(f"pattern must be one of {_PATTERNS}: {self.pattern!r}")

    def workload_pattern(self) -> Pattern:
        hot = self.hot_keys or None
        if self.pattern == "fixed":
            return FixedSkew(skew_pct=self.skew, num_hot_keys=hot)
        if self.pattern == "spike":
            return SpikeSkew(
                base_skew_pct=self.skew,
                spike_skew_pct=self.spike_skew,
                start_s=self.spike_start,
                length_s=self.spike_length,
                num_hot_keys=hot,
            )
        return RotatingSkew(
            skew_pct=self.skew, rotate_every_s=self.rotate_every, num_hot_keys=hot
        )

    def workload_spec(self) -> WorkloadSpec:
        return WorkloadSpec(
            rate=self.rate,
            duration_s=self.duration,
            key_space=self.key_space,
            pattern=self.workload_pattern(),
            seed=self.seed,
        )

    def graph_spec(self) -> GraphSpec:
        return GraphSpec(
            num_sources=self.sources,
            num_mappers=self.mappers,
            num_reducers=self.reducers,
            channel_capacity=self.capacity,
            slots_per_reducer=self.slots_per_reducer,
            scheduler=SchedulerConfig(
                period_ms=self.period,
                window_length=self.window_length,
                factor=self.factor,
                balance_enabled=self.balance,
            ),
            service_rate=self.service_rate or None,
        )

    # -- flat key=value serialization ----------------------------------

    def to_mapping(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                out[f.name] = "on" if value else "off"
            else:
                out[f.name] = str(value)
        return out

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "ExperimentConfig":
        kwargs: dict[str, object] = {}
        by_name = {f.name: f for f in fields(cls)}
        for key, raw in mapping.items():
            f = by_name.get(key)
            if f is None:
                raise ConfigError(f"unknown config key: {key}")
            if f.type == "bool":
                if raw not in ("on", "off"):
                    raise ConfigError(f"{key} must be on or off: {raw!r}")
                kwargs[key] = raw == "on"
            elif f.type == "int":
                kwargs[key] = int(raw)
            elif f.type == "float":
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw
        return cls(**kwargs)

    def to_file(self, path: str | Path) -> None:
        lines = [f"{k}={v}" for k, v in self.to_mapping().items()]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        mapping: dict[str, str] = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            mapping[key.strip()] = value.strip()
        return cls.from_mapping(mapping)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    out_dir: Path
    summary: dict[str, object]
    latency: list[tuple[int, str, float]] = field(default_factory=list)
    throughput: list[tuple[str, float, float]] = field(default_factory=list)
    verified: bool = True
    mismatches: list[str] = field(default_factory=list)


def _percentile(sorted_values: list[float], q: float) -> float:
    if not sorted_values:
        return 0.0
    idx = int(round(q * (len(sorted_values) - 1)))
    return sorted_values[idx]


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tracer = Tracer() if config.trace else None
    samples: queue.SimpleQueue = queue.SimpleQueue()

    runtime = build(
        config.graph_spec(),
        workload=config.workload_spec(),
        tracer=tracer,
        sample_sink=samples.put,
    )
    runtime.run()
    return finalize_experiment(config, runtime, samples, out_dir, tracer)


def finalize_experiment(
    config: ExperimentConfig,
    runtime: Runtime,
    samples: queue.SimpleQueue,
    out_dir: Path,
    tracer: Tracer | None,
) -> ExperimentResult:
    latency: list[tuple[int, str, float]] = []
    throughput: list[tuple[str, float, float]] = []
    start_perf = runtime.start_perf
    while True:
        try:
            sample = samples.get_nowait()
        except queue.Empty:
            break
        if sample[0] == "lat":
            _, seq, reducer, ms = sample
            latency.append((seq, reducer, ms))
        else:
            _, reducer, now, rate = sample
            throughput.append((reducer, now - start_perf, rate))

    with open(out_dir / "latency.csv", "w", encoding="utf-8") as fh:
        fh.write("sample_index,reducer,latency_ms\n")
        for seq, reducer, ms in latency:
            fh.write(f"{seq},{reducer},{ms:.3f}\n")
    with open(out_dir / "throughput.csv", "w", encoding="utf-8") as fh:
        fh.write("reducer,elapsed_s,records_per_s\n")
        for reducer, elapsed, rate in throughput:
            fh.write(f"{reducer},{elapsed:.3f},{rate:.1f}\n")
    with open(out_dir / "decisions.log", "w", encoding="utf-8") as fh:
        for line in runtime.scheduler.decision_log:
            fh.write(line + "\n")

    emit_path = out_dir / "emit.log"
    with open(emit_path, "w", encoding="utf-8") as fh:
        for record in runtime.emit_log():
            fh.write(encode(record) + "\n")
    state_path = out_dir / "state.tsv"
    dump_state(runtime.final_states(), state_path)
    if tracer is not None:
        tracer.write(str(out_dir / "trace.log"))

    ok, mismatches = verify(emit_path, state_path)

    totals = runtime.processed_totals()
    lat_sorted = sorted(ms for _, _, ms in latency)
    window_totals, _ = runtime.scheduler.window_sums()
    ratio = load_ratio(window_totals)
    summary: dict[str, object] = {
        "records_generated": len(runtime.emit_log()),
        "records_processed": sum(totals.values()),
        "migrations": len(runtime.scheduler.migrations),
        "final_window_max_min_ratio": f"{ratio:.3f}",
        "latency_p50_ms": f"{_percentile(lat_sorted, 0.50):.3f}",
        "latency_p99_ms": f"{_percentile(lat_sorted, 0.99):.3f}",
        "verified": "pass" if ok else "fail",
    }
    for reducer in sorted(totals):
        summary[f"processed_{reducer}"] = totals[reducer]
    with open(out_dir / "summary.txt", "w", encoding="utf-8") as fh:
        for key, value in summary.items():
            fh.write(f"{key}={value}\n")

    return ExperimentResult(
        config=config,
        out_dir=out_dir,
        summary=summary,
        latency=latency,
        throughput=throughput,
        verified=ok,
        mismatches=mismatches,
    )


def load_ratio(window_totals: dict[str, int]) -> float:
    if not window_totals:
        return 1.0
    low = min(window_totals.values())
    high = max(window_totals.values())
    if low <= 0:
        return float("inf") if high > 0 else 1.0
    return high / low


def dump_state(states: dict[str, dict[str, dict[str, int]]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for reducer in sorted(states):
            for slot in sorted(states[reducer]):
                table = states[reducer][slot]
                for key in sorted(table):
                    fh.write(f"{reducer}\t{slot}\t{key}\t{table[key]}\n")


def load_state(path: str | Path) -> dict[str, int]:
    """Union of all dumped slot tables; keys must be globally unique."""
    merged: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ConfigError(f"state.tsv line {lineno}: expected 4 fields")
            key, value = parts[2], int(parts[3])
            if key in merged:
                raise ConfigError(f"state.tsv line {lineno}: duplicate key {key}")
            merged[key] = value
    return merged


def fold_emit_log(path: str | Path) -> dict[str, int]:
    keys: list[str] = []
    values: list[int] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            msg = decode(line)
            if not isinstance(msg, DataMessage):
                raise ConfigError("emit log contains a non-data line")
            keys.append(msg.key)
            values.append(msg.value)
    return kernels.sum_by_key(keys, values)


def verify(emit_log: str | Path, state_dump: str | Path) -> tuple[bool, list[str]]:
    """Check that final aggregated state equals a fold over the emit log."""
    expected = fold_emit_log(emit_log)
    actual = load_state(state_dump)
    mismatches: list[str] = []
    for key in sorted(set(expected) | set(actual)):
        if expected.get(key) != actual.get(key):
            mismatches.append(
                f"{key}: expected {expected.get(key)}, found {actual.get(key)}"
            )
    return (not mismatches), mismatches
