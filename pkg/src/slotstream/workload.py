"""Auction-bid workload generator with controllable key skew.

Each record is a (bid id, price) pair; the engine's stateful query keeps
a per-id running sum of prices.  Skew is the share of traffic that lands
on designated hot reducers: hot keys are pre-solved against the hash so
they cover the hot reducers' slots under the initial routing table, and
cold traffic draws uniformly over the remaining reducers' slots (or over
all slots while the skew is zero).  Generation is deterministic given
the spec and seed.
"""

from __future__ import annotations

import random
import threading
import time
from dataclasses import dataclass
from typing import Iterator

from slotstream.messages import ConfigError, DataMessage
from slotstream.routing import HashRouter, RoutingTable


@dataclass(frozen=True)
class FixedSkew:
    """A constant share of traffic targets the hot reducer(s)."""

    skew_pct: float
    num_hot_keys: int | None = None


@dataclass(frozen=True)
class SpikeSkew:
    """Base skew, with a burst of higher skew during one time window."""

    base_skew_pct: float
    spike_skew_pct: float
    start_s: float
    length_s: float
    num_hot_keys: int | None = None


@dataclass(frozen=True)
class RotatingSkew:
    """The hot-reducer designation advances round-robin on a fixed period."""

    skew_pct: float
    rotate_every_s: float
    num_hot_keys: int | None = None


Pattern = FixedSkew | SpikeSkew | RotatingSkew


def pattern_skews(pattern: Pattern) -> list[float]:
    if isinstance(pattern, FixedSkew):
        return [pattern.skew_pct]
    if isinstance(pattern, SpikeSkew):
        return [pattern.base_skew_pct, pattern.spike_skew_pct]
    return [pattern.skew_pct]


@dataclass(frozen=True)
class WorkloadSpec:
    rate: float
    duration_s: float
    key_space: int = 10_000
    pattern: Pattern = FixedSkew(skew_pct=0.0)
    seed: int = 1

    def __post_init__(self) -> None:
        if self.rate <= 0:
            raise ConfigError("rate must be positive")
        if self.duration_s <= 0:
            raise ConfigError("duration must be positive")
        if self.key_space < 1:
            raise ConfigError("key_space must be positive")
        for pct in pattern_skews(self.pattern):
            if not 0.0 <= pct <= 100.0:
                raise ConfigError("skew percentage must lie in [0, 100]")
        if isinstance(self.pattern, SpikeSkew):
            if self.pattern.start_s < 0 or self.pattern.length_s <= 0:
                raise ConfigError("spike window must have start >= 0 and length > 0")
        if isinstance(self.pattern, RotatingSkew) and self.pattern.rotate_every_s <= 0:
            raise ConfigError("rotate_every_s must be positive")


class TokenBucket:
    """Rate limiter: one token per acquire, refilled at ``rate`` per second.

    ``burst`` caps how much idle credit accumulates.  Sources use an
    uncapped bucket so they can catch back up to their emission schedule
    after backpressure clears; service pacing uses a small cap so an idle
    worker cannot bank processing capacity.
    """

    def __init__(self, rate: float, burst: float | None = None) -> None:
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.burst = burst
        self._tokens = 0.0
        self._last = time.perf_counter()

    def acquire(self, stop: threading.Event | None = None) -> None:
        while True:
            now = time.perf_counter()
            self._tokens += (now - self._last) * self.rate
            self._last = now
            if self.burst is not None:
                self._tokens = min(self._tokens, self.burst)
            if self._tokens >= 1.0:
                self._tokens -= 1.0
                return
            if stop is not None and stop.is_set():
                return
            time.sleep(min((1.0 - self._tokens) / self.rate, 0.05))


class HotKeyPlan:
    """Pre-solved key pools, per possible hot-reducer designation.

    Drawing is slot-first (uniform slot, then uniform key within it) so
    that a designation's traffic splits exactly evenly across the slots
    it targets, independent of how the hash happened to scatter the key
    space.
    """

    def __init__(
        self,
        spec: WorkloadSpec,
        router: HashRouter,
        table: RoutingTable,
        reducer_ids: list[str],
    ) -> None:
        self.num_reducers = len(reducer_ids)
        self.universe = [f"b{i}" for i in range(spec.key_space)]
        self.hot_group_size = 2 if self.num_reducers >= 5 else 1

        owner_index = {rid: i for i, rid in enumerate(reducer_ids)}
        keys_by_slot: dict[str, list[str]] = {}
        for key in self.universe:
            keys_by_slot.setdefault(router.route(key), []).append(key)
        # Populated slots grouped by owning reducer, in slot order.
        self._slot_pools: dict[int, list[list[str]]] = {
            i: [] for i in range(self.num_reducers)
        }
        for slot_id in router.slot_ids:
            keys = keys_by_slot.get(slot_id)
            if keys:
                self._slot_pools[owner_index[table.owner_of(slot_id)]].append(keys)

        num_hot = spec.pattern.num_hot_keys
        self.hot_keys: dict[int, list[str]] = {}
        for i, rid in enumerate(reducer_ids):
            slots = table.slots_of(rid)
            self.hot_keys[i] = _cover_slots(slots, keys_by_slot, num_hot or len(slots))

        if max(pattern_skews(spec.pattern)) > 0 and (
            self.num_reducers <= self.hot_group_size
        ):
            raise ConfigError(
                "skewed traffic needs at least one reducer outside the hot group"
            )
        self._cold_cache: dict[frozenset[int], list[list[str]]] = {}

    def cold_slot_pools(self, hot: frozenset[int]) -> list[list[str]]:
        pools = self._cold_cache.get(hot)
        if pools is None:
            pools = []
            for i in range(self.num_reducers):
                if i not in hot:
                    pools.extend(self._slot_pools[i])
            if not pools:
                raise ConfigError("no cold keys: every reducer is designated hot")
            self._cold_cache[hot] = pools
        return pools


def _cover_slots(
    slots: list[str], keys_by_slot: dict[str, list[str]], num_hot_keys: int
) -> list[str]:
    """Spread hot keys round-robin over the reducer's slots.

    Every targeted slot must contribute at least one key; otherwise the
    requested skew cannot land on it and the key space is too small.
    """
    targets = slots[: max(1, min(num_hot_keys, len(slots)))]
    if any(not keys_by_slot.get(slot) for slot in targets):
        raise ConfigError("key space too small to place hot keys on every target slot")
    chosen: list[str] = []
    depth = 0
    while len(chosen) < num_hot_keys:
        progress = False
        for slot in targets:
            pool = keys_by_slot[slot]
            if depth < len(pool):
                chosen.append(pool[depth])
                progress = True
                if len(chosen) == num_hot_keys:
                    break
        if not progress:
            break  # key space exhausted; targets are covered, so accept
        depth += 1
    return chosen


class BidGenerator:
    """Deterministic per-source record stream.

    ``ingest_clock`` on generated records is the scheduled emit offset
    in nanoseconds from run start; the source operator rebases it onto
    the wall clock when it emits.
    """

    def __init__(
        self,
        spec: WorkloadSpec,
        plan: HotKeyPlan,
        source_index: int = 0,
        num_sources: int = 1,
    ) -> None:
        if not 0 <= source_index < num_sources:
            raise ConfigError("source_index out of range")
        total = int(round(spec.rate * spec.duration_s))
        base, rem = divmod(total, num_sources)
        self.count = base + (1 if source_index < rem else 0)
        self.rate = spec.rate / num_sources
        self.spec = spec
        self.plan = plan
        self._rng = random.Random(f"{spec.seed}/{source_index}")

    def skew_at(self, sched_s: float) -> float:
        p = self.spec.pattern
        if isinstance(p, FixedSkew):
            return p.skew_pct
        if isinstance(p, SpikeSkew):
            if p.start_s <= sched_s < p.start_s + p.length_s:
                return p.spike_skew_pct
            return p.base_skew_pct
        return p.skew_pct

    def hot_group_at(self, sched_s: float) -> frozenset[int]:
        p = self.spec.pattern
        n = self.plan.num_reducers
        size = self.plan.hot_group_size
        if isinstance(p, RotatingSkew):
            first = int(sched_s // p.rotate_every_s) % n
            return frozenset((first + j) % n for j in range(size))
        return frozenset(range(size))

    def records(self) -> Iterator[DataMessage]:
        rng = self._rng
        for i in range(self.count):
            sched_s = i / self.rate
            skew = self.skew_at(sched_s)
            hot = self.hot_group_at(sched_s) if skew > 0 else frozenset()
            if hot and rng.uniform(0.0, 100.0) < skew:
                ridx = sorted(hot)[rng.randrange(len(hot))]
                pool = self.plan.hot_keys[ridx]
                key = pool[rng.randrange(len(pool))]
            else:
                pools = self.plan.cold_slot_pools(hot)
                slot_keys = pools[rng.randrange(len(pools))]
                key = slot_keys[rng.randrange(len(slot_keys))]
            price = rng.randint(1, 100)
            yield DataMessage(
                key=key, value=price, seq=i, ingest_clock=int(sched_s * 1e9)
            )
