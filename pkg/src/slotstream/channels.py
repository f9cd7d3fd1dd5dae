"""Bounded FIFO channels and the in-band run-control sentinels.

Each channel connects exactly one producing operator to one consuming
operator.  Put blocks when the buffer is full, which is what propagates
backpressure upstream; get is non-blocking because operator loops poll
several input channels round-robin.
"""

from __future__ import annotations

import queue
import random
import threading
import time
from dataclasses import dataclass

from slotstream.messages import SlotstreamError

CONTROL_PLANE_CAPACITY = 1 << 20


class ChannelAborted(SlotstreamError):
    """The runtime is shutting down after a failure; abandon the send."""


@dataclass(frozen=True)
class Shutdown:
    """Drain marker: no further traffic will follow on this channel."""


@dataclass(frozen=True)
class Done:
    """A stateful operator has fully drained and stopped."""

    operator: str


class Channel:
    """Single-producer single-consumer FIFO with blocking put.

    ``recv_jitter`` (seconds) simulates slow delivery by sleeping a
    random amount before handing over an available message; protocol
    stress tests use it to randomize interleavings.
    """

    def __init__(
        self,
        name: str,
        capacity: int,
        recv_jitter: tuple[float, float] | None = None,
        jitter_seed: int | None = None,
    ) -> None:
        if capacity < 1:
            raise ValueError("channel capacity must be positive")
        self.name = name
        self.capacity = capacity
        self._q: queue.Queue = queue.Queue(maxsize=capacity)
        self._jitter = recv_jitter
        self._rng = random.Random(jitter_seed)

    def put(self, msg, stop: threading.Event | None = None) -> None:
        while True:
            try:
                self._q.put(msg, timeout=0.05)
                return
            except queue.Full:
                if stop is not None and stop.is_set():
                    raise ChannelAborted(self.name)

    def try_get(self):
        """Return the next message, or None when the channel is empty."""
        try:
            msg = self._q.get_nowait()
        except queue.Empty:
            return None
        if self._jitter is not None:
            lo, hi = self._jitter
            delay = self._rng.uniform(lo, hi)
            if delay > 0:
                time.sleep(delay)
        return msg

    def get(self, stop: threading.Event | None = None):
        """Block until a message arrives; used by relays with one input."""
        while True:
            try:
                return self._q.get(timeout=0.05)
            except queue.Empty:
                if stop is not None and stop.is_set():
                    raise ChannelAborted(self.name)

    def __len__(self) -> int:
        return self._q.qsize()
