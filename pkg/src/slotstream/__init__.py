"""Miniature stream-processing engine with pause-free slot migration.

A centralized scheduler injects totally ordered control messages at the
sources; the messages double as implicit barriers (safe points for
routing-table switches and slot-state transfers) and as metric-interval
boundaries.  A windowed hotspot-diminishing policy turns the metrics
into migration instructions that rebalance keyed state between reducers
without pausing the dataflow.
"""

__version__ = "0.1.0"
