"""Pure-Python fallback for the per-record kernels in ``_accel``.

Must stay bit-for-bit equivalent to the compiled versions; the test
suite cross-checks both backends on random inputs.
"""

from __future__ import annotations

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

BACKEND = "pure"


def fnv1a64(data: bytes, seed: int = FNV64_OFFSET) -> int:
    h = seed & _MASK64
    for b in data:
        h = ((h ^ b) * FNV64_PRIME) & _MASK64
    return h


def fnv1a64_batch(keys: list[bytes], seed: int = FNV64_OFFSET) -> list[int]:
    return [fnv1a64(k, seed) for k in keys]


def sum_by_key(keys: list[str], values: list[int]) -> dict[str, int]:
    if len(keys) != len(values):
        raise ValueError("keys and values must have equal length")
    out: dict[str, int] = {}
    for k, v in zip(keys, values):
        out[k] = out.get(k, 0) + v
    return out
