# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled per-record kernels: key hashing and keyed-sum folding.

Semantics match ``_purehash`` exactly; only speed differs.
"""

DEF FNV64_OFFSET_C = 0xCBF29CE484222325
DEF FNV64_PRIME_C = 0x100000001B3

FNV64_OFFSET = FNV64_OFFSET_C
FNV64_PRIME = FNV64_PRIME_C

BACKEND = "compiled"


cdef unsigned long long _fnv1a64_raw(const unsigned char* data, Py_ssize_t n,
                                     unsigned long long seed) nogil:
    cdef unsigned long long h = seed
    cdef Py_ssize_t i
    for i in range(n):
        h = (h ^ data[i]) * FNV64_PRIME_C
    return h


def fnv1a64(bytes data, unsigned long long seed=FNV64_OFFSET_C):
    return _fnv1a64_raw(data, len(data), seed)


def fnv1a64_batch(list keys, unsigned long long seed=FNV64_OFFSET_C):
    cdef list out = []
    cdef bytes k
    for k in keys:
        out.append(_fnv1a64_raw(k, len(k), seed))
    return out


def sum_by_key(list keys, list values):
    if len(keys) != len(values):
        raise ValueError("keys and values must have equal length")
    cdef dict out = {}
    cdef Py_ssize_t i
    cdef object k
    for i in range(len(keys)):
        k = keys[i]
        if k in out:
            out[k] = out[k] + values[i]
        else:
            out[k] = values[i]
    return out
