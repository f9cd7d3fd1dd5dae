"""Selects the hot-path kernel backend at import time.

Prefers the compiled ``_accel`` extension; falls back to the pure-Python
``_purehash`` module when the extension is unbuilt or when the
``SLOTSTREAM_PURE`` environment variable is set to a non-empty value.
"""

from __future__ import annotations

import os

if os.environ.get("SLOTSTREAM_PURE"):
    from slotstream._purehash import (  # noqa: F401
        BACKEND,
        FNV64_OFFSET,
        fnv1a64,
        fnv1a64_batch,
        sum_by_key,
    )
else:
    try:
        from slotstream._accel import (  # type: ignore[import-not-found]  # noqa: F401
            BACKEND,
            FNV64_OFFSET,
            fnv1a64,
            fnv1a64_batch,
            sum_by_key,
        )
    except ImportError:
        from slotstream._purehash import (  # noqa: F401
            BACKEND,
            FNV64_OFFSET,
            fnv1a64,
            fnv1a64_batch,
            sum_by_key,
        )
