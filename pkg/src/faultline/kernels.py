"""Backend selection for the numeric hot kernels.

Prefers the compiled extension, falls back to the numpy implementation when
the extension was not built, and honours FAULTLINE_PURE_PYTHON=1 to force
the fallback (used by the benchmark and backend-agreement tests).
"""

from __future__ import annotations

import logging
import os

logger = logging.getLogger(__name__)

_FORCE_PURE = os.environ.get("FAULTLINE_PURE_PYTHON", "").strip().lower() in (
    "1", "true", "yes")

if _FORCE_PURE:
    from ._statespace_py import BACKEND, local_level_filter
else:
    try:
        from ._statespace import BACKEND, local_level_filter
    except ImportError:
        from ._statespace_py import BACKEND, local_level_filter

        logger.info("compiled state-space kernel unavailable; using numpy fallback")

__all__ = ["BACKEND", "local_level_filter"]
