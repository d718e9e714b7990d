"""Backend selection for the hot kernels.

Prefers the compiled extension, falls back to numpy. Set
``SCRIPTORIUM_PURE_PYTHON=1`` to force the fallback (used by the
benchmark and by tests that compare the two backends).
"""

from __future__ import annotations

import logging
import os

log = logging.getLogger(__name__)

if os.environ.get("SCRIPTORIUM_PURE_PYTHON") == "1":
    from scriptorium import _kernels_py as _impl
else:
    try:
        from scriptorium import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:
        from scriptorium import _kernels_py as _impl  # type: ignore[no-redef]

        log.debug("compiled kernels unavailable, using numpy fallback")

from scriptorium import _kernels_py as _np_impl  # noqa: E402

BACKEND: str = _impl.BACKEND
iou_matrix = _impl.iou_matrix
greedy_match = _impl.greedy_match
# benchmarks/bench_kernels.py: BLAS beats the compiled loop for this one,
# and a single code path keeps split outputs identical across installs
pairwise_cosine = _np_impl.pairwise_cosine
