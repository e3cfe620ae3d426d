"""Backend selection for the time-tag kernels.

The compiled extension is used when it imports; otherwise the pure-Python
module is used.  Set ``EPRB_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("EPRB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass

candidate_pairs = _impl.candidate_pairs
greedy_accept = _impl.greedy_accept
sequential_match = _impl.sequential_match
diff_histogram = _impl.diff_histogram


def backends():
    """Available kernel modules keyed by name (for tests and benchmarks)."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
