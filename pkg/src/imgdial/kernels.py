"""Backend selection for the hot kernels.

The compiled extension is used when importable. Setting ``IMGDIAL_PURE_PYTHON=1``
forces the pure-Python fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("IMGDIAL_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py

hungarian = _impl.hungarian
lex_refine = _impl.lex_refine
topk_scan = _impl.topk_scan
lcs_length = _impl.lcs_length


def backends():
    """Available kernel modules keyed by name, for tests and benchmarks."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels

        out["compiled"] = _kernels
    except ImportError:
        pass
    return out
