"""Backend selection for the hot kernels.

The compiled Cython extension is used when it imports; otherwise the numpy
reference implementation is used. Set ``LIDM_PURE_PYTHON=1`` to force the
fallback (useful for debugging and for the backend benchmark).
"""

import os

from lidm import _pykernels

if os.environ.get("LIDM_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from lidm import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

scatter_min = _impl.scatter_min
row_runs = _impl.row_runs
nearest_sqdist = _impl.nearest_sqdist
raycast = _impl.raycast

LABEL_NONE = _pykernels.LABEL_NONE
LABEL_GROUND = _pykernels.LABEL_GROUND
LABEL_BOX = _pykernels.LABEL_BOX
LABEL_CYLINDER = _pykernels.LABEL_CYLINDER
LABEL_WALL = _pykernels.LABEL_WALL


def backends():
    """Mapping of every importable backend name to its module."""
    found = {"python": _pykernels}
    try:
        from lidm import _ckernels
    except ImportError:
        pass
    else:
        found["cython"] = _ckernels
    return found
