"""Hot inner loops with a compiled backend and a pure-Python fallback.

The compiled extension is used when it has been built (``pip install -e .``);
set ``TWOPASS_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
if os.environ.get("TWOPASS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
else:
    _impl = _pykernels

rnnt_lattice = _impl.rnnt_lattice
edit_distance = _impl.edit_distance

__all__ = ["BACKEND", "rnnt_lattice", "edit_distance", "_pykernels"]
