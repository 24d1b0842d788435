"""Hot loops with a compiled core and a pure-Python fallback.

The Cython extension is used when it was built; otherwise, or when
``CURIOUSFL_PURE_PYTHON=1`` is set, the pure-Python module is used.
``BACKEND`` names the active choice.
"""

import os

from . import _pykernels as python_backend

compiled_backend = None
if os.environ.get("CURIOUSFL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:
        compiled_backend = None

_active = compiled_backend or python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

hungarian = _active.hungarian
krum_scores = _active.krum_scores
single_linkage = _active.single_linkage

__all__ = ["BACKEND", "hungarian", "krum_scores", "single_linkage",
           "python_backend", "compiled_backend"]
