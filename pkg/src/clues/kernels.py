"""Backend selection for the hot loops.

The compiled Cython module is used when it imports; otherwise (or when
``CLUES_PURE_PYTHON`` is set) the numpy implementation takes over. Both
expose ``merge_pair``, ``argmin_pair``, ``nn_chain``, ``greedy_matching`` and
``pg_step``.
"""

import os
from types import ModuleType

from . import _pykernels

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if _compiled is not None else [])


def get_backend(name: str | None = None) -> ModuleType:
    if name is None:
        name = BACKEND
    if name == "python":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not available; reinstall with Cython and a C compiler")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


BACKEND = "python" if (_compiled is None or os.environ.get("CLUES_PURE_PYTHON")) else "cython"
impl = get_backend(BACKEND)
