"""Selects the compiled or pure-Python error-vector kernels.

The compiled extension is used when it imports; set ``QRSIM_PURE_PYTHON=1``
to force the fallback.  :func:`use` swaps implementations at runtime, which
the backend benchmark relies on.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_FUNCS = ("matmul", "vecmat", "matpow", "evolve_powers", "sample_index", "identity")

K = SimpleNamespace(name="python")


def available() -> list[str]:
    names = ["python"]
    if _ckernels is not None:
        names.insert(0, "compiled")
    return names


def use(name: str) -> str:
    if name == "compiled":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        impl = _ckernels
    elif name == "python":
        impl = _pykernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    for fn in _FUNCS:
        setattr(K, fn, getattr(impl, fn))
    K.name = name
    return name


def active() -> str:
    return K.name


use("python" if (_ckernels is None or os.environ.get("QRSIM_PURE_PYTHON")) else "compiled")
