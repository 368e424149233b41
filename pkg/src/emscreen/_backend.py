"""Kernel selection.

The compiled ``_core`` extension is used when it imports; otherwise the
numpy fallback in ``_pycore``. Set ``EMSCREEN_PURE=1`` to force the fallback.
"""

import os

from . import _pycore

if os.environ.get("EMSCREEN_PURE", "") not in ("", "0"):
    kernels = _pycore
    NAME = "python"
else:
    try:
        from . import _core as kernels
        NAME = "cython"
    except ImportError:  # extension not built
        kernels = _pycore
        NAME = "python"

fit_theta = kernels.fit_theta
logpdf_matrix = kernels.logpdf_matrix
em_run = kernels.em_run


def available():
    """Names of the kernel backends importable in this environment."""
    names = ["python"]
    try:
        from . import _core  # noqa: F401
        names.insert(0, "cython")
    except ImportError:
        pass
    return names


def get(name):
    if name == "python":
        return _pycore
    if name == "cython":
        from . import _core
        return _core
    raise ValueError(f"unknown backend {name!r}")
