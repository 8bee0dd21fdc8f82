"""Backend selection for the nearest-neighbour kernels.

The compiled extension is used when it imports; otherwise, or when
``HONEYVAULT_PURE_PYTHON`` is set to a non-empty value other than ``0``,
the numpy implementation is used. Both expose ``Bucket``,
``nearest_sq_many`` and ``min_pairwise_sq``.
"""
import importlib
import os

from honeyvault import _kernels_py

PURE_ENV_VAR = "HONEYVAULT_PURE_PYTHON"


def _load_compiled():
    try:
        return importlib.import_module("honeyvault._kernels")
    except ImportError:
        return None


_compiled = _load_compiled()


def available_backends() -> list[str]:
    return ["cython", "python"] if _compiled is not None else ["python"]


def get_backend(name: str | None = None):
    """Kernel module by name (``"cython"``/``"python"``); ``None`` picks the default."""
    if name is None:
        forced = os.environ.get(PURE_ENV_VAR, "")
        if forced and forced != "0":
            return _kernels_py
        return _compiled if _compiled is not None else _kernels_py
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


default = get_backend()
BACKEND = default.BACKEND
