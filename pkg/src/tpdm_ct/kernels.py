"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when the
``TPDM_CT_PURE_PYTHON`` environment variable is set to a non-empty value
other than ``0``, the numpy implementations are used.
"""

import os

from . import _fallback

_force_pure = os.environ.get("TPDM_CT_PURE_PYTHON", "") not in ("", "0")

if _force_pure:
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
        BACKEND = "python"

_num_threads = 1


def set_num_threads(n: int) -> None:
    """Cap the worker count used by the compiled kernels."""
    global _num_threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _num_threads = int(n)


def get_num_threads() -> int:
    return _num_threads


def forward_project(*args):
    return _impl.forward_project(*args, _num_threads)


def backproject(*args):
    return _impl.backproject(*args, _num_threads)


def sq_distances(X, D):
    return _impl.sq_distances(X, D, _num_threads)


def pairwise_dot(X, D):
    return _impl.pairwise_dot(X, D, _num_threads)


def weighted_sum(W, D):
    return _impl.weighted_sum(W, D, _num_threads)
