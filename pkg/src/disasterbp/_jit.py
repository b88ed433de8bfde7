"""Optional numba compilation of user-supplied scalar callables."""

from __future__ import annotations

import warnings
from typing import Callable

import numba
from numba.core.registry import CPUDispatcher

__all__ = ["maybe_jit", "is_jitted", "njit"]

njit = numba.njit


def is_jitted(fn) -> bool:
    return isinstance(fn, CPUDispatcher)


def maybe_jit(fn: Callable, probe: float = 0.5):
    """Return a compiled version of ``fn`` or ``None`` if numba rejects it.

    ``probe`` is used to force type inference for a float argument.
    """
    if is_jitted(fn):
        return fn
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            compiled = numba.njit(fn)
            compiled(probe)
    except Exception:
        return None
    return compiled
