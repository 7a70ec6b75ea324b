"""Kernel dispatch: numba when available, plain Python/NumPy otherwise.

Set ``HYBRIDVC_DISABLE_NUMBA=1`` before import to force the fallback path.
"""
import os

_DISABLED = os.environ.get("HYBRIDVC_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA

# name -> (python_impl, compiled_impl or None); used by the benchmark and parity tests
REGISTRY = {}


def kernel(fn):
    """Compile ``fn`` with ``njit`` when numba is enabled; keep the Python original."""
    compiled = numba.njit(cache=True)(fn) if USE_NUMBA else None
    REGISTRY[fn.__name__] = (fn, compiled)
    return compiled if compiled is not None else fn


def dispatch(py_impl, name=None):
    """Pair a NumPy implementation with a compiled loop kernel of the same contract.

    Returns a decorator for the loop version. The selected callable is the compiled
    loop when numba is on, otherwise ``py_impl``.
    """

    def wrap(loop_fn):
        key = name or loop_fn.__name__
        compiled = numba.njit(cache=True)(loop_fn) if USE_NUMBA else None
        REGISTRY[key] = (py_impl, compiled)
        return compiled if compiled is not None else py_impl

    return wrap
