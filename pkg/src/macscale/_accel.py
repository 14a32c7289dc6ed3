"""Backend switch between numba-compiled kernels and plain numpy.

Set ``MACSCALE_DISABLE_NUMBA=1`` to force the numpy code paths. The
choice can also be changed at runtime with :func:`set_backend`, which the
benchmarks use to time both.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None

if HAVE_NUMBA and "NUMBA_THREADING_LAYER" not in os.environ:
    # prefer OpenMP: an outdated TBB makes numba warn at every parallel launch
    try:
        from numba.np.ufunc import omppool  # noqa: F401
        numba.config.THREADING_LAYER = "omp"
    except ImportError:  # pragma: no cover
        numba.config.THREADING_LAYER = "workqueue"

_flag = os.environ.get("MACSCALE_DISABLE_NUMBA", "").strip().lower()
_use_numba = HAVE_NUMBA and _flag not in {"1", "true", "yes", "on"}


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise a no-op decorator."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


prange = numba.prange if HAVE_NUMBA else range


def use_numba() -> bool:
    return _use_numba


def set_backend(name: str) -> None:
    """Select ``"numba"`` or ``"numpy"`` for subsequent kernel calls."""
    global _use_numba
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba is not installed")
        _use_numba = True
    elif name == "numpy":
        _use_numba = False
    else:
        raise ValueError(f"unknown backend {name!r}")


def backend() -> str:
    return "numba" if _use_numba else "numpy"


def configure_threads() -> int | None:
    """Apply ``MACSCALE_THREADS`` to numba's thread pool; returns the count used."""
    raw = os.environ.get("MACSCALE_THREADS")
    if not HAVE_NUMBA:
        return None
    if raw:
        try:
            n = max(1, min(int(raw), numba.config.NUMBA_NUM_THREADS))
        except ValueError:
            return None
        numba.set_num_threads(n)
        return n
    return numba.get_num_threads()
