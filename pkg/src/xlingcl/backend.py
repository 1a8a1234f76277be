"""Backend selection for the hot numeric kernels.

Two implementations of the inner loops exist in :mod:`xlingcl.kernels`: a
numba ``@njit`` path and a pure-numpy fallback.  The active one is picked at
import time from the ``XLINGCL_BACKEND`` environment variable:

    XLINGCL_BACKEND=numba   force numba (error if numba is unavailable)
    XLINGCL_BACKEND=numpy   force the pure-numpy fallback
    unset                   numba if importable, else numpy

The flag only affects performance.  Results of the two paths agree to
floating-point round-off (summation order may differ), and every run is
deterministic within one backend.
"""

import os

_VALID = ("numba", "numpy")


def _resolve() -> str:
    choice = os.environ.get("XLINGCL_BACKEND", "").strip().lower()
    if choice and choice not in _VALID:
        raise RuntimeError(
            f"XLINGCL_BACKEND must be one of {_VALID}, got {choice!r}"
        )
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise RuntimeError("XLINGCL_BACKEND=numba but numba is not installed")
        return "numpy"
    return "numba"


ACTIVE = _resolve()


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return ACTIVE
