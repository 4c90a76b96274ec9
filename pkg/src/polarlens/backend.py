"""Kernel backend selection.

The hot inner loops (LSTM step recurrences, the SMO sweep, k-means Lloyd
iterations) exist in two builds: a numba ``@njit`` build and a pure-numpy
build.  The environment variable ``POLARLENS_BACKEND`` picks one:

    auto    use numba when importable (the default)
    numba   require numba; raise at import if it is missing
    numpy   force the pure-numpy fallback

The flag is read once at import time.  ``benchmarks/bench_backends.py``
compares the two builds.
"""

import os

ENV_VAR = "POLARLENS_BACKEND"


def _resolve():
    choice = os.environ.get(ENV_VAR, "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(
            f"{ENV_VAR} must be one of auto|numba|numpy, got {choice!r}"
        )
    if choice == "numpy":
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise ImportError(f"{ENV_VAR}=numba but numba is not importable")
        return False
    return True


USE_NUMBA = _resolve()


def name():
    return "numba" if USE_NUMBA else "numpy"
