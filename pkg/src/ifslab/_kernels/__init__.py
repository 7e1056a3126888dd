"""Kernel backends.

Two interchangeable implementations of the hot loops live here:

* ``numpy_impl``  -- vectorized pure-numpy versions, always available.
* ``numba_impl``  -- ``@njit`` compiled versions of the same functions.

The active backend is chosen once, at import time, from the environment
variable ``IFSLAB_BACKEND``:

* ``auto`` (default): numba if it imports, numpy otherwise.
* ``numba``: require numba, fail loudly if it is missing.
* ``numpy``: force the pure-numpy path.

Both backends produce bitwise-identical random streams (same Philox4x64-10
blocks) and identical transport plans; floating-point cost sums may differ
in the last couple of ulps because numpy's reductions are pairwise.  All
randomized kernels are counter-based, so results never depend on thread
count or call order.

Stream identifiers partition the Philox key space between unrelated
consumers of randomness.  They are part of the reproducibility contract:
changing them changes every seeded result.
"""

import os

from . import numpy_impl

# Philox key word 1 is the stream id; one per independent consumer.
STREAM_CHAIN = 1      # chaos-game index draws
STREAM_BASE_INIT = 2  # skew products: initial base point draws
STREAM_BASE_STEP = 3  # skew products: Markov transition draws
STREAM_SELFTEST = 4   # transport self-test instance generation

_requested = os.environ.get("IFSLAB_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(
        "IFSLAB_BACKEND must be 'auto', 'numba' or 'numpy', got %r" % _requested
    )

active = numpy_impl
active_name = "numpy"
if _requested in ("auto", "numba"):
    try:
        from . import numba_impl

        active = numba_impl
        active_name = "numba"
    except ImportError:
        if _requested == "numba":
            raise
