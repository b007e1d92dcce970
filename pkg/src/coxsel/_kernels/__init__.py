"""Hot-loop kernels with a numba backend and a pure-numpy fallback.

The default backend is numba when importable.  Set ``COXSEL_NUMBA=0`` (or
``false``/``off``/``no``) before import to force the numpy fallback; any other
value, or an unimportable numba, falls back silently.  ``BACKEND`` records the
choice.
"""

import os

from . import _numpy as numpy_backend

_flag = os.environ.get("COXSEL_NUMBA", "1").strip().lower()
numba_backend = None
if _flag not in ("0", "false", "off", "no"):
    try:
        from . import _numba as numba_backend
    except ImportError:
        numba_backend = None

if numba_backend is not None:
    BACKEND = "numba"
    cd_quad = numba_backend.cd_quad
    cox_irls = numba_backend.cox_irls
    cox_negll = numba_backend.cox_negll
    cox_path = numba_backend.cox_path
else:
    BACKEND = "numpy"
    cd_quad = numpy_backend.cd_quad
    cox_irls = numpy_backend.cox_irls
    cox_negll = numpy_backend.cox_negll
    cox_path = numpy_backend.cox_path

__all__ = [
    "BACKEND", "cd_quad", "cox_irls", "cox_negll", "cox_path",
    "numpy_backend", "numba_backend",
]
