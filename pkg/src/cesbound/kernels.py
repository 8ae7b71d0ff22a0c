"""Hot batched kernels, compiled when the extension is available.

Set ``CESBOUND_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("CESBOUND_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

hermitian_forms = _impl.hermitian_forms
score_pieces = _impl.score_pieces
