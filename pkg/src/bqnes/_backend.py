"""Pick the compiled kernels when importable, else the numpy fallback.

Set ``BQNES_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

if os.environ.get("BQNES_PURE_PYTHON", "") not in ("", "0"):
    impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        impl = _pykernels
        BACKEND = "python"

sparse_gram = impl.sparse_gram
rbf_gram = impl.rbf_gram
hamming_min = impl.hamming_min
