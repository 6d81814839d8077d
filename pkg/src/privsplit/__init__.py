"""Privacy-aware DNN partitioning and compression search."""

import os as _os

# BLAS thread pools read these when numpy is first imported, so set them before any submodule loads
_threads = _os.environ.get("PRIVSPLIT_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
