"""Kernel backend selection.

The conv gather/scatter kernels exist twice: a compiled Cython extension
(`daae._kernels`) and a pure-numpy fallback (`daae._kernels_np`).  The
compiled one is preferred when importable; set ``DAAE_KERNELS=numpy`` to
force the fallback (or ``DAAE_KERNELS=compiled`` to make a missing
extension a hard error).  im2col is a pure gather and agrees bit-exactly
across backends; col2im accumulates in a different order, so the two
agree only up to float summation order.  Within one backend every run is
bit-reproducible.
"""

import os

from . import _kernels_np

_requested = os.environ.get("DAAE_KERNELS", "auto").lower()

if _requested == "numpy":
    _impl = _kernels_np
elif _requested in ("auto", "compiled"):
    try:
        from . import _kernels as _impl
    except ImportError:
        if _requested == "compiled":
            raise ImportError(
                "DAAE_KERNELS=compiled but the daae._kernels extension is not "
                "built; run `python setup.py build_ext --inplace`"
            )
        _impl = _kernels_np
else:
    raise ValueError(f"DAAE_KERNELS must be auto|compiled|numpy, got {_requested!r}")

im2col = _impl.im2col
col2im = _impl.col2im


def backend_name():
    """Which kernel implementation is active: 'compiled' or 'numpy'."""
    return _impl.BACKEND_NAME
