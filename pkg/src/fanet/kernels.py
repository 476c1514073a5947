"""Backend selection for the convolution hot loops.

The compiled Cython module is used when it was built; otherwise, or when
``FANET_PURE_PYTHON=1`` is set, the numpy implementation takes over.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("FANET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass


def im2col(xp, kh, kw, stride, dilation, out_h, out_w, backend=None):
    impl = _resolve(backend)
    return impl.im2col(np.ascontiguousarray(xp), kh, kw, stride, dilation, out_h, out_w)


def col2im(cols, batch, channels, height, width, kh, kw, stride, dilation, out_h, out_w,
           backend=None):
    impl = _resolve(backend)
    return impl.col2im(np.ascontiguousarray(cols), batch, channels, height, width,
                       kh, kw, stride, dilation, out_h, out_w)


def available_backends():
    names = ["python"]
    if BACKEND == "cython" or _try_cython() is not None:
        names.append("cython")
    return names


def _try_cython():
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels


def _resolve(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _pykernels
    if backend == "cython":
        mod = _try_cython()
        if mod is None:
            raise RuntimeError("compiled kernels are not built")
        return mod
    raise ValueError(f"unknown kernel backend {backend!r}")
