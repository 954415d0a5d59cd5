"""Backend selection for the hot convolution and pooling kernels.

The compiled Cython module is used when it was built; otherwise the numpy
implementation is used. Set ``DANN_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels

python_backend = _pykernels
compiled_backend = None

try:
    from . import _ckernels as compiled_backend
except ImportError:
    pass

if compiled_backend is None or os.environ.get("DANN_PURE_PYTHON", "") not in ("", "0"):
    backend = _pykernels
else:
    backend = compiled_backend

BACKEND = backend.NAME


def available_backends():
    """Name -> module for every backend importable in this environment."""
    found = {_pykernels.NAME: _pykernels}
    if compiled_backend is not None:
        found[compiled_backend.NAME] = compiled_backend
    return found


conv2d_forward = backend.conv2d_forward
conv2d_backward = backend.conv2d_backward
maxpool_forward = backend.maxpool_forward
maxpool_backward = backend.maxpool_backward
