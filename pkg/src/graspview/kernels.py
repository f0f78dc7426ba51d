"""Backend selection for the hot loops.

The compiled extension is used when importable; setting the environment
variable ``GRASPVIEW_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from graspview import _pykernels

BACKEND = "python"

if os.environ.get("GRASPVIEW_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from graspview import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
else:
    _impl = _pykernels

ray_first_hit = _impl.ray_first_hit
hand_search = _impl.hand_search
gaussian_splat = _impl.gaussian_splat

__all__ = ["BACKEND", "ray_first_hit", "hand_search", "gaussian_splat"]
