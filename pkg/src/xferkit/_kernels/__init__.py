"""Kernel lane selection.

The hot kernels exist twice: a compiled Cython extension and a pure-numpy
fallback with identical contracts. The compiled lane is used when the
extension imports; set ``XFERKIT_BACKEND=pure`` (or ``compiled``) to force
a lane explicitly.
"""

from __future__ import annotations

import os

from . import pure

_ERR = None
try:
    from . import _ext
except ImportError as exc:  # extension not built
    _ext = None
    _ERR = exc

_requested = os.environ.get("XFERKIT_BACKEND", "").strip().lower()
if _requested == "pure":
    _impl = pure
elif _requested == "compiled":
    if _ext is None:
        raise ImportError(
            f"XFERKIT_BACKEND=compiled but the extension is unavailable: {_ERR}")
    _impl = _ext
elif _requested in ("", "auto"):
    _impl = _ext if _ext is not None else pure
else:
    raise ImportError(f"unknown XFERKIT_BACKEND value: {_requested!r}")

BACKEND = _impl.NAME

glcm_feature_image = _impl.glcm_feature_image
grey_erode_square = _impl.grey_erode_square
reconstruct_dilation = _impl.reconstruct_dilation
best_split = _impl.best_split
tree_apply = _impl.tree_apply

__all__ = [
    "BACKEND",
    "best_split",
    "glcm_feature_image",
    "grey_erode_square",
    "pure",
    "reconstruct_dilation",
    "tree_apply",
]
