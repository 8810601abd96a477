"""Hot numeric kernels with a compiled core and a pure-Python fallback.

The compiled extension is used when importable; set ``SALMREC_PURE=1`` to
force the fallback (tests compare the two).
"""

import os

from . import _fallback

BACKEND = "python"
if os.environ.get("SALMREC_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
else:
    _impl = _fallback

bilinear_sample = _impl.bilinear_sample
invert_field = _impl.invert_field
levenshtein = _impl.levenshtein

__all__ = ["BACKEND", "bilinear_sample", "invert_field", "levenshtein", "_fallback"]
