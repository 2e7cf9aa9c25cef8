"""Hot kernels: compiled Cython when available, numpy otherwise.

Set ``REASONGR_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels as python

try:
    if os.environ.get("REASONGR_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _ckernels as compiled
except ImportError:
    compiled = None

_active = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"

quantize_blocks = _active.quantize_blocks
dequantize_blocks = _active.dequantize_blocks
pack_nibbles = _active.pack_nibbles
unpack_nibbles = _active.unpack_nibbles
bm25_scores = _active.bm25_scores
masked_argmax = _active.masked_argmax

__all__ = [
    "BACKEND", "compiled", "python",
    "quantize_blocks", "dequantize_blocks", "pack_nibbles", "unpack_nibbles",
    "bm25_scores", "masked_argmax",
]
