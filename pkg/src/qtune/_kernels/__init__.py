"""MLP kernel backends.

The compiled Cython extension is preferred when it was built; the numpy
fallback is selected otherwise, or when QTUNE_PURE_PYTHON=1 is set.  Both
expose the same forward / loss_and_grads / train_step functions.
"""

from __future__ import annotations

import os

from . import pure

try:
    from . import _core as compiled
except ImportError:
    compiled = None

if compiled is None or os.environ.get("QTUNE_PURE_PYTHON") == "1":
    active = pure
else:
    active = compiled


def backend_name() -> str:
    return active.NAME


def available_backends() -> dict:
    out = {"pure": pure}
    if compiled is not None:
        out["compiled"] = compiled
    return out
