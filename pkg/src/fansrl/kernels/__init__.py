"""Hot kernels with a compiled implementation and a numpy fallback.

The compiled extension is used when it imports cleanly; setting
``FANSRL_PURE_PYTHON=1`` forces the fallback. ``BACKEND`` names the active one.
"""

from __future__ import annotations

import os

from . import _reference as reference

compiled = None
if os.environ.get("FANSRL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled  # type: ignore[no-redef]
    except ImportError:  # extension not built
        compiled = None

_impl = compiled if compiled is not None else reference
BACKEND = "compiled" if compiled is not None else "python"

lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward
dsep_reachable = _impl.dsep_reachable


def backends() -> dict:
    """All importable implementations, keyed by name (for tests and benchmarks)."""
    out = {"python": reference}
    if compiled is not None:
        out["compiled"] = compiled
    return out
