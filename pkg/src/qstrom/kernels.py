"""Kernel selection.

The compiled extension is used when it imports; set ``QSTROM_PUREPY=1`` to
force the pure-Python implementations (the test-suite runs both).
"""

import os

from . import _purepy

BACKEND = "python"
_impl = _purepy

if os.environ.get("QSTROM_PUREPY", "") not in ("1", "true", "yes"):
    try:
        from . import _native as _impl  # type: ignore[no-redef]

        BACKEND = "native"
    except ImportError:  # extension not built
        _impl = _purepy

powmod = _impl.powmod
dual_powmod = _impl.dual_powmod
match_sorted = _impl.match_sorted

__all__ = ["BACKEND", "powmod", "dual_powmod", "match_sorted"]
