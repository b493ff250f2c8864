"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``TWINPURIFY_PURE_PYTHON`` is set to a non-empty value
other than ``0``, the numpy implementations are used. ``BACKEND`` names the
active one. ``risk_table`` always uses numpy: two sorted searches beat the
compiled sweep, which pays for its own argsorts.
"""

from __future__ import annotations

import os

from twinpurify import _kernels_py

_force_py = os.environ.get("TWINPURIFY_PURE_PYTHON", "") not in ("", "0")

if _force_py:
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from twinpurify import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

cox_breslow = _impl.cox_breslow
concordance_counts = _impl.concordance_counts
unique_fractions = _impl.unique_fractions
risk_table = _kernels_py.risk_table
adam_update = _impl.adam_update

__all__ = ["BACKEND", "cox_breslow", "concordance_counts", "unique_fractions", "risk_table", "adam_update"]
