"""Backend selection for the sampling kernels.

The compiled extension is preferred when present; the numpy fallback is a
drop-in replacement producing bit-identical draws. Set STAIRDIFF_KERNELS to
"native" or "python" to force a backend (native raises if not built).
"""

import os

from stairdiff._kernels import _fallback

_requested = os.environ.get("STAIRDIFF_KERNELS", "").strip().lower()
if _requested not in ("", "native", "python"):
    raise RuntimeError(
        f"STAIRDIFF_KERNELS must be 'native' or 'python', got {_requested!r}"
    )

try:
    from stairdiff._kernels import _native
except ImportError:
    _native = None
    if _requested == "native":
        raise

if _requested == "python" or _native is None:
    BACKEND = "python"
    anchored_draws = _fallback.anchored_draws
    sequential_draws = _fallback.sequential_draws
else:
    BACKEND = "native"
    anchored_draws = _native.anchored_draws
    sequential_draws = _native.sequential_draws

native = _native
fallback = _fallback
