"""Pure-numpy composition-sampling kernels.

Same contract as the compiled module (_native.pyx): given pre-drawn
uniforms, both backends produce bit-identical draws. Keep the floating
point expressions in the two files in sync — the compiled build disables
FMA contraction for exactly this reason.
"""

from __future__ import annotations

import numpy as np


def anchored_draws(
    cum_end: np.ndarray,
    cum_start: np.ndarray,
    u: np.ndarray,
    F: int,
    T: int,
) -> np.ndarray:
    """Draw anchored non-decreasing compositions.

    cum_end / cum_start: (F+1, T+1) float64 per-frame cumulative counts,
        row i is frame i (row 0 unused), cum[i, k] = float(sum of exact
        counts for timesteps 1..k).
    u: (n, F+2) uniforms in [0, 1). Column 0 picks the anchor frame,
        column 1 the anchor timestep, column 1+i frame i's conditional
        draw (column 1+anchor is unused).

    Returns an (n, F) int64 array of timesteps in [1, T].
    """
    n = u.shape[0]
    rows = np.arange(n)
    f = np.minimum((u[:, 0] * F).astype(np.int64), F - 1) + 1
    t = np.zeros((n, F + 1), dtype=np.int64)
    t[rows, f] = np.minimum((u[:, 1] * T).astype(np.int64), T - 1) + 1
    # Frames before the anchor, right to left: weight k by the number of
    # non-decreasing prefixes ending at (frame i, timestep k), k <= t[i+1].
    for i in range(F - 1, 0, -1):
        sel = f > i
        if not sel.any():
            continue
        K = t[sel, i + 1]
        r = u[sel, 1 + i] * cum_end[i][K]
        k = np.searchsorted(cum_end[i], r, side="right")
        t[sel, i] = np.minimum(k, K)
    # Frames after the anchor, left to right: weight k by the number of
    # non-decreasing suffixes starting at (frame i, timestep k), k >= t[i-1].
    for i in range(2, F + 1):
        sel = f < i
        if not sel.any():
            continue
        K = t[sel, i - 1]
        base = cum_start[i][K - 1]
        r = base + u[sel, 1 + i] * (cum_start[i][T] - base)
        k = np.searchsorted(cum_start[i], r, side="right")
        t[sel, i] = np.minimum(k, T)
    return t[:, 1:]


def sequential_draws(u: np.ndarray, F: int, T: int) -> np.ndarray:
    """Draw compositions frame by frame: t1 ~ U(1,T), t_i ~ U(t_{i-1}, T).

    u: (n, F) uniforms in [0, 1). Returns (n, F) int64 timesteps.
    """
    n = u.shape[0]
    t = np.empty((n, F), dtype=np.int64)
    t[:, 0] = np.minimum((u[:, 0] * T).astype(np.int64), T - 1) + 1
    for i in range(1, F):
        span = T - t[:, i - 1] + 1
        step = np.minimum((u[:, i] * span).astype(np.int64), span - 1)
        t[:, i] = t[:, i - 1] + step
    return t
