"""Intra predictors for square blocks: DC, horizontal, vertical, planar."""
import numpy as np

DC, HORIZONTAL, VERTICAL, PLANAR = range(4)
MODES = (DC, HORIZONTAL, VERTICAL, PLANAR)
MODE_NAMES = {"dc": DC, "horizontal": HORIZONTAL, "vertical": VERTICAL, "planar": PLANAR}


def intra_predict(mode, top=None, left=None, size=8, bitdepth=8):
    """Predict a ``size`` x ``size`` block from its causal neighbours.

    ``top``/``left`` are the reconstructed row above and column to the left, or
    ``None`` when unavailable. Unavailable neighbours read as mid-grey; DC
    averages only the available ones.
    """
    mode = MODE_NAMES.get(mode, mode)
    mid = 1 << (bitdepth - 1)
    have_top, have_left = top is not None, left is not None
    t = np.asarray(top, dtype=np.int64) if have_top else np.full(size, mid, dtype=np.int64)
    l = np.asarray(left, dtype=np.int64) if have_left else np.full(size, mid, dtype=np.int64)
    if mode == DC:
        parts = [a for a, ok in ((t, have_top), (l, have_left)) if ok]
        if not parts:
            return np.full((size, size), mid, dtype=np.int32)
        ctx = np.concatenate(parts)
        return np.full((size, size), (int(ctx.sum()) + len(ctx) // 2) // len(ctx), dtype=np.int32)
    if mode == HORIZONTAL:
        return np.repeat(l[:, None], size, axis=1).astype(np.int32)
    if mode == VERTICAL:
        return np.repeat(t[None, :], size, axis=0).astype(np.int32)
    if mode == PLANAR:
        shift = int(np.log2(size)) + 1
        x = np.arange(size)[None, :]
        yy = np.arange(size)[:, None]
        top_right, bottom_left = t[-1], l[-1]
        horiz = (size - 1 - x) * l[:, None] + (x + 1) * top_right
        vert = (size - 1 - yy) * t[None, :] + (yy + 1) * bottom_left
        return ((horiz + vert + size) >> shift).astype(np.int32)
    raise ValueError(f"unknown intra mode {mode!r}")
