"""Integer-pel full-search motion estimation by SAD."""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .._accel import dispatch


@dataclass(frozen=True)
class MotionVector:
    dx: int = 0
    dy: int = 0


def _full_search_numpy(cur, ref, bx, by, rng):
    h, w = cur.shape
    y0, y1 = max(by - rng, 0), min(by + rng, ref.shape[0] - h)
    x0, x1 = max(bx - rng, 0), min(bx + rng, ref.shape[1] - w)
    win = sliding_window_view(ref[y0 : y1 + h, x0 : x1 + w], (h, w))
    sad = np.abs(win - cur[None, None]).sum(axis=(2, 3))
    dy = np.arange(y0, y1 + 1)[:, None] - by + np.zeros_like(sad)
    dx = np.arange(x0, x1 + 1)[None, :] - bx + np.zeros_like(sad)
    order = np.lexsort((dx.ravel(), dy.ravel(), (np.abs(dx) + np.abs(dy)).ravel(), sad.ravel()))
    k = order[0]
    return int(dx.ravel()[k]), int(dy.ravel()[k]), int(sad.ravel()[k])


@dispatch(_full_search_numpy, name="full_search")
def _full_search_loops(cur, ref, bx, by, rng):
    h, w = cur.shape
    best_dx, best_dy = 0, 0
    best_sad = -1
    best_len = 0
    for dy in range(-rng, rng + 1):
        y = by + dy
        if y < 0 or y + h > ref.shape[0]:
            continue
        for dx in range(-rng, rng + 1):
            x = bx + dx
            if x < 0 or x + w > ref.shape[1]:
                continue
            s = 0
            for i in range(h):
                for j in range(w):
                    d = cur[i, j] - ref[y + i, x + j]
                    s += d if d >= 0 else -d
                if best_sad >= 0 and s > best_sad:
                    break
            ln = abs(dx) + abs(dy)
            better = best_sad < 0 or s < best_sad
            if not better and s == best_sad:
                if ln < best_len or (ln == best_len and (dy < best_dy or (dy == best_dy and dx < best_dx))):
                    better = True
            if better:
                best_sad, best_len, best_dx, best_dy = s, ln, dx, dy
    return best_dx, best_dy, best_sad


def full_search(cur, ref, bx, by, rng):
    """Best in-frame displacement of ``cur`` (at ``bx, by``) inside ``ref``.

    Ties go to the smaller ``|dx| + |dy|``, then smaller ``dy``, then ``dx``.
    """
    cur = np.ascontiguousarray(cur, dtype=np.int64)
    ref = np.ascontiguousarray(ref, dtype=np.int64)
    return _full_search(cur, ref, int(bx), int(by), int(rng))


_full_search = _full_search_loops


def motion_search(block, ref, search_range=16):
    """Full search for ``block`` (a :class:`Block`) in the same plane of ``ref``."""
    dx, dy, sad = full_search(block.samples, ref.plane(block.plane), block.x, block.y, search_range)
    return MotionVector(dx, dy), sad
