"""Simple 8x8-grid deblocking filter.

At every grid edge, when ``|p0 - q0| < QP / 2`` the two boundary samples become
``(p1 + 2*p0 + q0 + 2) >> 2`` and ``(p0 + 2*q0 + q1 + 2) >> 2``. Vertical edges
are filtered first, horizontal edges on the result.
"""
import numpy as np

from .._accel import dispatch

GRID = 8


def _edges_numpy(plane, qp, vertical):
    a = plane if vertical else plane.T
    out = a.copy()
    cols = np.arange(GRID, a.shape[1], GRID)
    if cols.size == 0:
        return out if vertical else out.T
    p1, p0, q0, q1 = a[:, cols - 2], a[:, cols - 1], a[:, cols], a[:, cols + 1]
    on = 2 * np.abs(p0 - q0) < qp
    out[:, cols - 1] = np.where(on, (p1 + 2 * p0 + q0 + 2) >> 2, p0)
    out[:, cols] = np.where(on, (p0 + 2 * q0 + q1 + 2) >> 2, q0)
    return out if vertical else out.T


def _deblock_numpy(plane, qp):
    return _edges_numpy(_edges_numpy(plane, qp, True), qp, False)


@dispatch(_deblock_numpy, name="deblock_plane")
def _deblock_loops(plane, qp):
    h, w = plane.shape
    a = plane.copy()
    for y in range(h):
        for x in range(GRID, w, GRID):
            p1, p0, q0, q1 = plane[y, x - 2], plane[y, x - 1], plane[y, x], plane[y, x + 1]
            if 2 * abs(p0 - q0) < qp:
                a[y, x - 1] = (p1 + 2 * p0 + q0 + 2) >> 2
                a[y, x] = (p0 + 2 * q0 + q1 + 2) >> 2
    b = a.copy()
    for y in range(GRID, h, GRID):
        for x in range(w):
            p1, p0, q0, q1 = a[y - 2, x], a[y - 1, x], a[y, x], a[y + 1, x]
            if 2 * abs(p0 - q0) < qp:
                b[y - 1, x] = (p1 + 2 * p0 + q0 + 2) >> 2
                b[y, x] = (p0 + 2 * q0 + q1 + 2) >> 2
    return b


def deblock_plane(plane, qp):
    return _deblock(np.ascontiguousarray(plane, dtype=np.int64), int(qp)).astype(np.int32)


_deblock = _deblock_loops


def deblock(frame, qp):
    from .frame import Frame

    return Frame(*(deblock_plane(p, qp) for p in frame.planes), frame.bitdepth, frame.ftype)
