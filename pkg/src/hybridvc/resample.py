"""Separable bicubic 2x resampling (a = -0.5, edge replication).

Resampling is expressed as a pair of dense matrices so the same linear map (and
its transpose) can be used inside networks for back-propagation.
"""
from functools import lru_cache

import numpy as np

A = -0.5


def cubic(t, a=A):
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


@lru_cache(maxsize=64)
def down_matrix(n_in):
    """(n_in/2, n_in) matrix; the kernel is stretched 2x for anti-aliasing."""
    if n_in % 2:
        raise ValueError(f"cannot halve odd extent {n_in}")
    n_out = n_in // 2
    m = np.zeros((n_out, n_in))
    for j in range(n_out):
        centre = 2 * j + 0.5
        taps = np.arange(2 * j - 3, 2 * j + 5)
        w = cubic((centre - taps) / 2.0)
        w /= w.sum()
        np.add.at(m[j], np.clip(taps, 0, n_in - 1), w)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=64)
def up_matrix(n_in):
    """(2*n_in, n_in) matrix."""
    n_out = 2 * n_in
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        u = (i + 0.5) / 2.0 - 0.5
        base = int(np.floor(u))
        taps = np.arange(base - 1, base + 3)
        w = cubic(u - taps)
        w /= w.sum()
        np.add.at(m[i], np.clip(taps, 0, n_in - 1), w)
    m.setflags(write=False)
    return m


def _apply(x, mh, mw):
    return np.matmul(np.matmul(mh, x), mw.T)


def down2(x):
    """Halve the last two axes of a float array."""
    h, w = x.shape[-2:]
    return _apply(x, down_matrix(h), down_matrix(w))


def up2(x):
    """Double the last two axes of a float array."""
    h, w = x.shape[-2:]
    return _apply(x, up_matrix(h), up_matrix(w))


def down2_adjoint(g):
    h, w = g.shape[-2:]
    return _apply(g, down_matrix(2 * h).T, down_matrix(2 * w).T)


def up2_adjoint(g):
    h, w = g.shape[-2:]
    return _apply(g, up_matrix(h // 2).T, up_matrix(w // 2).T)


def _to_samples(x, maxval):
    return np.clip(np.floor(x + 0.5), 0, maxval).astype(np.int32)


def bicubic_down(block, maxval=255):
    """Integer-sample 2x down-sampling; both extents must be even."""
    block = np.asarray(block)
    if block.ndim != 2 or block.shape[0] % 2 or block.shape[1] % 2:
        raise ValueError(f"bicubic_down needs even 2-D extents, got {block.shape}")
    return _to_samples(down2(block.astype(np.float64)), maxval)


def bicubic_up(block, maxval=255):
    block = np.asarray(block)
    if block.ndim != 2:
        raise ValueError(f"bicubic_up needs a 2-D block, got {block.shape}")
    return _to_samples(up2(block.astype(np.float64)), maxval)
