"""Syntax elements, their context models and the per-block coding kernels.

Residual levels of an 8x8 block are sent in zig-zag order. Each coefficient
gets a zero flag; a non-zero one adds its magnitude class (bit length - 1),
the bits below the leading one as bypass bins, and a bypass sign.
"""
import numpy as np

from .. import entropy
from .._accel import kernel
from .transform import DCT, ZIGZAG

MV_MAX = 64

INTRA_MODE = 0
INTER_FLAG = 1
MV_MAG = 2
MV_SIGN = 3
COEF_SIGN = 4
BYPASS = 5
ILF_LUMA = 6
ILF_CHROMA = 7
BARC_MODE = 8
BARC_SUB = 9
N_BANDS = 8
ZERO_BASE = 10  # + 8 * is_chroma + band
CLASS_BASE = ZERO_BASE + 2 * N_BANDS  # + is_chroma
N_CLASSES = 16

_SIZES = [4, 2, MV_MAX + 1, 2, 2, 2, 2, 2, 2, 2] + [2] * (2 * N_BANDS) + [N_CLASSES] * 2
_STATIC = {MV_SIGN, COEF_SIGN, BYPASS}

_BAND_EDGES = [0, 1, 3, 6, 10, 15, 21, 28, 64]
BAND = np.zeros(64, dtype=np.int64)
for _b in range(N_BANDS):
    BAND[_BAND_EDGES[_b] : _BAND_EDGES[_b + 1]] = _b

MAX_BLOCK_SYMBOLS = 1 + 64 * (3 + N_CLASSES)


def new_bank():
    """Fresh per-frame model set."""
    adaptive = [0 if i in _STATIC else 1 for i in range(len(_SIZES))]
    return entropy.ContextBank(_SIZES, adaptive)


@kernel
def _block_symbols(levels, chroma, band, out_ctx, out_sym, pos):
    zbase = 10 + 8 * chroma
    cls_ctx = 26 + chroma
    for i in range(64):
        v = levels[i]
        out_ctx[pos] = zbase + band[i]
        out_sym[pos] = 1 if v != 0 else 0
        pos += 1
        if v == 0:
            continue
        a = v if v > 0 else -v
        nb = 0
        t = a
        while t > 0:
            nb += 1
            t >>= 1
        out_ctx[pos] = cls_ctx
        out_sym[pos] = nb - 1
        pos += 1
        for k in range(nb - 2, -1, -1):
            out_ctx[pos] = 5
            out_sym[pos] = (a >> k) & 1
            pos += 1
        out_ctx[pos] = 4
        out_sym[pos] = 1 if v < 0 else 0
        pos += 1
    return pos


@kernel
def _reconstruct(levels_zz, pred, qstep, dct, zz, maxval, recon):
    coef = np.zeros((8, 8))
    for i in range(64):
        k = zz[i]
        coef[k // 8, k % 8] = levels_zz[i] * qstep
    tmp = np.zeros((8, 8))
    for i in range(8):
        for j in range(8):
            s = 0.0
            for k in range(8):
                s += dct[k, i] * coef[k, j]
            tmp[i, j] = s
    for i in range(8):
        for j in range(8):
            s = 0.0
            for k in range(8):
                s += tmp[i, k] * dct[k, j]
            r = pred[i, j] + np.int64(np.floor(s + 0.5))
            if r < 0:
                r = 0
            elif r > maxval:
                r = maxval
            recon[i, j] = r


@kernel
def _score(orig, pred, qstep, dct, zz, band, maxval, chroma, mode_sym,
           counts, totals, adaptive, inc, cap, out_ctx, out_sym, recon, levels):
    _reconstruct(levels, pred, qstep, dct, zz, maxval, recon)
    sse = 0
    for i in range(8):
        for j in range(8):
            d = np.int64(orig[i, j]) - recon[i, j]
            sse += d * d
    pos = 0
    if mode_sym >= 0:
        out_ctx[0] = 0
        out_sym[0] = mode_sym
        pos = 1
    pos = _block_symbols(levels, chroma, band, out_ctx, out_sym, pos)
    bits = 0.0
    for k in range(pos):
        c = out_ctx[k]
        s = out_sym[k]
        bits -= np.log2(counts[c, s] / totals[c])
        entropy._update(counts, totals, adaptive, c, s, inc, cap)
    return bits, sse, pos


@kernel
def _trial_block(
    orig, pred, qstep, lam, dct, zz, band, maxval, chroma, mode_sym,
    counts, totals, sizes, adaptive, inc, cap, out_ctx, out_sym, recon, levels,
):
    res = np.zeros((8, 8))
    for i in range(8):
        for j in range(8):
            res[i, j] = orig[i, j] - pred[i, j]
    tmp = np.zeros((8, 8))
    for i in range(8):
        for j in range(8):
            s = 0.0
            for k in range(8):
                s += dct[i, k] * res[k, j]
            tmp[i, j] = s
    dc = 0.0
    for i in range(64):
        k = zz[i]
        r, c = k // 8, k % 8
        s = 0.0
        for m in range(8):
            s += tmp[r, m] * dct[c, m]
        q = s / qstep
        if i == 0:
            dc = q
        if q >= 0:
            levels[i] = np.int64(np.floor(q + 0.5))
        else:
            levels[i] = -np.int64(np.floor(-q + 0.5))
    if lam < 0:
        return _score(orig, pred, qstep, dct, zz, band, maxval, chroma, mode_sym,
                      counts, totals, adaptive, inc, cap, out_ctx, out_sym, recon, levels)
    # second candidate: DC level rounded the other way, kept when its J is lower
    base_counts = counts.copy()
    base_totals = totals.copy()
    bits, sse, pos = _score(orig, pred, qstep, dct, zz, band, maxval, chroma, mode_sym,
                            counts, totals, adaptive, inc, cap, out_ctx, out_sym, recon, levels)
    mag = abs(dc)
    alt = np.int64(np.floor(mag))
    if alt == abs(levels[0]):
        alt += 1
    if dc < 0:
        alt = -alt
    if alt == levels[0] or mag == np.floor(mag):
        return bits, sse, pos
    alt_levels = levels.copy()
    alt_levels[0] = alt
    alt_ctx = np.empty_like(out_ctx)
    alt_sym = np.empty_like(out_sym)
    alt_recon = np.empty_like(recon)
    b2, s2, p2 = _score(orig, pred, qstep, dct, zz, band, maxval, chroma, mode_sym,
                        base_counts, base_totals, adaptive, inc, cap, alt_ctx, alt_sym, alt_recon, alt_levels)
    if s2 + lam * b2 < sse + lam * bits:
        counts[:, :] = base_counts
        totals[:] = base_totals
        out_ctx[:p2] = alt_ctx[:p2]
        out_sym[:p2] = alt_sym[:p2]
        recon[:, :] = alt_recon
        levels[0] = alt
        return b2, s2, p2
    return bits, sse, pos


@kernel
def _decode_levels(state, buf, counts, totals, sizes, adaptive, inc, cap, chroma, band, levels):
    zbase = 10 + 8 * chroma
    cls_ctx = 26 + chroma
    for i in range(64):
        nz = entropy._decode_symbol(state, buf, counts, totals, sizes, adaptive, inc, cap, zbase + band[i])
        if nz == 0:
            levels[i] = 0
            continue
        nb = entropy._decode_symbol(state, buf, counts, totals, sizes, adaptive, inc, cap, cls_ctx) + 1
        a = 1
        for _ in range(nb - 1):
            a = (a << 1) | entropy._decode_symbol(state, buf, counts, totals, sizes, adaptive, inc, cap, 5)
        neg = entropy._decode_symbol(state, buf, counts, totals, sizes, adaptive, inc, cap, 4)
        levels[i] = -a if neg else a


class BlockTrial:
    """Outcome of coding one 8x8 block against a cloned model set."""

    __slots__ = ("recon", "levels", "ctx", "sym", "bits", "sse", "bank")

    def __init__(self, recon, levels, ctx, sym, bits, sse, bank):
        self.recon = recon
        self.levels = levels
        self.ctx = ctx
        self.sym = sym
        self.bits = bits
        self.sse = sse
        self.bank = bank


def trial_block(orig, pred, qstep, bank, chroma, mode_sym=-1, maxval=255, lam=None):
    """Code ``orig`` with prediction ``pred`` on a clone of ``bank``.

    With ``lam`` given, the DC level is also tried rounded the other way and
    the lower ``sse + lam * bits`` wins. The decoder never needs to know.
    """
    b = bank.clone()
    out_ctx = np.empty(MAX_BLOCK_SYMBOLS, dtype=np.int64)
    out_sym = np.empty(MAX_BLOCK_SYMBOLS, dtype=np.int64)
    recon = np.empty((8, 8), dtype=np.int64)
    levels = np.empty(64, dtype=np.int64)
    bits, sse, n = _trial_block(
        np.ascontiguousarray(orig, dtype=np.int64),
        np.ascontiguousarray(pred, dtype=np.int64),
        float(qstep), -1.0 if lam is None else float(lam), DCT, ZIGZAG, BAND, int(maxval), int(chroma), int(mode_sym),
        *b._args(), out_ctx, out_sym, recon, levels,
    )
    return BlockTrial(recon, levels, out_ctx[:n], out_sym[:n], float(bits), int(sse), b)


def reconstruct(levels_zz, pred, qstep, maxval=255):
    recon = np.empty((8, 8), dtype=np.int64)
    _reconstruct(
        np.ascontiguousarray(levels_zz, dtype=np.int64),
        np.ascontiguousarray(pred, dtype=np.int64),
        float(qstep), DCT, ZIGZAG, int(maxval), recon,
    )
    return recon


def decode_levels(decoder, chroma):
    levels = np.empty(64, dtype=np.int64)
    decoder._call(_decode_levels, decoder.state, decoder.buf, *decoder.bank._args(), int(chroma), BAND, levels)
    return levels


class SymbolLog:
    """Accumulates (context, symbol) chunks in coding order."""

    def __init__(self):
        self.chunks = []

    def add(self, ctx, sym):
        self.chunks.append((np.asarray(ctx, dtype=np.int64), np.asarray(sym, dtype=np.int64)))

    def put(self, ctx, sym):
        self.add([ctx], [sym])

    def extend(self, other):
        self.chunks.extend(other.chunks)

    def arrays(self):
        if not self.chunks:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        return np.concatenate([c for c, _ in self.chunks]), np.concatenate([s for _, s in self.chunks])

    def __len__(self):
        return sum(len(c) for c, _ in self.chunks)


def mv_symbols(mv):
    ctx, sym = [], []
    for d in (mv.dx, mv.dy):
        if abs(d) > MV_MAX:
            raise ValueError(f"motion vector component {d} exceeds {MV_MAX}")
        ctx.append(MV_MAG)
        sym.append(abs(d))
        if d:
            ctx.append(MV_SIGN)
            sym.append(1 if d < 0 else 0)
    return ctx, sym
