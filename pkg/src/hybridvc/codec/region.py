"""Coding of one rectangular region (a CTU, possibly at half resolution).

A region is split into 16x16 prediction units. Each unit carries four 8x8 luma
blocks and one 8x8 block per chroma plane. In P frames a unit is either inter
predicted (one integer motion vector, chroma uses the halved vector) or intra
coded block by block; in I frames it is always intra.

Encoder and decoder share :class:`Canvas`, so the intra context they see is the
same by construction.
"""
from dataclasses import dataclass

import numpy as np

from . import syntax
from .intra import MODES, intra_predict
from .motion import MotionVector, full_search
from .transform import qstep

PU = 16
B = 8


class Canvas:
    """Reconstruction buffer of one plane of a region plus its causal border."""

    __slots__ = ("a", "top_avail", "left_avail")

    def __init__(self, h, w, top=None, left=None):
        self.a = np.zeros((h + 1, w + 1), dtype=np.int64)
        self.top_avail = top is not None
        self.left_avail = left is not None
        if top is not None:
            self.a[0, 1:] = top
        if left is not None:
            self.a[1:, 0] = left

    @classmethod
    def from_plane(cls, plane, x0, y0, w, h):
        top = plane[y0 - 1, x0 : x0 + w] if y0 > 0 else None
        left = plane[y0 : y0 + h, x0 - 1] if x0 > 0 else None
        return cls(h, w, top, left)

    @classmethod
    def half_from_plane(cls, plane, x0, y0, w, h):
        """Half-resolution canvas for the full-resolution area (x0, y0, w, h)."""
        top = left = None
        if y0 > 0:
            row = plane[y0 - 1, x0 : x0 + w].astype(np.int64)
            top = (row[0::2] + row[1::2] + 1) >> 1
        if x0 > 0:
            col = plane[y0 : y0 + h, x0 - 1].astype(np.int64)
            left = (col[0::2] + col[1::2] + 1) >> 1
        return cls(h // 2, w // 2, top, left)

    def context(self, by, bx, n=B):
        top = self.a[by, bx + 1 : bx + 1 + n] if (by > 0 or self.top_avail) else None
        left = self.a[by + 1 : by + 1 + n, bx] if (bx > 0 or self.left_avail) else None
        return top, left

    def put(self, by, bx, block):
        self.a[by + 1 : by + 1 + block.shape[0], bx + 1 : bx + 1 + block.shape[1]] = block

    @property
    def recon(self):
        return self.a[1:, 1:]

    def copy(self):
        c = object.__new__(Canvas)
        c.a = self.a.copy()
        c.top_avail = self.top_avail
        c.left_avail = self.left_avail
        return c


@dataclass
class InterContext:
    """Reference picture and the absolute luma origin of the region."""

    ref: object
    x0: int
    y0: int
    search_range: int = 16


@dataclass
class RegionResult:
    bank: object
    log: object
    canvases: tuple
    sse: int
    bits: float

    def cost(self, lam):
        return self.sse + lam * self.bits


def _unit_blocks(py, px):
    """(plane, by, bx) for the six 8x8 blocks of the unit at luma (py, px)."""
    out = [(0, py + dy, px + dx) for dy in (0, B) for dx in (0, B)]
    out += [(1, py // 2, px // 2), (2, py // 2, px // 2)]
    return out


def _intra_unit(orig, canv, py, px, qs, lam, bank, log, maxval, trace):
    sse, bits = 0, 0.0
    bitdepth = int(maxval).bit_length()
    for plane, by, bx in _unit_blocks(py, px):
        src = orig[plane][by : by + B, bx : bx + B]
        top, left = canv[plane].context(by, bx)
        best, best_j, costs = None, None, []
        for mode in MODES:
            pred = intra_predict(mode, top, left, B, bitdepth)
            t = syntax.trial_block(src, pred, qs, bank, plane > 0, mode, maxval, lam)
            j = t.sse + lam * t.bits
            costs.append(j)
            if best is None or j < best_j:
                best, best_j = t, j
        if trace is not None:
            trace.append({"kind": "intra", "plane": plane, "costs": costs, "chosen": costs.index(best_j)})
        bank = best.bank
        canv[plane].put(by, bx, best.recon)
        log.add(best.ctx, best.sym)
        sse += best.sse
        bits += best.bits
    return bank, sse, bits


def _inter_preds(inter, mv, py, px):
    ref = inter.ref
    preds = {}
    for plane, by, bx in _unit_blocks(py, px):
        if plane == 0:
            ay, ax = inter.y0 + by + mv.dy, inter.x0 + bx + mv.dx
        else:
            ay, ax = inter.y0 // 2 + by + (mv.dy >> 1), inter.x0 // 2 + bx + (mv.dx >> 1)
        src = ref.plane(plane)
        if ay < 0 or ax < 0 or ay + B > src.shape[0] or ax + B > src.shape[1]:
            raise ValueError("motion vector points outside the reference picture")
        preds[(plane, by, bx)] = src[ay : ay + B, ax : ax + B]
    return preds


def _inter_unit(orig, canv, py, px, qs, lam, bank, log, maxval, inter):
    cur = orig[0][py : py + PU, px : px + PU]
    dx, dy, _ = full_search(cur, inter.ref.y, inter.x0 + px, inter.y0 + py, inter.search_range)
    mv = MotionVector(dx, dy)
    ctx, sym = syntax.mv_symbols(mv)
    ctx, sym = [syntax.INTER_FLAG] + ctx, [1] + sym
    bits = bank.measure(ctx, sym)
    log.add(ctx, sym)
    sse = 0
    preds = _inter_preds(inter, mv, py, px)
    for (plane, by, bx), pred in preds.items():
        t = syntax.trial_block(orig[plane][by : by + B, bx : bx + B], pred, qs, bank, plane > 0, -1, maxval, lam)
        bank = t.bank
        canv[plane].put(by, bx, t.recon)
        log.add(t.ctx, t.sym)
        sse += t.sse
        bits += t.bits
    return bank, sse, bits, mv


def encode_region(orig, canvases, qp, lam, bank, inter=None, maxval=255, trace=None):
    """RD-code a region. ``orig`` and ``canvases`` are (Y, U, V) triples.

    ``bank`` is not modified; the returned :class:`RegionResult` carries the
    updated model set, the emitted symbols and the filled canvases.
    """
    h, w = orig[0].shape
    if h % PU or w % PU:
        raise ValueError(f"region {w}x{h} is not a multiple of {PU}")
    qs = qstep(qp)
    log = syntax.SymbolLog()
    canv = list(canvases)
    total_sse, total_bits = 0, 0.0
    for py in range(0, h, PU):
        for px in range(0, w, PU):
            if inter is None:
                bank, sse, bits = _intra_unit(orig, canv, py, px, qs, lam, bank, log, maxval, trace)
                total_sse += sse
                total_bits += bits
                continue
            # inter candidate
            c_inter = [c.copy() for c in canv]
            l_inter = syntax.SymbolLog()
            b_inter, s_inter, r_inter, mv = _inter_unit(
                orig, c_inter, py, px, qs, lam, bank.clone(), l_inter, maxval, inter
            )
            # intra candidate
            c_intra = [c.copy() for c in canv]
            l_intra = syntax.SymbolLog()
            b_intra = bank.clone()
            r_flag = b_intra.measure([syntax.INTER_FLAG], [0])
            l_intra.put(syntax.INTER_FLAG, 0)
            b_intra, s_intra, r_intra = _intra_unit(
                orig, c_intra, py, px, qs, lam, b_intra, l_intra, maxval, trace
            )
            r_intra += r_flag
            j_inter = s_inter + lam * r_inter
            j_intra = s_intra + lam * r_intra
            if trace is not None:
                trace.append({"kind": "inter", "costs": [j_intra, j_inter], "chosen": int(j_inter < j_intra), "mv": mv})
            if j_inter < j_intra:
                bank, canv, sse, bits, chosen_log = b_inter, c_inter, s_inter, r_inter, l_inter
            else:
                bank, canv, sse, bits, chosen_log = b_intra, c_intra, s_intra, r_intra, l_intra
            log.extend(chosen_log)
            total_sse += sse
            total_bits += bits
    return RegionResult(bank, log, tuple(canv), total_sse, total_bits)


def decode_region(decoder, canvases, qp, inter=None, maxval=255):
    """Mirror of :func:`encode_region`; fills ``canvases`` in place."""
    h, w = canvases[0].recon.shape
    qs = qstep(qp)
    bitdepth = int(maxval).bit_length()
    for py in range(0, h, PU):
        for px in range(0, w, PU):
            is_inter = inter is not None and decoder.symbol(syntax.INTER_FLAG) == 1
            if is_inter:
                comps = []
                for _ in range(2):
                    mag = decoder.symbol(syntax.MV_MAG)
                    if mag and decoder.symbol(syntax.MV_SIGN):
                        mag = -mag
                    comps.append(mag)
                preds = _inter_preds(inter, MotionVector(*comps), py, px)
                for (plane, by, bx), pred in preds.items():
                    levels = syntax.decode_levels(decoder, plane > 0)
                    canvases[plane].put(by, bx, syntax.reconstruct(levels, pred, qs, maxval))
                continue
            for plane, by, bx in _unit_blocks(py, px):
                mode = decoder.symbol(syntax.INTRA_MODE)
                top, left = canvases[plane].context(by, bx)
                pred = intra_predict(mode, top, left, B, bitdepth)
                levels = syntax.decode_levels(decoder, plane > 0)
                canvases[plane].put(by, bx, syntax.reconstruct(levels, pred, qs, maxval))
    return canvases
