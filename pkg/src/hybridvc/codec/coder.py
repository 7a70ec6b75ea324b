"""Frame and sequence coding loop plus the container bitstream.

Per frame, CTUs are coded in raster order (optionally choosing a resolution per
CTU in intra frames), then the picture is deblocked, the CNN filter is applied
under per-CTU flags, and down-sampled CTUs are up-sampled once more. The
reconstruction that comes out is what the decoder produces and what later
frames predict from.
"""
import struct
from dataclasses import dataclass, field

import numpy as np

from .. import barc as barc_mod
from .. import ilf as ilf_mod
from ..entropy import ContextBank, EntropyError, RangeDecoder
from ..metrics import psnr
from . import syntax
from .deblock import deblock
from .frame import Frame
from .region import Canvas, InterContext, decode_region, encode_region
from .transform import check_qp, lambda_from_qp

MAGIC = b"DLV1"
VERSION = 1
TOOL_DEBLOCK, TOOL_ILF, TOOL_BARC = 1, 2, 4
FRAME_TYPES = {"I": 0, "P": 1}


class BitstreamError(ValueError):
    pass


@dataclass
class CodecConfig:
    qp: int = 32
    ctu: int = 64
    lam: float = None
    gop: str = "ai"  # "ai" (all intra) or "ipp"
    deblock: bool = True
    cnn_ilf: bool = False
    cnn_barc: bool = False
    search_range: int = 16
    bitdepth: int = 8
    ilf_models: object = field(default=None, repr=False)
    barc_models: object = field(default=None, repr=False)

    def __post_init__(self):
        check_qp(self.qp)
        if self.ctu < 16 or self.ctu & (self.ctu - 1):
            raise ValueError("CTU size must be a power of two >= 16")
        if self.lam is not None and self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.gop not in ("ai", "ipp"):
            raise ValueError("gop must be 'ai' or 'ipp'")
        if not 0 <= self.search_range <= syntax.MV_MAX:
            raise ValueError(f"search range must be in [0, {syntax.MV_MAX}]")
        if self.bitdepth != 8:
            raise ValueError("only 8-bit video is supported")

    @property
    def lmbda(self):
        return self.lam if self.lam is not None else lambda_from_qp(self.qp)

    @property
    def tool_flags(self):
        return (TOOL_DEBLOCK if self.deblock else 0) | (TOOL_ILF if self.cnn_ilf else 0) | (TOOL_BARC if self.cnn_barc else 0)

    def replace(self, **kw):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return CodecConfig(**d)


def check_dims(width, height):
    if width % 16 or height % 16 or width <= 0 or height <= 0:
        raise ValueError(f"frame size {width}x{height} must be a positive multiple of 16")


def _ctus(frame, ctu):
    return ilf_mod.ctu_grid(frame.width, frame.height, ctu)


def _regions(planes, x0, y0, w, h):
    return (
        planes[0][y0 : y0 + h, x0 : x0 + w],
        planes[1][y0 // 2 : (y0 + h) // 2, x0 // 2 : (x0 + w) // 2],
        planes[2][y0 // 2 : (y0 + h) // 2, x0 // 2 : (x0 + w) // 2],
    )


def _write_region(planes, x0, y0, parts):
    h, w = parts[0].shape
    planes[0][y0 : y0 + h, x0 : x0 + w] = parts[0]
    planes[1][y0 // 2 : (y0 + h) // 2, x0 // 2 : (x0 + w) // 2] = parts[1]
    planes[2][y0 // 2 : (y0 + h) // 2, x0 // 2 : (x0 + w) // 2] = parts[2]


def _full_canvases(planes, x0, y0, w, h):
    return (
        Canvas.from_plane(planes[0], x0, y0, w, h),
        Canvas.from_plane(planes[1], x0 // 2, y0 // 2, w // 2, h // 2),
        Canvas.from_plane(planes[2], x0 // 2, y0 // 2, w // 2, h // 2),
    )


@dataclass
class _CtuPass:
    planes: list
    log: object
    bank: object
    sse: int = 0
    bits: float = 0.0
    barc_records: list = field(default_factory=list)
    barc_modes: list = field(default_factory=list)

    def cost(self, lam):
        return self.sse + lam * self.bits


def _code_ctus(frame, config, ref, use_barc, trace):
    lam = config.lmbda
    maxval = frame.maxval
    orig = frame.planes
    out = _CtuPass([np.zeros_like(p) for p in orig], syntax.SymbolLog(), syntax.new_bank())
    for x0, y0, w, h in _ctus(frame, config.ctu):
        region = _regions(orig, x0, y0, w, h)
        if use_barc and barc_mod.eligible(w, h):
            res = barc_mod.barc_encode_ctu(
                region, out.planes, x0, y0, config.qp, lam, out.bank, config.barc_models, maxval, trace
            )
            if trace is not None:
                trace.append({"kind": "barc", "ctu": (x0, y0), "mode": res.mode, "candidates": res.candidates})
            out.bank = res.bank
            out.log.extend(res.log)
            out.sse += res.cost.d
            out.bits += res.cost.r
            _write_region(out.planes, x0, y0, res.recon)
            out.barc_modes.append(res.mode)
            if res.mode.downsampled:
                out.barc_records.append(barc_mod.CtuRecord(x0, y0, res.mode.sub, res.half))
            continue
        inter = None if ref is None else InterContext(ref, x0, y0, config.search_range)
        res = encode_region(region, _full_canvases(out.planes, x0, y0, w, h), config.qp, lam, out.bank, inter, maxval, trace)
        out.bank = res.bank
        out.log.extend(res.log)
        out.sse += res.sse
        out.bits += res.bits
        _write_region(out.planes, x0, y0, tuple(c.recon for c in res.canvases))
        out.barc_modes.append(None)
    return out


def _plane_psnrs(a, b):
    return tuple(psnr(x, y, a.maxval) for x, y in zip(a.planes, b.planes))


def _ilf_flags_symbols(flags):
    ctx, sym = [], []
    for fy, fc in flags:
        ctx += [syntax.ILF_LUMA, syntax.ILF_CHROMA]
        sym += [int(fy), int(fc)]
    return ctx, sym


def encode_frame(frame, config, refs=None, trace=None, ftype=None):
    """Code one frame. Returns ``(payload, recon, stats)``.

    ``refs`` is a sequence of reconstructed frames; P frames predict from
    ``refs[-1]``. ``ftype`` defaults to ``"P"`` when refs are given under an
    IPPP configuration and ``"I"`` otherwise. ``trace``, if a list, collects
    every mode decision with its candidate costs.
    """
    check_dims(frame.width, frame.height)
    if ftype is None:
        ftype = "P" if (refs and config.gop == "ipp") else "I"
    if ftype == "P" and not refs:
        raise ValueError("P frame needs a reference")
    ref = refs[-1] if ftype == "P" else None
    if config.cnn_ilf and config.ilf_models is None:
        raise ilf_mod.ModelNotFound("model not found: CNN-ILF enabled without models")
    use_barc = config.cnn_barc and ftype == "I"

    frame_tools = config.tool_flags
    coded = _code_ctus(frame, config, ref, use_barc, trace)
    if use_barc:
        plain = _code_ctus(frame, config, ref, False, None)
        if plain.cost(config.lmbda) <= coded.cost(config.lmbda):
            coded = plain
            frame_tools &= ~TOOL_BARC
            use_barc = False

    stats = {"type": ftype, "rd_cost": coded.cost(config.lmbda), "sse_coded": coded.sse, "bits_ctu": coded.bits}
    recon = Frame(*coded.planes, frame.bitdepth, ftype)
    stats["psnr_coded"] = _plane_psnrs(frame, recon)
    if config.deblock:
        recon = deblock(recon, config.qp)
        stats["psnr_deblocked"] = _plane_psnrs(frame, recon)
    log = coded.log
    if config.cnn_ilf:
        n = len(_ctus(frame, config.ctu))
        filtered = ilf_mod.apply_ilf(recon, config.ilf_models, config.qp, np.ones((n, 2), bool), config.ctu)
        flags = ilf_mod.decide_ctu_flags(frame, recon, filtered, config.ctu)
        pre = recon
        recon = pre.copy()
        for (x0, y0, w, h), (fy, fc) in zip(_ctus(frame, config.ctu), flags):
            if fy:
                recon.y[y0 : y0 + h, x0 : x0 + w] = filtered.y[y0 : y0 + h, x0 : x0 + w]
            if fc:
                cs = np.s_[y0 // 2 : (y0 + h) // 2, x0 // 2 : (x0 + w) // 2]
                recon.u[cs] = filtered.u[cs]
                recon.v[cs] = filtered.v[cs]
        log.add(*_ilf_flags_symbols(flags))
        stats["ilf_flags"] = flags
        stats["psnr_filtered"] = _plane_psnrs(frame, recon)
    if use_barc:
        recon = barc_mod.barc_postprocess_frame(recon, coded.barc_records, config.qp, config.barc_models)
        stats["barc_modes"] = coded.barc_modes
    ctx, sym = log.arrays()
    body = syntax.new_bank().encode(ctx, sym)
    payload = struct.pack("<BB", config.qp, frame_tools) + body
    stats["bits"] = 8 * len(payload)
    stats["psnr"] = _plane_psnrs(frame, recon)
    recon.ftype = ftype
    return payload, recon, stats


def decode_frame(payload, config, refs=None, ftype="I", width=None, height=None, trace=None):
    """Rebuild the encoder's reconstruction from ``payload``.

    ``trace``, if a list, receives the decoded BARC mode of every CTU of an
    I frame coded with BARC.
    """
    if len(payload) < 2:
        raise BitstreamError("frame payload too short")
    qp, tools = struct.unpack_from("<BB", payload)
    if qp != config.qp:
        raise BitstreamError(f"QP mismatch: payload has {qp}, config says {config.qp}")
    if tools & ~config.tool_flags:
        raise BitstreamError("payload uses tools that the configuration disables")
    if ftype == "P" and not refs:
        raise BitstreamError("P frame needs a reference")
    if width is None or height is None:
        if not refs:
            raise BitstreamError("frame size unknown: pass width/height or a reference")
        width, height = refs[-1].width, refs[-1].height
    check_dims(width, height)
    ref = refs[-1] if ftype == "P" else None
    use_barc = bool(tools & TOOL_BARC) and ftype == "I"
    if (tools & TOOL_ILF) and config.ilf_models is None:
        raise ilf_mod.ModelNotFound("model not found: CNN-ILF enabled without models")
    maxval = (1 << config.bitdepth) - 1
    planes = [
        np.zeros((height, width), np.int32),
        np.zeros((height // 2, width // 2), np.int32),
        np.zeros((height // 2, width // 2), np.int32),
    ]
    shape = Frame(*planes, config.bitdepth)
    dec = RangeDecoder(payload[2:], syntax.new_bank())
    records = []
    try:
        for x0, y0, w, h in _ctus(shape, config.ctu):
            down = use_barc and barc_mod.eligible(w, h) and dec.symbol(syntax.BARC_MODE) == barc_mod.DOWNSAMPLE
            if down:
                sub = dec.symbol(syntax.BARC_SUB)
                if trace is not None:
                    trace.append(barc_mod.BarcMode(barc_mod.DOWNSAMPLE, sub))
                canv = barc_mod.half_canvases(planes, x0, y0, w, h)
                decode_region(dec, canv, qp, None, maxval)
                half = tuple(c.recon.astype(np.int32) for c in canv)
                _write_region(planes, x0, y0, barc_mod.upsample_half(half, sub, qp, config.barc_models, maxval))
                records.append(barc_mod.CtuRecord(x0, y0, sub, half))
                continue
            if use_barc and trace is not None:
                trace.append(barc_mod.BarcMode() if barc_mod.eligible(w, h) else None)
            inter = None if ref is None else InterContext(ref, x0, y0, config.search_range)
            canv = _full_canvases(planes, x0, y0, w, h)
            decode_region(dec, canv, qp, inter, maxval)
            _write_region(planes, x0, y0, tuple(c.recon for c in canv))
        recon = Frame(*planes, config.bitdepth, ftype)
        if tools & TOOL_DEBLOCK:
            recon = deblock(recon, qp)
        if tools & TOOL_ILF:
            n = len(_ctus(recon, config.ctu))
            flags = dec.run([syntax.ILF_LUMA, syntax.ILF_CHROMA] * n).reshape(n, 2).astype(bool)
            recon = ilf_mod.apply_ilf(recon, config.ilf_models, qp, flags, config.ctu)
    except EntropyError as exc:
        raise BitstreamError(f"corrupt frame payload: {exc}") from None
    if use_barc:
        recon = barc_mod.barc_postprocess_frame(recon, records, qp, config.barc_models)
    recon.ftype = ftype
    return recon


# -- sequences and the container -------------------------------------------------------


@dataclass
class SequenceResult:
    bitstream: bytes
    recon: list
    stats: list


def encode_sequence(frames, config):
    frames = list(frames)
    if not frames:
        raise ValueError("no frames to encode")
    f0 = frames[0]
    check_dims(f0.width, f0.height)
    header = MAGIC + struct.pack(
        "<BIIBBBBI", VERSION, f0.width, f0.height, f0.bitdepth, config.qp,
        config.ctu.bit_length() - 1, config.tool_flags, len(frames),
    )
    parts = [header]
    recon, stats = [], []
    for i, f in enumerate(frames):
        if (f.width, f.height) != (f0.width, f0.height):
            raise ValueError("all frames must share one size")
        ftype = "P" if (config.gop == "ipp" and i > 0) else "I"
        payload, rec, st = encode_frame(f, config, recon[-1:] if ftype == "P" else None, ftype=ftype)
        parts.append(struct.pack("<BI", FRAME_TYPES[ftype], len(payload)))
        parts.append(payload)
        recon.append(rec)
        stats.append(st)
    return SequenceResult(b"".join(parts), recon, stats)


@dataclass
class StreamHeader:
    width: int
    height: int
    bitdepth: int
    qp: int
    ctu: int
    tools: int
    frames: int


HEADER_FMT = "<BIIBBBBI"
HEADER_SIZE = 4 + struct.calcsize(HEADER_FMT)


def parse_header(data):
    if len(data) < HEADER_SIZE:
        raise BitstreamError("truncated bitstream header")
    if data[:4] != MAGIC:
        raise BitstreamError("bad magic")
    version, w, h, bd, qp, ctu_log2, tools, n = struct.unpack_from(HEADER_FMT, data, 4)
    if version != VERSION:
        raise BitstreamError(f"unsupported bitstream version {version}")
    return StreamHeader(w, h, bd, qp, 1 << ctu_log2, tools, n)


def decode_sequence(data, ilf_models=None, barc_models=None):
    """Decode a whole container; returns ``(header, frames)``."""
    data = bytes(data)
    hdr = parse_header(data)
    try:
        config = CodecConfig(
            qp=hdr.qp, ctu=hdr.ctu, bitdepth=hdr.bitdepth,
            deblock=bool(hdr.tools & TOOL_DEBLOCK), cnn_ilf=bool(hdr.tools & TOOL_ILF),
            cnn_barc=bool(hdr.tools & TOOL_BARC), ilf_models=ilf_models, barc_models=barc_models,
        )
    except ValueError as exc:
        raise BitstreamError(f"invalid header: {exc}") from None
    pos = HEADER_SIZE
    frames = []
    types = {v: k for k, v in FRAME_TYPES.items()}
    for _ in range(hdr.frames):
        if pos + 5 > len(data):
            raise BitstreamError("truncated frame header")
        code, length = struct.unpack_from("<BI", data, pos)
        pos += 5
        if code not in types:
            raise BitstreamError(f"unknown frame type {code}")
        if pos + length > len(data):
            raise BitstreamError("truncated frame payload")
        payload = data[pos : pos + length]
        pos += length
        frames.append(decode_frame(payload, config, frames[-1:], types[code], hdr.width, hdr.height))
    if pos != len(data):
        raise BitstreamError("trailing bytes after last frame")
    return hdr, frames
