"""Quality and rate metrics: MSE, PSNR, raw-rate arithmetic and BD-rate."""
import csv
import io
from dataclasses import dataclass

import numpy as np

PSNR_CAP = 100.0
CSV_HEADER = ("qp", "bits", "bpp", "psnr_y", "psnr_u", "psnr_v")


def mse(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))


def psnr_from_mse(err, maxval=255):
    if err <= 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(maxval * maxval / err)))


def psnr(a, b, maxval=255):
    """Peak signal-to-noise ratio in dB, capped at 100 dB for identical inputs."""
    return psnr_from_mse(mse(a, b), maxval)


def video_psnr(originals, recons):
    """Per-plane PSNR averaged over frames: ``(Y, U, V)``."""
    originals, recons = list(originals), list(recons)
    if len(originals) != len(recons) or not originals:
        raise ValueError("need equally many (>= 1) original and reconstructed frames")
    per = np.array([[psnr(x, y, o.maxval) for x, y in zip(o.planes, r.planes)] for o, r in zip(originals, recons)])
    return tuple(float(v) for v in per.mean(axis=0))


def uncompressed_rate(width, height, bitdepth, fps, fmt="YUV420"):
    """Raw bit rate in bits per second."""
    if fmt != "YUV420":
        raise ValueError(f"unsupported format {fmt!r}")
    # luma plus two quarter-size chroma planes
    twice = width * height * bitdepth * 3 * fps
    return twice // 2 if twice % 2 == 0 else twice / 2


class CurveError(ValueError):
    pass


@dataclass(frozen=True)
class RdPoint:
    rate: float
    psnr: float


class RdCurve:
    """At least four RD points, strictly increasing in both rate and PSNR."""

    def __init__(self, points):
        pts = sorted((RdPoint(float(r), float(p)) for r, p in points), key=lambda q: q.rate)
        if len(pts) < 4:
            raise CurveError(f"need ≥ 4 points, got {len(pts)}")
        for p in pts:
            if not p.rate > 0 or not np.isfinite(p.rate):
                raise CurveError(f"rate must be positive and finite, got {p.rate}")
            if not np.isfinite(p.psnr):
                raise CurveError("PSNR must be finite")
        for a, b in zip(pts, pts[1:]):
            if not (b.rate > a.rate and b.psnr > a.psnr):
                raise CurveError("PSNR must increase strictly with rate")
        self.points = tuple(pts)

    @property
    def rates(self):
        return np.array([p.rate for p in self.points])

    @property
    def psnrs(self):
        return np.array([p.psnr for p in self.points])

    def __len__(self):
        return len(self.points)


def _as_curve(c):
    return c if isinstance(c, RdCurve) else RdCurve(c)


def bd_rate(anchor, test):
    """Average rate difference of ``test`` against ``anchor`` at equal quality, in percent.

    Cubic fits of log10(rate) over PSNR are integrated across the common PSNR
    interval; negative values mean the test curve needs fewer bits.
    """
    anchor, test = _as_curve(anchor), _as_curve(test)
    lo = max(anchor.psnrs.min(), test.psnrs.min())
    hi = min(anchor.psnrs.max(), test.psnrs.max())
    if not hi > lo:
        raise CurveError("PSNR ranges do not overlap")
    # fit on a [-1, 1] quality axis against a shared reference rate: better
    # conditioned, and a common rate scale cancels before the fit
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    ref = np.exp(np.mean(np.log(np.concatenate([anchor.rates, test.rates]))))
    ints = []
    for c in (anchor, test):
        poly = np.polyint(np.polyfit((c.psnrs - mid) / half, np.log10(c.rates / ref), 3))
        ints.append(np.polyval(poly, 1.0) - np.polyval(poly, -1.0))
    delta = (ints[1] - ints[0]) / 2.0
    return float((10.0 ** delta - 1.0) * 100.0)


# -- RD sweeps and their CSV files -------------------------------------------------------


@dataclass
class SweepRow:
    qp: int
    bits: int
    bpp: float
    psnr_y: float
    psnr_u: float
    psnr_v: float


def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.qp, r.bits, f"{r.bpp:.6f}", f"{r.psnr_y:.4f}", f"{r.psnr_u:.4f}", f"{r.psnr_v:.4f}"])
    return buf.getvalue()


def rows_from_csv(text):
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise CurveError("malformed CSV: empty file") from None
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise CurveError(f"malformed CSV: header must be {','.join(CSV_HEADER)}")
    rows = []
    for n, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(CSV_HEADER):
            raise CurveError(f"malformed CSV: line {n} has {len(rec)} fields")
        try:
            rows.append(SweepRow(int(rec[0]), int(rec[1]), *(float(x) for x in rec[2:])))
        except ValueError:
            raise CurveError(f"malformed CSV: bad number on line {n}") from None
    return rows


def curves_from_rows(rows, strict=True):
    """``(Y, U, V)`` curves from sweep rows (rate in bits per pixel).

    With ``strict=False`` the raw point lists are returned, to be validated
    one channel at a time by :func:`bd_rate`.
    """
    curves = tuple([(r.bpp, getattr(r, f"psnr_{c}")) for r in rows] for c in "yuv")
    return tuple(RdCurve(c) for c in curves) if strict else curves


def bd_rate_yuv(anchor_rows, test_rows):
    return tuple(bd_rate(a, t) for a, t in zip(curves_from_rows(anchor_rows), curves_from_rows(test_rows)))


def rd_sweep(frames, config, qps=(22, 27, 32, 37)):
    """Encode and decode ``frames`` at every QP; returns ``(rows, csv_text)``.

    Decoder output is checked against the encoder's reconstruction.
    """
    from .codec.coder import decode_sequence, encode_sequence

    qps = list(qps)
    if len(set(qps)) != len(qps) or len(qps) < 4:
        raise ValueError("need at least 4 distinct QPs")
    frames = list(frames)
    pixels = frames[0].width * frames[0].height * len(frames)
    rows = []
    for qp in qps:
        cfg = config.replace(qp=qp)
        res = encode_sequence(frames, cfg)
        _, dec = decode_sequence(res.bitstream, cfg.ilf_models, cfg.barc_models)
        if not all(a.same_samples(b) for a, b in zip(dec, res.recon)):
            raise RuntimeError(f"decoder mismatch at QP {qp}")
        py, pu, pv = video_psnr(frames, dec)
        bits = 8 * len(res.bitstream)
        rows.append(SweepRow(qp, bits, bits / pixels, py, pu, pv))
    return rows, rows_to_csv(rows)
