"""8x8 orthonormal DCT-II, uniform quantisation and the QP -> lambda map."""
import numpy as np

from .._accel import kernel

N = 8


def dct_matrix(n=N):
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    return m


DCT = dct_matrix()


def _zigzag(n=N):
    order = sorted(((i, j) for i in range(n) for j in range(n)), key=lambda p: (p[0] + p[1], p[0] if (p[0] + p[1]) % 2 else p[1]))
    return np.array([i * n + j for i, j in order], dtype=np.int64)


ZIGZAG = _zigzag()


@kernel
def _dct8(x, c, out):
    tmp = np.zeros((8, 8))
    for i in range(8):
        for j in range(8):
            s = 0.0
            for k in range(8):
                s += c[i, k] * x[k, j]
            tmp[i, j] = s
    for i in range(8):
        for j in range(8):
            s = 0.0
            for k in range(8):
                s += tmp[i, k] * c[j, k]
            out[i, j] = s


@kernel
def _idct8(x, c, out):
    tmp = np.zeros((8, 8))
    for i in range(8):
        for j in range(8):
            s = 0.0
            for k in range(8):
                s += c[k, i] * x[k, j]
            tmp[i, j] = s
    for i in range(8):
        for j in range(8):
            s = 0.0
            for k in range(8):
                s += tmp[i, k] * c[k, j]
            out[i, j] = s


def dct2d(block):
    block = np.ascontiguousarray(block, dtype=np.float64)
    if block.shape != (N, N):
        raise ValueError(f"dct2d expects an 8x8 block, got {block.shape}")
    out = np.empty((N, N))
    _dct8(block, DCT, out)
    return out


def idct2d(coeffs):
    coeffs = np.ascontiguousarray(coeffs, dtype=np.float64)
    if coeffs.shape != (N, N):
        raise ValueError(f"idct2d expects an 8x8 block, got {coeffs.shape}")
    out = np.empty((N, N))
    _idct8(coeffs, DCT, out)
    return out


def qstep(qp):
    return 2.0 ** ((qp - 4) / 6.0)


def check_qp(qp):
    if not 0 <= qp <= 51:
        raise ValueError(f"QP must be in [0, 51], got {qp}")


def quantize(coeffs, qp):
    """Round-half-away-from-zero of ``coeffs / qstep(qp)``."""
    check_qp(qp)
    c = np.asarray(coeffs, dtype=np.float64) / qstep(qp)
    return (np.sign(c) * np.floor(np.abs(c) + 0.5)).astype(np.int64)


def dequantize(levels, qp):
    check_qp(qp)
    return np.asarray(levels, dtype=np.float64) * qstep(qp)


def lambda_from_qp(qp):
    return 0.85 * 2.0 ** ((qp - 12) / 3.0)
