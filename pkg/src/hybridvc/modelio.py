"""Binary model files.

Layout (little-endian): ``b"DLNN"``, version u32 = 1, layer count u32, then per
layer: kind u8 (0 conv, 1 tconv, 2 relu, 3 add), stride u8, pad u8, skip source
i32 (-1 if none); conv kinds follow with 4 x u32 kernel dims, the kernel as f32
and ``outC`` f32 biases. For add layers the pad byte carries the skip resampler
(0 identity, 1 bicubic 2x down, 2 bicubic 2x up); add layers have no padding.
"""
import struct

import numpy as np

from .nn import ADD, CONV, KINDS, Layer, Network

MAGIC = b"DLNN"
VERSION = 1
MAX_DIM = 1 << 16
_KIND_CODE = {k: i for i, k in enumerate(KINDS)}


class ModelFormatError(ValueError):
    pass


def to_bytes(net):
    out = [MAGIC, struct.pack("<II", VERSION, len(net.layers))]
    for ly in net.layers:
        pad = ly.resample if ly.kind == ADD else ly.pad
        out.append(struct.pack("<BBBi", _KIND_CODE[ly.kind], ly.stride, pad, ly.skip))
        if ly.params:
            out.append(struct.pack("<4I", *ly.weight.shape))
            out.append(ly.weight.astype("<f4").tobytes())
            out.append(ly.bias.astype("<f4").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ModelFormatError("truncated model file")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(data, name="net"):
    r = _Reader(bytes(data))
    if r.take(4) != MAGIC:
        raise ModelFormatError("bad magic")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    layers = []
    for _ in range(count):
        code, stride, pad, skip = r.unpack("<BBBi")
        if code >= len(KINDS):
            raise ModelFormatError(f"unknown layer kind {code}")
        kind = KINDS[code]
        if kind in (CONV, "tconv"):
            dims = r.unpack("<4I")
            if any(d == 0 or d > MAX_DIM for d in dims) or np.prod(dims, dtype=np.uint64) > 1 << 28:
                raise ModelFormatError(f"kernel dimensions out of range: {dims}")
            n = int(np.prod(dims))
            w = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims).astype(np.float64)
            b = np.frombuffer(r.take(4 * dims[0]), dtype="<f4").astype(np.float64)
            layers.append(Layer(kind, w, b, stride, pad))
        elif kind == ADD:
            layers.append(Layer(kind, stride=stride, skip=skip, resample=pad))
        else:
            layers.append(Layer(kind, stride=stride, pad=pad, skip=skip))
    if r.pos != len(r.data):
        raise ModelFormatError("trailing bytes after last layer")
    return Network(layers, name)


def save_model(net, path):
    with open(path, "wb") as fh:
        fh.write(to_bytes(net))


def load_model(path, name=None):
    from pathlib import Path

    path = Path(path)
    return from_bytes(path.read_bytes(), name or path.stem)
