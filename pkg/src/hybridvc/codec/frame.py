"""YUV420 frames and raw/PGM file I/O."""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PLANES = ("y", "u", "v")


@dataclass(eq=False)
class Frame:
    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    bitdepth: int = 8
    ftype: str = "I"

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.int32)
        self.u = np.asarray(self.u, dtype=np.int32)
        self.v = np.asarray(self.v, dtype=np.int32)
        h, w = self.y.shape
        if h % 2 or w % 2:
            raise ValueError(f"frame dimensions must be even, got {w}x{h}")
        if self.u.shape != (h // 2, w // 2) or self.v.shape != (h // 2, w // 2):
            raise ValueError("chroma planes must be half the luma size in each dimension")
        hi = self.maxval
        for p in self.planes:
            if p.size and (p.min() < 0 or p.max() > hi):
                raise ValueError(f"samples outside [0, {hi}]")

    @property
    def width(self):
        return self.y.shape[1]

    @property
    def height(self):
        return self.y.shape[0]

    @property
    def maxval(self):
        return (1 << self.bitdepth) - 1

    @property
    def planes(self):
        return (self.y, self.u, self.v)

    def plane(self, idx):
        return self.planes[idx]

    def copy(self, ftype=None):
        return Frame(self.y.copy(), self.u.copy(), self.v.copy(), self.bitdepth, ftype or self.ftype)

    def same_samples(self, other):
        return all(np.array_equal(a, b) for a, b in zip(self.planes, other.planes))

    @classmethod
    def from_luma(cls, y, bitdepth=8):
        """Grey frame: chroma planes set to mid-grey."""
        y = np.asarray(y, dtype=np.int32)
        mid = 1 << (bitdepth - 1)
        c = np.full((y.shape[0] // 2, y.shape[1] // 2), mid, dtype=np.int32)
        return cls(y, c, c.copy(), bitdepth)


@dataclass
class Block:
    plane: int
    x: int
    y: int
    samples: np.ndarray = field(repr=False)

    @property
    def w(self):
        return self.samples.shape[1]

    @property
    def h(self):
        return self.samples.shape[0]


def frame_bytes(width, height):
    return width * height * 3 // 2


def read_yuv(path, width, height, frames=None):
    """Read planar 8-bit YUV420 frames (no header)."""
    data = np.fromfile(path, dtype=np.uint8)
    size = frame_bytes(width, height)
    if data.size % size:
        raise ValueError(f"{path}: size {data.size} is not a multiple of the frame size {size}")
    n = data.size // size
    if frames is not None:
        if frames > n:
            raise ValueError(f"{path}: asked for {frames} frames, file has {n}")
        n = frames
    out = []
    cw, ch = width // 2, height // 2
    for i in range(n):
        buf = data[i * size : (i + 1) * size]
        y = buf[: width * height].reshape(height, width)
        u = buf[width * height : width * height + cw * ch].reshape(ch, cw)
        v = buf[width * height + cw * ch :].reshape(ch, cw)
        out.append(Frame(y, u, v))
    return out


def write_yuv(path, frames):
    with open(path, "wb") as fh:
        for f in frames:
            for p in f.planes:
                fh.write(p.astype(np.uint8).tobytes())


def read_pgm(path):
    """Binary (P5) 8-bit PGM reader."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    pos += 1
    pix = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return pix.reshape(h, w).astype(np.int32)


def write_pgm(path, img):
    img = np.asarray(img)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(np.clip(img, 0, 255).astype(np.uint8).tobytes())
