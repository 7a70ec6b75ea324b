"""Adaptive multi-symbol range coder.

32-bit range, byte-wise renormalisation with carry propagation. Frequency
models start with every count at 1, add ``increment`` after each coded symbol
and halve (never below 1) once the total exceeds ``cap``.

Models live in a :class:`ContextBank` (one row per syntax element) so that the
hot loops can run as compiled kernels over plain arrays.
"""
import math

import numpy as np

from ._accel import kernel

INCREMENT = 32
CAP = 1 << 15

_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF


class EntropyError(ValueError):
    """Raised for out-of-range symbols and damaged payloads."""


class TruncatedPayload(EntropyError):
    pass


# -- kernels -----------------------------------------------------------------


@kernel
def _update(counts, totals, adaptive, ctx, sym, inc, cap):
    if adaptive[ctx] == 0:
        return
    counts[ctx, sym] += inc
    totals[ctx] += inc
    if totals[ctx] > cap:
        t = 0
        for i in range(counts.shape[1]):
            c = counts[ctx, i]
            if c > 0:
                c = c >> 1
                if c < 1:
                    c = 1
                counts[ctx, i] = c
                t += c
        totals[ctx] = t


@kernel
def _measure(ctx_ids, syms, counts, totals, sizes, adaptive, inc, cap):
    bits = 0.0
    for k in range(ctx_ids.shape[0]):
        c = ctx_ids[k]
        s = syms[k]
        if s < 0 or s >= sizes[c]:
            raise ValueError("symbol out of range")
        bits -= math.log2(counts[c, s] / totals[c])
        _update(counts, totals, adaptive, c, s, inc, cap)
    return bits


@kernel
def _shift_low(st, out):
    # st: [low, range, cache, cache_size, pos]
    low = st[0]
    if low < 0xFF000000 or low > 0xFFFFFFFF:
        carry = low >> 32
        b = st[2]
        for _ in range(st[3]):
            out[st[4]] = (b + carry) & 0xFF
            st[4] += 1
            b = 0xFF
        st[3] = 0
        st[2] = (low >> 24) & 0xFF
    st[3] += 1
    st[0] = (low & 0xFFFFFF) << 8


@kernel
def _encode(ctx_ids, syms, counts, totals, sizes, adaptive, inc, cap):
    n = ctx_ids.shape[0]
    out = np.zeros(2 * n + 8, dtype=np.uint8)
    st = np.zeros(5, dtype=np.int64)
    st[1] = 0xFFFFFFFF
    st[3] = 1  # leading dummy byte, always zero, dropped on return
    for k in range(n):
        c = ctx_ids[k]
        s = syms[k]
        if s < 0 or s >= sizes[c]:
            raise ValueError("symbol out of range")
        cum = 0
        for i in range(s):
            cum += counts[c, i]
        r = st[1] // totals[c]
        st[0] += r * cum
        st[1] = r * counts[c, s]
        _update(counts, totals, adaptive, c, s, inc, cap)
        while st[1] < 0x1000000:
            st[1] = st[1] << 8
            _shift_low(st, out)
    # flush: the smallest multiple of 2^24 inside [low, low + range) needs one byte
    st[0] = (st[0] + 0xFFFFFF) & ~np.int64(0xFFFFFF)
    _shift_low(st, out)
    _shift_low(st, out)
    return out[1 : st[4]].copy()


@kernel
def _read_byte(state, buf):
    # state: [range, code, pos, pad_used]
    p = state[2]
    state[2] = p + 1
    if p < buf.shape[0]:
        return np.int64(buf[p])
    state[3] += 1
    if state[3] > 3:
        raise ValueError("truncated payload")
    return np.int64(0)


@kernel
def _decoder_init(state, buf):
    state[0] = 0xFFFFFFFF
    state[1] = 0
    state[2] = 0
    state[3] = 0
    for _ in range(4):
        state[1] = (state[1] << 8) | _read_byte(state, buf)


@kernel
def _decode_symbol(state, buf, counts, totals, sizes, adaptive, inc, cap, c):
    r = state[0] // totals[c]
    v = state[1] // r
    if v >= totals[c]:
        raise ValueError("corrupt payload")
    cum = 0
    s = 0
    n = sizes[c]
    while s < n:
        f = counts[c, s]
        if cum + f > v:
            break
        cum += f
        s += 1
    state[1] -= r * cum
    state[0] = r * counts[c, s]
    while state[0] < 0x1000000:
        state[0] = state[0] << 8
        state[1] = ((state[1] << 8) | _read_byte(state, buf)) & 0xFFFFFFFF
    _update(counts, totals, adaptive, c, s, inc, cap)
    return s


@kernel
def _decode_run(state, buf, counts, totals, sizes, adaptive, inc, cap, ctx_ids, out):
    for k in range(ctx_ids.shape[0]):
        out[k] = _decode_symbol(state, buf, counts, totals, sizes, adaptive, inc, cap, ctx_ids[k])


# -- public objects ----------------------------------------------------------


class ContextBank:
    """A set of frequency models indexed by context id."""

    def __init__(self, sizes, adaptive=None, increment=INCREMENT, cap=CAP):
        sizes = np.asarray(sizes, dtype=np.int64)
        if sizes.ndim != 1 or (sizes < 1).any():
            raise EntropyError("alphabet sizes must be positive")
        if increment < 1 or cap < int(sizes.max()):
            raise EntropyError("increment must be >= 1 and cap >= alphabet size")
        self.sizes = sizes
        self.adaptive = (
            np.ones(len(sizes), dtype=np.int64)
            if adaptive is None
            else np.asarray(adaptive, dtype=np.int64).copy()
        )
        self.increment = int(increment)
        self.cap = int(cap)
        self.counts = np.zeros((len(sizes), int(sizes.max())), dtype=np.int64)
        for i, n in enumerate(sizes):
            self.counts[i, :n] = 1
        self.totals = sizes.copy()

    def clone(self):
        other = object.__new__(ContextBank)
        other.sizes = self.sizes
        other.adaptive = self.adaptive
        other.increment = self.increment
        other.cap = self.cap
        other.counts = self.counts.copy()
        other.totals = self.totals.copy()
        return other

    def state_equal(self, other):
        return np.array_equal(self.counts, other.counts) and np.array_equal(self.totals, other.totals)

    def _args(self):
        return self.counts, self.totals, self.sizes, self.adaptive, self.increment, self.cap

    def measure(self, ctx_ids, syms):
        """Ideal code length in bits; updates the models exactly as coding would."""
        ctx_ids = np.ascontiguousarray(ctx_ids, dtype=np.int64)
        syms = np.ascontiguousarray(syms, dtype=np.int64)
        try:
            return float(_measure(ctx_ids, syms, *self._args()))
        except ValueError as exc:
            raise EntropyError(str(exc)) from None

    def encode(self, ctx_ids, syms):
        ctx_ids = np.ascontiguousarray(ctx_ids, dtype=np.int64)
        syms = np.ascontiguousarray(syms, dtype=np.int64)
        if ctx_ids.shape != syms.shape:
            raise EntropyError("context and symbol arrays differ in length")
        try:
            return _encode(ctx_ids, syms, *self._args()).tobytes()
        except ValueError as exc:
            raise EntropyError(str(exc)) from None


class RangeDecoder:
    """Pulls symbols out of a payload against a :class:`ContextBank`."""

    def __init__(self, payload, bank):
        self.buf = np.frombuffer(bytes(payload), dtype=np.uint8)
        self.bank = bank
        self.state = np.zeros(4, dtype=np.int64)
        self._call(_decoder_init, self.state, self.buf)

    @staticmethod
    def _call(fn, *args):
        try:
            return fn(*args)
        except ValueError as exc:
            msg = str(exc)
            if "truncated" in msg:
                raise TruncatedPayload(msg) from None
            raise EntropyError(msg) from None

    def symbol(self, ctx):
        return int(self._call(_decode_symbol, self.state, self.buf, *self.bank._args(), ctx))

    def run(self, ctx_ids):
        ctx_ids = np.ascontiguousarray(ctx_ids, dtype=np.int64)
        out = np.empty(len(ctx_ids), dtype=np.int64)
        self._call(_decode_run, self.state, self.buf, *self.bank._args(), ctx_ids, out)
        return out

    @property
    def bytes_consumed(self):
        return int(min(self.state[2], len(self.buf)))


class FreqModel:
    """Single adaptive frequency model over ``alphabet_size`` symbols."""

    def __init__(self, alphabet_size, increment=INCREMENT, cap=CAP, adaptive=True):
        self._bank = ContextBank([alphabet_size], [1 if adaptive else 0], increment, cap)

    @property
    def alphabet_size(self):
        return int(self._bank.sizes[0])

    @property
    def counts(self):
        return self._bank.counts[0, : self.alphabet_size]

    @property
    def total(self):
        return int(self._bank.totals[0])

    @property
    def increment(self):
        return self._bank.increment

    @property
    def cap(self):
        return self._bank.cap

    def copy(self):
        m = object.__new__(FreqModel)
        m._bank = self._bank.clone()
        return m

    def __eq__(self, other):
        return isinstance(other, FreqModel) and self._bank.state_equal(other._bank)


def _as_symbols(symbols):
    return np.asarray(symbols, dtype=np.int64).reshape(-1)


def encode(model, symbols):
    """Encode ``symbols`` with ``model`` (updated in place) and return the payload."""
    syms = _as_symbols(symbols)
    return model._bank.encode(np.zeros(len(syms), dtype=np.int64), syms)


def decode(model, payload, count):
    """Decode ``count`` symbols; ``model`` must start in the encoder's initial state."""
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    dec = RangeDecoder(payload, model._bank)
    return dec.run(np.zeros(int(count), dtype=np.int64))


def measure_rate(model, symbols):
    """Bits the adaptive model assigns to ``symbols`` (model updated in place)."""
    syms = _as_symbols(symbols)
    return model._bank.measure(np.zeros(len(syms), dtype=np.int64), syms)
