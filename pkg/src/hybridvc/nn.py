"""Small NCHW neural-network engine: conv, transposed conv, ReLU and skip adds.

Activations are indexed so that ``acts[0]`` is the network input and
``acts[i + 1]`` is the output of layer ``i``. An ``add`` layer ``i`` computes
``acts[i] + R(acts[skip])`` where ``R`` is identity or a fixed bicubic 2x
resampler, which is how the down/up-sampling networks bridge a resolution
change on their global skip.
"""
from dataclasses import dataclass, field

import numpy as np

from . import resample

CONV, TCONV, RELU, ADD = "conv", "tconv", "relu", "add"
KINDS = (CONV, TCONV, RELU, ADD)

RESAMPLE_NONE, RESAMPLE_DOWN, RESAMPLE_UP = 0, 1, 2


class ShapeError(ValueError):
    def __init__(self, layer, expected, actual, what="input"):
        self.layer = layer
        self.expected = expected
        self.actual = actual
        super().__init__(f"layer {layer}: {what} shape mismatch, expected {expected}, got {actual}")


@dataclass(eq=False)
class Layer:
    kind: str
    weight: np.ndarray = None  # (outC, inC, kH, kW) for conv and tconv
    bias: np.ndarray = None
    stride: int = 1
    pad: int = 0
    skip: int = -1
    resample: int = RESAMPLE_NONE

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.stride < 1 or self.pad < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")
        if self.kind in (CONV, TCONV):
            self.weight = np.asarray(self.weight, dtype=np.float64)
            if self.weight.ndim != 4:
                raise ValueError("conv kernel must be rank 4 (outC, inC, kH, kW)")
            if self.bias is None:
                self.bias = np.zeros(self.weight.shape[0])
            self.bias = np.asarray(self.bias, dtype=np.float64)
            if self.bias.shape != (self.weight.shape[0],):
                raise ValueError("bias length must equal output channels")

    @property
    def params(self):
        return self.kind in (CONV, TCONV)

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def in_channels(self):
        return self.weight.shape[1]


@dataclass(eq=False)
class Network:
    layers: list = field(default_factory=list)
    name: str = "net"

    @property
    def skip_links(self):
        return [(ly.skip, i) for i, ly in enumerate(self.layers) if ly.kind == ADD]

    def parameters(self):
        """Ordered ``{name: array}`` view of all trainable tensors (no copies)."""
        out = {}
        for i, ly in enumerate(self.layers):
            if ly.params:
                out[f"{i}.weight"] = ly.weight
                out[f"{i}.bias"] = ly.bias
        return out

    def conv_layers(self):
        return [ly for ly in self.layers if ly.kind == CONV]

    def copy(self):
        layers = [
            Layer(
                ly.kind,
                None if ly.weight is None else ly.weight.copy(),
                None if ly.bias is None else ly.bias.copy(),
                ly.stride,
                ly.pad,
                ly.skip,
                ly.resample,
            )
            for ly in self.layers
        ]
        return Network(layers, self.name)


# -- convolution primitives ---------------------------------------------------


def conv_out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def _im2col(x, k_h, k_w, stride, pad):
    # columns laid out (N, C*kh*kw, Ho*Wo) so every product is a plain gemm
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, c, h, w = x.shape
    ho, wo = (h - k_h) // stride + 1, (w - k_w) // stride + 1
    cols = np.empty((n, c, k_h, k_w, ho, wo))
    for i in range(k_h):
        for j in range(k_w):
            cols[:, :, i, j] = x[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(n, c * k_h * k_w, ho * wo), ho, wo


def _col2im(cols, shape, k_h, k_w, stride, pad, ho, wo):
    n, c, h, w = shape
    cols = cols.reshape(n, c, k_h, k_w, ho, wo)
    xp = np.zeros((n, c, h + 2 * pad + stride, w + 2 * pad + stride))
    for i in range(k_h):
        for j in range(k_w):
            xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    return xp[:, :, pad : pad + h, pad : pad + w]


def _outer_sum(a, b):
    # sum_n a[n] @ b[n].T without materialising the batch product
    out = a[0] @ b[0].T
    for k in range(1, a.shape[0]):
        out += a[k] @ b[k].T
    return out


def conv2d(x, weight, bias, stride=1, pad=0):
    o, _, k_h, k_w = weight.shape
    cols, ho, wo = _im2col(x, k_h, k_w, stride, pad)
    y = np.matmul(weight.reshape(o, -1), cols)
    y += bias[:, None]
    return y.reshape(x.shape[0], o, ho, wo)


def conv2d_backward(x, weight, dy, stride=1, pad=0):
    o, _, k_h, k_w = weight.shape
    cols, ho, wo = _im2col(x, k_h, k_w, stride, pad)
    dy2 = np.ascontiguousarray(dy).reshape(dy.shape[0], o, ho * wo)
    dw = _outer_sum(dy2, cols).reshape(weight.shape)
    db = dy2.sum(axis=(0, 2))
    dcols = np.matmul(weight.reshape(o, -1).T, dy2)
    dx = _col2im(dcols, x.shape, k_h, k_w, stride, pad, ho, wo)
    return dx, dw, db


def tconv_out_size(n, k, stride, pad):
    return (n - 1) * stride - 2 * pad + k


def tconv2d(x, weight, bias, stride=1, pad=0):
    # adjoint of conv2d with kernel weight.swapaxes(0, 1)
    o, c, k_h, k_w = weight.shape
    n, _, h, w = x.shape
    ho, wo = tconv_out_size(h, k_h, stride, pad), tconv_out_size(w, k_w, stride, pad)
    wc = weight.transpose(1, 0, 2, 3).reshape(c, o * k_h * k_w)
    dcols = np.matmul(wc.T, x.reshape(n, c, h * w))
    y = _col2im(dcols, (n, o, ho, wo), k_h, k_w, stride, pad, h, w)
    return y + bias[None, :, None, None]


def tconv2d_backward(x, weight, dy, stride=1, pad=0):
    o, c, k_h, k_w = weight.shape
    n, _, h, w = x.shape
    cols, _, _ = _im2col(dy, k_h, k_w, stride, pad)
    wc = weight.transpose(1, 0, 2, 3).reshape(c, -1)
    dx = np.matmul(wc, cols).reshape(n, c, h, w)
    dwc = _outer_sum(np.ascontiguousarray(x).reshape(n, c, h * w), cols)
    dw = dwc.reshape(c, o, k_h, k_w).transpose(1, 0, 2, 3)
    db = dy.sum(axis=(0, 2, 3))
    return dx, dw, db


def _resample(x, mode):
    if mode == RESAMPLE_DOWN:
        return resample.down2(x)
    if mode == RESAMPLE_UP:
        return resample.up2(x)
    return x


def _resample_adjoint(g, mode):
    if mode == RESAMPLE_DOWN:
        return resample.down2_adjoint(g)
    if mode == RESAMPLE_UP:
        return resample.up2_adjoint(g)
    return g


# -- network passes ------------------------------------------------------------


def _as_tensor(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeError(0, "rank 4 (N, C, H, W)", x.shape)
    return x


def forward_acts(net, x):
    """Forward pass returning every activation (``acts[-1]`` is the output)."""
    acts = [_as_tensor(x)]
    for i, ly in enumerate(net.layers):
        a = acts[-1]
        if ly.kind in (CONV, TCONV):
            if a.shape[1] != ly.in_channels:
                raise ShapeError(i, f"{ly.in_channels} channels", f"{a.shape[1]} channels")
            k_h, k_w = ly.weight.shape[2:]
            if ly.kind == CONV:
                if a.shape[2] + 2 * ly.pad < k_h or a.shape[3] + 2 * ly.pad < k_w:
                    raise ShapeError(i, f"spatial >= {k_h}x{k_w} after padding", a.shape[2:])
                out = conv2d(a, ly.weight, ly.bias, ly.stride, ly.pad)
            else:
                out = tconv2d(a, ly.weight, ly.bias, ly.stride, ly.pad)
        elif ly.kind == RELU:
            out = np.maximum(a, 0.0)
        else:
            if not 0 <= ly.skip <= i:
                raise ShapeError(i, f"skip source in [0, {i}]", ly.skip, what="skip")
            src = _resample(acts[ly.skip], ly.resample)
            if src.shape != a.shape:
                raise ShapeError(i, a.shape, src.shape, what="skip")
            out = a + src
        acts.append(out)
    return acts


def forward(net, x):
    return forward_acts(net, x)[-1]


def backward_acts(net, acts, dy):
    """Back-propagate ``dy`` through recorded activations; returns (grads, dx)."""
    if dy.shape != acts[-1].shape:
        raise ShapeError(len(net.layers), acts[-1].shape, dy.shape, what="output gradient")
    grads = {}
    da = [None] * len(acts)
    da[-1] = np.asarray(dy, dtype=np.float64)

    def acc(idx, g):
        da[idx] = g if da[idx] is None else da[idx] + g

    for i in range(len(net.layers) - 1, -1, -1):
        ly, g, a = net.layers[i], da[i + 1], acts[i]
        da[i + 1] = None
        if g is None:
            g = np.zeros_like(acts[i + 1])
        if ly.kind == CONV:
            dx, dw, db = conv2d_backward(a, ly.weight, g, ly.stride, ly.pad)
        elif ly.kind == TCONV:
            dx, dw, db = tconv2d_backward(a, ly.weight, g, ly.stride, ly.pad)
        elif ly.kind == RELU:
            dx = g * (a > 0)
        else:
            dx = g
            acc(ly.skip, _resample_adjoint(g, ly.resample))
        if ly.params:
            grads[f"{i}.weight"] = dw
            grads[f"{i}.bias"] = db
        acc(i, dx)
    dx = da[0] if da[0] is not None else np.zeros_like(acts[0])
    return grads, dx


def backward(net, x, output_grad):
    """Gradients of a loss whose output gradient is ``output_grad``.

    Returns ``(grads, input_grad)`` where ``grads`` maps parameter names to arrays.
    """
    acts = forward_acts(net, x)
    return backward_acts(net, acts, np.asarray(output_grad, dtype=np.float64))


def sgd_step(net, grads, lr):
    """In-place ``p -= lr * g`` for every parameter; returns ``net``."""
    params = net.parameters()
    if set(grads) != set(params):
        raise KeyError(f"gradient keys {sorted(grads)} do not match parameters {sorted(params)}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
    for name, p in params.items():
        p -= lr * grads[name]
    return net


def _relu_pattern(net, acts):
    parts = [acts[i].reshape(-1) > 0 for i, ly in enumerate(net.layers) if ly.kind == RELU]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)


def grad_check(net, x, h=1e-3, n_samples=40, seed=0, min_h=1e-7):
    """Max relative error between back-prop and central differences.

    The loss is ``0.5 * ||forward(net, x)||^2``. Up to ``n_samples`` entries per
    parameter tensor are checked, plus the same number of input entries. If a
    probe at ``+-h`` flips any ReLU, the difference straddles a kink and the step
    is divided by 10 (down to ``min_h``) for that entry.
    """
    x = _as_tensor(x).copy()
    rng = np.random.default_rng(seed)

    def loss():
        acts = forward_acts(net, x)
        y = acts[-1]
        return 0.5 * float(np.sum(y * y)), _relu_pattern(net, acts)

    acts = forward_acts(net, x)
    base = _relu_pattern(net, acts)
    grads, dx = backward_acts(net, acts, acts[-1])
    targets = [(p, grads[name]) for name, p in net.parameters().items()] + [(x, dx)]
    worst = 0.0
    for arr, g in targets:
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        picks = rng.choice(flat.size, size=min(n_samples, flat.size), replace=False)
        for k in picks:
            orig = flat[k]
            step = h
            while True:
                flat[k] = orig + step
                lp, pat_p = loss()
                flat[k] = orig - step
                lm, pat_m = loss()
                flat[k] = orig
                smooth = np.array_equal(pat_p, base) and np.array_equal(pat_m, base)
                if smooth or step / 10 < min_h:
                    break
                step /= 10
            numeric = (lp - lm) / (2 * step)
            analytic = gflat[k]
            denom = max(abs(analytic), abs(numeric), 1e-12)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst


# -- construction helpers --------------------------------------------------------


def kaiming(rng, out_c, in_c, k):
    std = np.sqrt(2.0 / (in_c * k * k))
    return rng.normal(0.0, std, size=(out_c, in_c, k, k))


def conv(rng, in_c, out_c, k=3, stride=1, pad=None, zero=False):
    pad = (k // 2) if pad is None else pad
    w = np.zeros((out_c, in_c, k, k)) if zero else kaiming(rng, out_c, in_c, k)
    return Layer(CONV, w, np.zeros(out_c), stride, pad)


def tconv(rng, in_c, out_c, k=4, stride=2, pad=1):
    return Layer(TCONV, kaiming(rng, out_c, in_c, k), np.zeros(out_c), stride, pad)


def relu():
    return Layer(RELU)


def add(skip, resample_mode=RESAMPLE_NONE):
    return Layer(ADD, skip=skip, resample=resample_mode)


def residual_blocks(rng, layers, channels, count, scale_last=1.0):
    """Append ``count`` conv-ReLU-conv blocks with identity skips to ``layers``."""
    for _ in range(count):
        start = len(layers)
        layers.append(conv(rng, channels, channels))
        layers.append(relu())
        last = conv(rng, channels, channels)
        last.weight *= scale_last
        layers.append(last)
        layers.append(add(start))
    return layers


def zero_parameters(net):
    for p in net.parameters().values():
        p[...] = 0.0
    return net
