"""Block adaptive resolution coding with learned down/up-samplers.

Each intra CTU is coded either directly or at half resolution; the half-size
version is produced and restored either by the CNN pair or by plain bicubic
filters. The decision compares Lagrangian costs with the distortion measured
at full resolution.
"""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn, resample
from .codec import syntax
from .codec.region import Canvas, encode_region
from .ilf import ModelNotFound, ModelSet, Trainer, _batches, intra_code_luma, mse_loss, run_on_samples
from .modelio import load_model, save_model

DIRECT, DOWNSAMPLE = 0, 1
SUB_CNN, SUB_SIMPLE = 0, 1
SUB_NAMES = {SUB_CNN: "cnn", SUB_SIMPLE: "simple"}
DS_CONVS = 10
US_RESBLOCKS = 16
ETA = 0.1


@dataclass(frozen=True)
class BarcMode:
    mode: int = DIRECT
    sub: int = None

    def __post_init__(self):
        if (self.mode == DOWNSAMPLE) != (self.sub is not None):
            raise ValueError("sub-mode is required exactly for the down-sampling mode")

    @property
    def downsampled(self):
        return self.mode == DOWNSAMPLE


class UpsamplerSet(ModelSet):
    prefix = "barc_us"


@dataclass
class BarcModelPair:
    ds: nn.Network
    us: UpsamplerSet = field(default_factory=UpsamplerSet)

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_model(self.ds, directory / "barc_ds.dlnn")
        self.us.save(directory)

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        path = directory / "barc_ds.dlnn"
        if not path.exists():
            raise ModelNotFound(f"model not found: {path}")
        return cls(load_model(path), UpsamplerSet.load(directory))


# -- networks ----------------------------------------------------------------------


def build_cnn_ds(channels=64, seed=0):
    """Ten 3x3 convs (the first with stride 2) plus a bicubic-down skip."""
    rng = np.random.default_rng(seed)
    layers = [nn.conv(rng, 1, channels, stride=2), nn.relu()]
    for _ in range(DS_CONVS - 2):
        layers += [nn.conv(rng, channels, channels), nn.relu()]
    layers.append(nn.conv(rng, channels, 1, zero=True))
    layers.append(nn.add(0, nn.RESAMPLE_DOWN))
    return nn.Network(layers, "barc_ds")


def build_cnn_us(channels=64, seed=0):
    """Head conv, 16 residual blocks, body conv with long skip, 4x4 stride-2
    transposed conv, tail conv, and a bicubic-up global skip."""
    rng = np.random.default_rng(seed)
    layers = [nn.conv(rng, 1, channels)]
    nn.residual_blocks(rng, layers, channels, US_RESBLOCKS, scale_last=0.1)
    layers.append(nn.conv(rng, channels, channels))
    layers.append(nn.add(1))
    layers.append(nn.tconv(rng, channels, channels, k=4, stride=2, pad=1))
    layers.append(nn.conv(rng, channels, 1, zero=True))
    layers.append(nn.add(0, nn.RESAMPLE_UP))
    return nn.Network(layers, "barc_us")


# -- sample-domain samplers ------------------------------------------------------------


def downsample(block, sub, models=None, maxval=255):
    if sub == SUB_CNN:
        if models is None:
            raise ModelNotFound("model not found: CNN-BARC enabled without models")
        return run_on_samples(models.ds, block, maxval)
    return resample.bicubic_down(block, maxval)


def upsample(block, sub, qp, models=None, maxval=255):
    if sub == SUB_CNN:
        if models is None:
            raise ModelNotFound("model not found: CNN-BARC enabled without models")
        return run_on_samples(models.us.select(qp), block, maxval)
    return resample.bicubic_up(block, maxval)


def eligible(w, h):
    """Half-resolution CTUs must still split into 16x16 luma units."""
    return w % 32 == 0 and h % 32 == 0


# -- mode decision ----------------------------------------------------------------------


@dataclass
class RdCost:
    d: int
    r: float
    lam: float

    @property
    def j(self):
        return self.d + self.lam * self.r


@dataclass
class CtuOutcome:
    mode: BarcMode
    bank: object
    log: object
    recon: tuple  # full-resolution Y, U, V
    half: tuple  # half-resolution Y, U, V (None for direct)
    cost: RdCost
    candidates: dict  # BarcMode -> RdCost


def _sse(a, b):
    d = np.asarray(a, dtype=np.int64) - b
    return int(np.sum(d * d))


def _direct_candidate(orig, recon_planes, x0, y0, qp, lam, bank, maxval, signal, trace):
    b = bank.clone()
    log = syntax.SymbolLog()
    bits = 0.0
    if signal:
        bits += b.measure([syntax.BARC_MODE], [DIRECT])
        log.put(syntax.BARC_MODE, DIRECT)
    h, w = orig[0].shape
    canv = (
        Canvas.from_plane(recon_planes[0], x0, y0, w, h),
        Canvas.from_plane(recon_planes[1], x0 // 2, y0 // 2, w // 2, h // 2),
        Canvas.from_plane(recon_planes[2], x0 // 2, y0 // 2, w // 2, h // 2),
    )
    res = encode_region(orig, canv, qp, lam, b, None, maxval, trace)
    log.extend(res.log)
    recon = tuple(c.recon.astype(np.int32) for c in res.canvases)
    return res.bank, log, recon, RdCost(res.sse, bits + res.bits, lam)


def half_canvases(recon_planes, x0, y0, w, h):
    return (
        Canvas.half_from_plane(recon_planes[0], x0, y0, w, h),
        Canvas.half_from_plane(recon_planes[1], x0 // 2, y0 // 2, w // 2, h // 2),
        Canvas.half_from_plane(recon_planes[2], x0 // 2, y0 // 2, w // 2, h // 2),
    )


def upsample_half(half, sub, qp, models, maxval=255):
    y = upsample(half[0], sub, qp, models, maxval)
    return (y, resample.bicubic_up(half[1], maxval), resample.bicubic_up(half[2], maxval))


def _down_candidate(orig, recon_planes, x0, y0, qp, lam, bank, maxval, sub, models):
    b = bank.clone()
    log = syntax.SymbolLog()
    ctx, sym = [syntax.BARC_MODE, syntax.BARC_SUB], [DOWNSAMPLE, sub]
    bits = b.measure(ctx, sym)
    log.add(ctx, sym)
    h, w = orig[0].shape
    small = (
        downsample(orig[0], sub, models, maxval),
        resample.bicubic_down(orig[1], maxval),
        resample.bicubic_down(orig[2], maxval),
    )
    res = encode_region(small, half_canvases(recon_planes, x0, y0, w, h), qp, lam, b, None, maxval)
    log.extend(res.log)
    half = tuple(c.recon.astype(np.int32) for c in res.canvases)
    recon = upsample_half(half, sub, qp, models, maxval)
    d = sum(_sse(r, o) for r, o in zip(recon, orig))
    return res.bank, log, recon, half, RdCost(d, bits + res.bits, lam)


def barc_encode_ctu(orig, recon_planes, x0, y0, qp, lam, bank, models=None, maxval=255, trace=None):
    """Trial-code a CTU directly and in both down-sampling sub-modes.

    ``orig`` is the (Y, U, V) CTU at full resolution; ``recon_planes`` are the
    frame's reconstructed planes so far (for intra context). The sub-mode is
    picked first, then down-sampling is weighed against direct coding.
    """
    h, w = orig[0].shape
    if not eligible(w, h):
        raise ValueError(f"CTU {w}x{h} cannot be coded at half resolution")
    b_dir, l_dir, r_dir, c_dir = _direct_candidate(orig, recon_planes, x0, y0, qp, lam, bank, maxval, True, trace)
    candidates = {BarcMode(DIRECT): c_dir}
    subs = {}
    for sub in (SUB_CNN, SUB_SIMPLE):
        if sub == SUB_CNN and models is None:
            continue
        out = _down_candidate(orig, recon_planes, x0, y0, qp, lam, bank, maxval, sub, models)
        subs[sub] = out
        candidates[BarcMode(DOWNSAMPLE, sub)] = out[-1]
    # stage 1: which sampler; stage 2: whether to down-sample at all
    best_sub = min(subs, key=lambda s: (subs[s][-1].j, s))
    b_dn, l_dn, r_dn, half, c_dn = subs[best_sub]
    if c_dn.j < c_dir.j:
        return CtuOutcome(BarcMode(DOWNSAMPLE, best_sub), b_dn, l_dn, r_dn, half, c_dn, candidates)
    return CtuOutcome(BarcMode(DIRECT), b_dir, l_dir, r_dir, None, c_dir, candidates)


@dataclass
class CtuRecord:
    """What the post-frame pass needs to know about one down-sampled CTU."""

    x0: int
    y0: int
    sub: int
    half: tuple


def barc_postprocess_frame(frame, records, qp, models=None):
    """Re-up-sample every down-sampled CTU from its half-resolution reconstruction."""
    out = frame.copy()
    for rec in records:
        y, u, v = upsample_half(rec.half, rec.sub, qp, models, frame.maxval)
        h, w = y.shape
        out.y[rec.y0 : rec.y0 + h, rec.x0 : rec.x0 + w] = y
        out.u[rec.y0 // 2 : (rec.y0 + h) // 2, rec.x0 // 2 : (rec.x0 + w) // 2] = u
        out.v[rec.y0 // 2 : (rec.y0 + h) // 2, rec.x0 // 2 : (rec.x0 + w) // 2] = v
    return out


# -- training ------------------------------------------------------------------------------


def _patches(images, size):
    out = []
    for img in images:
        h, w = img.shape
        for y in range(0, h - size + 1, size):
            for x in range(0, w - size + 1, size):
                out.append(img[y : y + size, x : x + size])
    if not out:
        raise ValueError(f"no training image is at least {size}x{size}")
    return np.stack(out).astype(np.float64)[:, None] / 255.0


def _run_epochs(step_fn, n, epochs, batch_size, rng, max_steps=None):
    losses = []
    steps = 0
    for _ in range(epochs):
        ep = []
        for idx in _batches(n, batch_size, rng):
            loss = step_fn(idx)
            if not np.isfinite(loss):
                raise FloatingPointError("training diverged: non-finite loss")
            ep.append(loss)
            steps += 1
            if max_steps and steps >= max_steps:
                break
        losses.append(float(np.mean(ep)))
        if max_steps and steps >= max_steps:
            break
    return losses


def train_barc(images, qps=(22, 27, 32, 37), epochs=2, lr=1e-3, batch_size=4, momentum=0.9, channels=64,
               seed=0, eta=ETA, patch=64, clip=1.0, max_steps=None, code_fn=None):
    """Four-step training of the down/up-sampling pair.

    1. bicubic down-sampling, train CNN-US on end-to-end MSE;
    2. CNN-US frozen, train CNN-DS on end-to-end MSE;
    3. joint fine-tuning on end-to-end MSE + ``eta`` * down-sampled MSE against bicubic;
    4. CNN-DS frozen, code its outputs at each QP and train one CNN-US per QP.

    Returns ``(BarcModelPair, history)``.
    """
    code_fn = code_fn or intra_code_luma
    images = [np.asarray(im, dtype=np.int32) for im in images]
    x = _patches(images, patch)
    rng = np.random.default_rng(seed)
    ds, us = build_cnn_ds(channels, seed), build_cnn_us(channels, seed + 1)
    history = {}

    def e2e_loss():
        return mse_loss(nn.forward(us, nn.forward(ds, x[:batch_size])), x[:batch_size])[0]

    # step 1: down-sampler replaced by plain bicubic
    x_small = resample.down2(x)
    tr = Trainer([us], lr, momentum, clip)

    def step1(idx):
        acts = nn.forward_acts(us, x_small[idx])
        loss, dy = mse_loss(acts[-1], x[idx])
        tr.step([nn.backward_acts(us, acts, dy)[0]])
        return loss

    history["step1"] = _run_epochs(step1, len(x), epochs, batch_size, rng, max_steps)

    # step 2: learn the down-sampler through the frozen up-sampler
    tr = Trainer([ds], lr, momentum, clip)

    def step2(idx):
        a_ds = nn.forward_acts(ds, x[idx])
        a_us = nn.forward_acts(us, a_ds[-1])
        loss, dy = mse_loss(a_us[-1], x[idx])
        _, d_mid = nn.backward_acts(us, a_us, dy)
        tr.step([nn.backward_acts(ds, a_ds, d_mid)[0]])
        return loss

    history["step2_before"] = e2e_loss()
    history["step2"] = _run_epochs(step2, len(x), epochs, batch_size, rng, max_steps)

    # step 3: joint fine-tuning with the down-sampled regulariser
    tr = Trainer([ds, us], lr, momentum, clip)
    history["step3_ds"] = []

    def step3(idx):
        a_ds = nn.forward_acts(ds, x[idx])
        a_us = nn.forward_acts(us, a_ds[-1])
        l_e2e, dy = mse_loss(a_us[-1], x[idx])
        l_ds, d_reg = mse_loss(a_ds[-1], x_small[idx])
        g_us, d_mid = nn.backward_acts(us, a_us, dy)
        g_ds, _ = nn.backward_acts(ds, a_ds, d_mid + eta * d_reg)
        tr.step([g_ds, g_us])
        history["step3_ds"].append(l_ds)
        return l_e2e + eta * l_ds

    history["step3"] = _run_epochs(step3, len(x), epochs, batch_size, rng, max_steps)

    # step 4: per-QP up-samplers on coded down-sampled images
    models = BarcModelPair(ds, UpsamplerSet())
    history["step4"] = {}
    even = [im[: im.shape[0] - im.shape[0] % 2, : im.shape[1] - im.shape[1] % 2] for im in images]
    small_imgs = [run_on_samples(ds, im) for im in even]
    for qp in qps:
        coded = [code_fn(s, qp) for s in small_imgs]
        src = _patches(coded, patch // 2)
        tgt = _patches(even, patch)
        net = us.copy()
        net.name = f"barc_us_q{qp}"
        tr = Trainer([net], lr, momentum, clip)

        def step4(idx, net=net, tr=tr, src=src, tgt=tgt):
            acts = nn.forward_acts(net, src[idx])
            loss, dy = mse_loss(acts[-1], tgt[idx])
            tr.step([nn.backward_acts(net, acts, dy)[0]])
            return loss

        history["step4"][qp] = _run_epochs(step4, len(src), epochs, batch_size, rng, max_steps)
        models.us[qp] = net
    return models, history
