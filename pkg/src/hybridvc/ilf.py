"""CNN in-loop filter.

A 34-conv residual network (head conv, 16 residual blocks, tail conv, global
skip) applied after deblocking, CTU by CTU, with one luma and one chroma enable
flag per CTU. One model is trained per QP on luma only and reused for chroma.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .modelio import load_model, save_model

log = logging.getLogger(__name__)

TRAINED_QPS = (22, 27, 32, 37)
PATCH = 70
CONTEXT = 8
N_RESBLOCKS = 16


class ModelNotFound(FileNotFoundError):
    pass


def build_ilf_network(channels=64, seed=0):
    """Head conv, 16 conv-ReLU-conv residual blocks, tail conv, input skip.

    The tail conv starts at zero so a fresh network is the identity map.
    """
    if channels < 1:
        raise ValueError("channels must be >= 1")
    rng = np.random.default_rng(seed)
    layers = [nn.conv(rng, 1, channels)]
    nn.residual_blocks(rng, layers, channels, N_RESBLOCKS, scale_last=0.1)
    layers.append(nn.conv(rng, channels, 1, zero=True))
    layers.append(nn.add(0))
    return nn.Network(layers, "ilf")


class ModelSet(dict):
    """QP -> network, with nearest-QP lookup (ties go to the larger QP)."""

    prefix = "model"

    def nearest_qp(self, qp):
        if not self:
            raise ModelNotFound("model not found: empty model set")
        return min(self, key=lambda q: (abs(q - qp), -q))

    def select(self, qp):
        return self[self.nearest_qp(qp)]

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for qp, net in sorted(self.items()):
            save_model(net, directory / f"{self.prefix}_q{qp}.dlnn")

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        out = cls()
        for path in sorted(directory.glob(f"{cls.prefix}_q*.dlnn")):
            out[int(path.stem.rsplit("_q", 1)[1])] = load_model(path)
        if not out:
            raise ModelNotFound(f"model not found: no {cls.prefix}_q*.dlnn in {directory}")
        return out


class IlfModelSet(ModelSet):
    prefix = "ilf"


def ctu_grid(width, height, ctu):
    return [
        (x, y, min(ctu, width - x), min(ctu, height - y))
        for y in range(0, height, ctu)
        for x in range(0, width, ctu)
    ]


def run_on_samples(net, samples, maxval=255):
    """Network on an integer plane: normalise, forward, de-normalise, round, clip."""
    x = np.asarray(samples, dtype=np.float64)[None, None] / maxval
    y = nn.forward(net, x)[0, 0] * maxval
    return np.clip(np.floor(y + 0.5), 0, maxval).astype(np.int32)


def _filter_region(net, plane, x0, y0, w, h, maxval):
    padded = np.pad(plane, CONTEXT, mode="edge")
    src = padded[y0 : y0 + h + 2 * CONTEXT, x0 : x0 + w + 2 * CONTEXT]
    return run_on_samples(net, src, maxval)[CONTEXT : CONTEXT + h, CONTEXT : CONTEXT + w]


def apply_ilf(frame, models, qp, flags, ctu=64, on_select=None):
    """Filter the CTUs whose flags are set; everything else is copied through.

    ``flags`` is an (n_ctu, 2) boolean array of (luma, chroma) enables.
    """
    if models is None:
        raise ModelNotFound("model not found: CNN-ILF enabled without models")
    flags = np.asarray(flags, dtype=bool).reshape(-1, 2)
    grid = ctu_grid(frame.width, frame.height, ctu)
    if len(flags) != len(grid):
        raise ValueError(f"expected {len(grid)} CTU flag pairs, got {len(flags)}")
    net = models.select(qp)
    if on_select is not None:
        on_select(models.nearest_qp(qp))
    out = frame.copy()
    maxval = frame.maxval
    for (x0, y0, w, h), (fy, fc) in zip(grid, flags):
        if fy:
            out.y[y0 : y0 + h, x0 : x0 + w] = _filter_region(net, frame.y, x0, y0, w, h, maxval)
        if fc:
            for src, dst in ((frame.u, out.u), (frame.v, out.v)):
                dst[y0 // 2 : (y0 + h) // 2, x0 // 2 : (x0 + w) // 2] = _filter_region(
                    net, src, x0 // 2, y0 // 2, w // 2, h // 2, maxval
                )
    return out


def _sse(a, b):
    d = a.astype(np.int64) - b
    return int(np.sum(d * d))


def decide_ctu_flags(original, pre, filtered, ctu=64):
    """Per CTU: enable where filtering strictly lowers the error (ties stay off)."""
    flags = []
    for x0, y0, w, h in ctu_grid(original.width, original.height, ctu):
        ys = np.s_[y0 : y0 + h, x0 : x0 + w]
        cs = np.s_[y0 // 2 : (y0 + h) // 2, x0 // 2 : (x0 + w) // 2]
        luma = _sse(filtered.y[ys], original.y[ys]) < _sse(pre.y[ys], original.y[ys])
        e_f = _sse(filtered.u[cs], original.u[cs]) + _sse(filtered.v[cs], original.v[cs])
        e_p = _sse(pre.u[cs], original.u[cs]) + _sse(pre.v[cs], original.v[cs])
        flags.append((luma, e_f < e_p))
    return np.array(flags, dtype=bool).reshape(-1, 2)


# -- training ------------------------------------------------------------------


def pad_to_multiple(img, m=16):
    h, w = img.shape
    return np.pad(img, ((0, -h % m), (0, -w % m)), mode="edge")


def intra_code_luma(img, qp):
    """Intra-code a grey image with every in-loop tool off; returns the luma recon."""
    from .codec.coder import CodecConfig, encode_frame
    from .codec.frame import Frame

    img = np.asarray(img, dtype=np.int32)
    h, w = img.shape
    padded = pad_to_multiple(img[: h - h % 2, : w - w % 2])
    cfg = CodecConfig(qp=qp, deblock=False, cnn_ilf=False, cnn_barc=False)
    _, recon, _ = encode_frame(Frame.from_luma(padded), cfg)
    out = img.copy()
    out[: h - h % 2, : w - w % 2] = recon.y[: h - h % 2, : w - w % 2]
    return out


def tile(img, size=PATCH):
    h, w = img.shape
    return [img[y : y + size, x : x + size] for y in range(0, h - size + 1, size) for x in range(0, w - size + 1, size)]


@dataclass
class IlfDataset:
    compressed: np.ndarray  # (N, size, size) uint8
    original: np.ndarray
    skipped: int = 0

    def __len__(self):
        return len(self.compressed)


def prepare_ilf_dataset(images, qp, seed=0, size=PATCH):
    """Intra-code each image at ``qp`` and pair up co-located ``size``-square tiles."""
    comp, orig, skipped = [], [], 0
    for img in images:
        img = np.asarray(img)
        if img.shape[0] < size or img.shape[1] < size:
            skipped += 1
            continue
        rec = intra_code_luma(img, qp)
        comp += tile(rec, size)
        orig += tile(img, size)
    if skipped:
        log.warning("skipped %d image(s) smaller than %dx%d", skipped, size, size)
    if not comp:
        return IlfDataset(np.zeros((0, size, size), np.uint8), np.zeros((0, size, size), np.uint8), skipped)
    perm = np.random.default_rng(seed).permutation(len(comp))
    comp = np.stack(comp).astype(np.uint8)[perm]
    orig = np.stack(orig).astype(np.uint8)[perm]
    return IlfDataset(comp, orig, skipped)


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 4
    momentum: float = 0.9
    seed: int = 0
    channels: int = 64
    clip: float = 1.0


def mse_loss(y, target):
    d = y - target
    return float(np.mean(d * d)), 2.0 * d / d.size


class Trainer:
    """Mini-batch SGD with optional heavy-ball momentum over ``nn.sgd_step``."""

    def __init__(self, nets, lr, momentum=0.0, clip=None):
        self.nets = list(nets)
        self.lr = lr
        self.momentum = momentum
        self.clip = clip
        self.velocity = [{k: np.zeros_like(v) for k, v in n.parameters().items()} for n in self.nets]

    def step(self, grads_per_net):
        if self.clip:
            norm = np.sqrt(sum(float(np.sum(g * g)) for gs in grads_per_net for g in gs.values()))
            scale = min(1.0, self.clip / max(norm, 1e-12))
        else:
            scale = 1.0
        for net, grads, vel in zip(self.nets, grads_per_net, self.velocity):
            if grads is None:
                continue
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise FloatingPointError(f"training diverged in {net.name}: non-finite gradient")
            for k, g in grads.items():
                vel[k] = self.momentum * vel[k] + scale * g
            nn.sgd_step(net, vel, self.lr)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def train_ilf(dataset, qp=None, epochs=10, lr=1e-3, batch_size=4, momentum=0.9, channels=64, seed=0,
              clip=1.0, net=None, max_steps=None, on_epoch=None):
    """Train a filter on ``(compressed, original)`` tiles with an MSE loss.

    Returns ``(net, history)`` where history holds per-epoch mean loss and the
    loss on a fixed probe batch before and after training.
    """
    if len(dataset) == 0:
        raise ValueError("empty training set")
    net = net or build_ilf_network(channels, seed)
    if qp is not None:
        net.name = f"ilf_q{qp}"
    x_all = dataset.compressed.astype(np.float64)[:, None] / 255.0
    t_all = dataset.original.astype(np.float64)[:, None] / 255.0
    rng = np.random.default_rng(seed)
    probe = slice(0, min(batch_size, len(dataset)))

    def probe_loss():
        return mse_loss(nn.forward(net, x_all[probe]), t_all[probe])[0]

    trainer = Trainer([net], lr, momentum, clip)
    history = {"epoch_loss": [], "probe_before": probe_loss()}
    steps = 0
    for epoch in range(epochs):
        losses = []
        for idx in _batches(len(dataset), batch_size, rng):
            acts = nn.forward_acts(net, x_all[idx])
            loss, dy = mse_loss(acts[-1], t_all[idx])
            if not np.isfinite(loss):
                raise FloatingPointError("training diverged: non-finite loss")
            grads, _ = nn.backward_acts(net, acts, dy)
            trainer.step([grads])
            losses.append(loss)
            steps += 1
            if max_steps and steps >= max_steps:
                break
        history["epoch_loss"].append(float(np.mean(losses)))
        if on_epoch:
            on_epoch(epoch, history["epoch_loss"][-1])
        if max_steps and steps >= max_steps:
            break
    history["probe_after"] = probe_loss()
    history["steps"] = steps
    return net, history
