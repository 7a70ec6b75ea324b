"""Command-line interface: encode, decode, train, sweep and BD-rate.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""
import argparse
import csv
import logging
import sys
from pathlib import Path

from . import barc, ilf
from .codec import coder
from .codec.frame import read_pgm, read_yuv, write_yuv
from .entropy import EntropyError
from .metrics import CurveError, bd_rate, curves_from_rows, rd_sweep, rows_from_csv, video_psnr
from .modelio import ModelFormatError

log = logging.getLogger("hybridvc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
DATA_ERRORS = (ValueError, OSError, EntropyError, ModelFormatError, FloatingPointError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def read_config_file(path):
    """Flat ``key = value`` file with ``#`` comments; keys use flag spelling."""
    out = {}
    text = Path(path).read_text(encoding="utf-8")
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def _on_off(value):
    v = str(value).lower()
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected on/off, got {value!r}")
    return v == "on"


def _qp_list(value):
    try:
        return [int(q) for q in str(value).split(",") if q.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad QP list {value!r}") from None


def _add_codec_flags(p):
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--gop", choices=("ai", "ipp"), default="ai")
    p.add_argument("--ctu", type=int, default=64)
    p.add_argument("--deblock", type=_on_off, default=True, metavar="{on,off}")
    p.add_argument("--cnn-ilf", type=_on_off, default=False, metavar="{on,off}")
    p.add_argument("--cnn-barc", type=_on_off, default=False, metavar="{on,off}")
    p.add_argument("--search-range", type=int, default=16)


def _add_train_flags(p):
    p.add_argument("--qp", type=_qp_list, default="22,27,32,37", help="comma-separated QPs")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--loss-csv", help="per-epoch loss CSV (default: <output>/<tool>_loss.csv)")


def build_parser():
    parser = _Parser(prog="hybridvc", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key = value configuration file; flags override it")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("encode", help="encode raw YUV420 video")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--recon", help="also write the reconstruction as raw YUV")
    p.add_argument("--qp", type=int, default=32)
    p.add_argument("--models")
    p.add_argument("--seed", type=int, default=0)
    _add_codec_flags(p)

    p = sub.add_parser("decode", help="decode a bitstream to raw YUV420")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--models")

    for name, tool in (("train-ilf", "ilf"), ("train-barc", "barc")):
        p = sub.add_parser(name, help=f"train the {tool} models on a PGM corpus")
        p.add_argument("--input", required=True, help="directory of 8-bit PGM images")
        p.add_argument("--output", required=True, help="model directory")
        p.add_argument("--seed", type=int, default=0)
        _add_train_flags(p)

    p = sub.add_parser("sweep", help="RD sweep over QPs, written as CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--qp", type=_qp_list, default="22,27,32,37")
    p.add_argument("--models")
    p.add_argument("--seed", type=int, default=0)
    _add_codec_flags(p)

    p = sub.add_parser("bdrate", help="BD-rate of a test sweep against an anchor sweep")
    p.add_argument("anchor")
    p.add_argument("test")
    parser.commands = sub.choices
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = read_config_file(args.config)
        sub = parser.commands[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"unknown configuration key(s): {', '.join(unknown)}")
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


# -- helpers ---------------------------------------------------------------------------


def _load_models(args, need_ilf, need_barc):
    ilf_models = barc_models = None
    if need_ilf:
        if not args.models:
            raise ilf.ModelNotFound("model not found: --cnn-ilf on needs --models DIR")
        ilf_models = ilf.IlfModelSet.load(args.models)
    if need_barc and args.models:
        barc_models = barc.BarcModelPair.load(args.models)
    elif need_barc:
        log.info("no --models given: CNN-BARC uses the bicubic sub-mode only")
    return ilf_models, barc_models


def _codec_config(args, qp):
    if args.width is None or args.height is None:
        raise UsageError("--width and --height are required")
    if args.width <= 0 or args.height <= 0 or args.width % 2 or args.height % 2:
        raise UsageError("--width and --height must be positive and even")
    ilf_models, barc_models = _load_models(args, args.cnn_ilf, args.cnn_barc)
    return coder.CodecConfig(
        qp=qp, ctu=args.ctu, gop=args.gop, deblock=args.deblock, cnn_ilf=args.cnn_ilf,
        cnn_barc=args.cnn_barc, search_range=args.search_range,
        ilf_models=ilf_models, barc_models=barc_models,
    )


def _read_input(args):
    frames = read_yuv(args.input, args.width, args.height, args.frames)
    if not frames:
        raise ValueError(f"{args.input}: no complete frame")
    return frames


def _write_bytes(path, data):
    # write-then-rename so a failure never leaves a partial output behind
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(data)
    tmp.replace(path)


def _load_corpus(directory):
    d = Path(directory)
    if not d.is_dir():
        raise ValueError(f"{d}: not a directory")
    images = [read_pgm(p) for p in sorted(d.glob("*.pgm"))]
    if not images:
        raise ValueError(f"{d}: empty corpus (no .pgm files)")
    return images


def _write_loss_csv(path, header, rows):
    buf = [",".join(header)]
    buf += [",".join(f"{x:.8f}" if isinstance(x, float) else str(x) for x in r) for r in rows]
    _write_bytes(path, ("\n".join(buf) + "\n").encode())


# -- commands ---------------------------------------------------------------------------


def cmd_encode(args):
    config = _codec_config(args, args.qp)
    frames = _read_input(args)
    res = coder.encode_sequence(frames, config)
    _write_bytes(args.output, res.bitstream)
    if args.recon:
        write_yuv(args.recon, res.recon)
    psnr_y = video_psnr(frames, res.recon)[0]
    print(f"frames={len(frames)} bits={8 * len(res.bitstream)} psnr_y={psnr_y:.4f}")


def cmd_decode(args):
    data = Path(args.input).read_bytes()
    hdr = coder.parse_header(data)
    ilf_models = barc_models = None
    if hdr.tools & coder.TOOL_ILF:
        if not args.models:
            raise ilf.ModelNotFound("model not found: stream uses CNN-ILF, pass --models DIR")
        ilf_models = ilf.IlfModelSet.load(args.models)
    if hdr.tools & coder.TOOL_BARC and args.models:
        barc_models = barc.BarcModelPair.load(args.models)
    _, frames = coder.decode_sequence(data, ilf_models, barc_models)
    tmp = Path(args.output + ".part")
    write_yuv(tmp, frames)
    tmp.replace(args.output)
    print(f"frames={len(frames)} width={hdr.width} height={hdr.height}")


def _loss_path(args, tool):
    return args.loss_csv or str(Path(args.output) / f"{tool}_loss.csv")


def cmd_train_ilf(args):
    images = _load_corpus(args.input)
    models = ilf.IlfModelSet()
    rows = []
    for qp in args.qp:
        data = ilf.prepare_ilf_dataset(images, qp, seed=args.seed)
        if len(data) == 0:
            raise ValueError("empty training set: no image is at least 70x70")
        net, hist = ilf.train_ilf(
            data, qp, args.epochs, args.lr, args.batch_size, args.momentum, args.channels,
            args.seed, max_steps=args.max_steps,
        )
        models[qp] = net
        rows += [(qp, e + 1, loss) for e, loss in enumerate(hist["epoch_loss"])]
        log.info("qp %d: probe loss %.6g -> %.6g", qp, hist["probe_before"], hist["probe_after"])
    models.save(args.output)
    _write_loss_csv(_loss_path(args, "ilf"), ("qp", "epoch", "loss"), rows)
    print(f"models={len(models)} dir={args.output}")


def cmd_train_barc(args):
    images = _load_corpus(args.input)
    pair, hist = barc.train_barc(
        images, args.qp, args.epochs, args.lr, args.batch_size, args.momentum, args.channels,
        args.seed, max_steps=args.max_steps,
    )
    pair.save(args.output)
    rows = []
    for step in ("step1", "step2", "step3"):
        rows += [(step, 0, e + 1, loss) for e, loss in enumerate(hist[step])]
    for qp, losses in hist["step4"].items():
        rows += [("step4", qp, e + 1, loss) for e, loss in enumerate(losses)]
    _write_loss_csv(_loss_path(args, "barc"), ("step", "qp", "epoch", "loss"), rows)
    print(f"models={1 + len(pair.us)} dir={args.output}")


def cmd_sweep(args):
    config = _codec_config(args, args.qp[0])
    frames = _read_input(args)
    _, text = rd_sweep(frames, config, args.qp)
    _write_bytes(args.output, text.encode())
    print(text, end="")


def cmd_bdrate(args):
    anchor = rows_from_csv(Path(args.anchor).read_text(encoding="utf-8"))
    test = rows_from_csv(Path(args.test).read_text(encoding="utf-8"))
    failed = []
    for name, a, t in zip("YUV", curves_from_rows(anchor, strict=False), curves_from_rows(test, strict=False)):
        try:
            print(f"BD-rate {name}: {bd_rate(a, t):.2f}%")
        except CurveError as exc:
            print(f"BD-rate {name}: n/a")
            failed.append(f"{name}: {exc}")
    if failed:
        raise CurveError("; ".join(failed))


COMMANDS = {
    "encode": cmd_encode,
    "decode": cmd_decode,
    "train-ilf": cmd_train_ilf,
    "train-barc": cmd_train_barc,
    "sweep": cmd_sweep,
    "bdrate": cmd_bdrate,
}


def main(argv=None):
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CurveError, csv.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort reporting
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
