"""neural-bloom command line: data generation, training, inference, evaluation, benchmarks.

Exit status: 0 on success, 1 on user error (bad flags, missing or malformed
inputs), 2 on internal failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bloom import BloomParams, bloom_mask, compose
from .evaluation import BenchStats, bench, eval_mse, render_records, render_report
from .models import FASTNBL, NBL, build, fuse_conv_bn, infer_image
from .ppm import read_ppm, write_ppm
from .scenes import build_dataset, load_dataset
from .train import TrainConfig, format_history, train
from .weights_io import load_weights, save_weights

LABELS = {NBL: "NBL", FASTNBL: "FastNBL", "classic": "classic"}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _bloom_flags(p, with_intensity=True):
    d = BloomParams()
    p.add_argument("--threshold", type=float, default=d.threshold, help="prefilter luminance threshold")
    p.add_argument("--scatter", type=float, default=d.scatter, help="mip fold-back blend factor")
    if with_intensity:
        p.add_argument("--intensity", type=float, default=d.intensity, help="mask strength at composition")
    p.add_argument("--max-iterations", type=int, default=d.max_iterations, help="maximum downsample passes")


def _params(args) -> BloomParams:
    return BloomParams(threshold=args.threshold, scatter=args.scatter,
                       intensity=getattr(args, "intensity", 1.0), max_iterations=args.max_iterations)


def _report_paths(path):
    path = Path(path)
    return path, path.with_suffix(".kv"), path.with_suffix(".png")


def _load_model(path, fused: bool):
    if not Path(path).is_file():
        raise UsageError(f"weights file not found: {path}")
    spec, weights = load_weights(path)
    return fuse_conv_bn(spec, weights) if fused else (spec, weights)


# -- subcommands ---------------------------------------------------------------

def cmd_gen_data(args):
    m = build_dataset(args.scenes, args.frames, _params(args), args.out, seed=args.seed, overwrite=args.overwrite)
    print(f"{len(m.paths)} pairs written")
    print(f"manifest: {Path(args.out) / 'manifest.txt'}")


def _datasets(args):
    if not Path(args.data).is_dir():
        raise UsageError(f"dataset directory not found: {args.data}")
    return load_dataset(args.data)


def cmd_train(args):
    ds = _datasets(args)
    train_ds, val_ds = ds.split(args.val_fraction, scene=args.scene)
    cfg = TrainConfig(model=args.model, batch_size=args.batch, learning_rate=args.lr, epochs=args.epochs,
                      seed=args.seed, checkpoint_every=args.checkpoint_every,
                      checkpoint_dir=str(Path(args.out).parent / "checkpoints") if args.checkpoint_every else None)
    print(f"batch={cfg.batch_size} lr={cfg.learning_rate:g} epochs={cfg.epochs}")
    print(f"model={cfg.model} train_pairs={len(train_ds)} val_pairs={len(val_ds)} seed={cfg.seed}")

    def log(r):
        if args.verbose:
            print(f"epoch={r.epoch} train_mse={r.train_mse:.8g} val_mse={r.val_mse:.8g} elapsed={r.elapsed:.1f}", flush=True)

    weights, history = train(cfg, train_ds, val_ds, log=log)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_weights(build(cfg.model), weights, out)
    out.with_suffix(".history.txt").write_text(format_history(history))
    if history:
        print(f"train_mse={history[-1].train_mse:.8g} val_mse={history[-1].val_mse:.8g}")
    else:
        print("no epochs run; weights are the initialization")
    print(f"weights: {out}")
    if args.report and history:
        from .plotting import plot_loss_curve
        text, kv, png = _report_paths(args.report)
        text.parent.mkdir(parents=True, exist_ok=True)
        text.write_text(format_history(history))
        kv.write_text("".join(f"epoch={r.epoch} train_mse={r.train_mse:.8g} val_mse={r.val_mse:.8g}\n" for r in history))
        plot_loss_curve(history, png)


def cmd_infer(args):
    spec, weights = _load_model(args.model, args.fused)
    img = read_ppm(args.input)
    write_ppm(args.out, infer_image(spec, weights, img))


def cmd_classic(args):
    write_ppm(args.out, bloom_mask(read_ppm(args.input), _params(args)))


def cmd_compose(args):
    img, mask = read_ppm(args.input), read_ppm(args.mask)
    write_ppm(args.out, compose(img, mask, args.intensity))


def _producer(method: str, weights_path, fused: bool, params: BloomParams):
    if method == "classic":
        return lambda img: bloom_mask(img, params)
    if weights_path is None:
        raise UsageError(f"method {method} needs a weights file")
    spec, weights = _load_model(weights_path, fused)
    if spec.kind != method:
        raise UsageError(f"{weights_path} holds a {spec.kind} model, not {method}")
    return lambda img: infer_image(spec, weights, img)


def _subset(ds, split, val_fraction):
    if split == "all":
        return ds
    train_ds, val_ds = ds.split(val_fraction)
    return val_ds if split == "val" else train_ds


def cmd_eval(args):
    ds = _subset(_datasets(args), args.split, args.val_fraction)
    producer = _producer(args.method, args.weights, not args.unfused, ds.params)
    rep = eval_mse(producer, ds, LABELS[args.method])
    print(f"method={args.method}")
    print(f"images={len(ds)}")
    print(f"average_mse={rep.average:.8g}")
    print(f"p99_mse={rep.p99:.8g}")
    if args.report:
        from .plotting import plot_mse_histogram
        text, kv, png = _report_paths(args.report)
        text.parent.mkdir(parents=True, exist_ok=True)
        worst = "".join(f"  {p} {v:.8g}\n" for p, v in rep.worst())
        text.write_text(render_report([(rep.method, rep)]) + "\nworst images\n" + worst)
        kv.write_text(render_records([(rep.method, rep)]))
        plot_mse_histogram([(rep.method, rep)], png)


def _weights_by_kind(paths):
    found = {}
    for path in paths or []:
        if not Path(path).is_file():
            raise UsageError(f"weights file not found: {path}")
        spec, _ = load_weights(path)
        if spec.kind in found:
            raise UsageError(f"two weights files for {spec.kind}: {found[spec.kind]} and {path}")
        found[spec.kind] = path
    return found


def cmd_bench(args):
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in LABELS]
    if unknown or not methods:
        raise UsageError(f"unknown method(s) {unknown}; choose from {sorted(LABELS)}")
    ds = _datasets(args)
    n = len(ds) if args.limit is None else min(args.limit, len(ds))
    images, ids = list(ds.inputs[:n]), ds.paths[:n]
    weights = _weights_by_kind(args.weights)
    entries: list[tuple[str, BenchStats]] = []
    for m in methods:
        producer = _producer(m, weights.get(m), not args.unfused, ds.params)
        entries.append((LABELS[m], bench(producer, images, reps=args.reps, trim=args.trim,
                                         warmup=args.warmup, method=LABELS[m], ids=ids)))
    text = render_report(entries)
    sys.stdout.write(text)
    if args.report:
        from .plotting import plot_latency
        report, kv, png = _report_paths(args.report)
        report.parent.mkdir(parents=True, exist_ok=True)
        report.write_text(text)
        kv.write_text(render_records(entries))
        plot_latency(entries, png)


# -- parser --------------------------------------------------------------------

def build_parser() -> Parser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = Parser(prog="neural-bloom", description=__doc__.splitlines()[0], formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("gen-data", help="synthesize paired input/mask images", formatter_class=fmt)
    p.add_argument("--scenes", type=int, default=1, help="number of scenes")
    p.add_argument("--frames", type=int, default=5000, help="frames per scene along the camera path")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--seed", type=int, default=42, help="base random seed")
    p.add_argument("--overwrite", action="store_true", help="replace an existing dataset")
    _bloom_flags(p)
    p.set_defaults(func=cmd_gen_data)

    d = TrainConfig()
    p = sub.add_parser("train", help="train NBL or FastNBL on a dataset", formatter_class=fmt)
    p.add_argument("--model", choices=[NBL, FASTNBL], default=d.model, help="architecture")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--epochs", type=int, default=d.epochs, help="training epochs")
    p.add_argument("--batch", type=int, default=d.batch_size, help="batch size")
    p.add_argument("--lr", type=float, default=d.learning_rate, help="Adam learning rate")
    p.add_argument("--out", required=True, help="output weights file")
    p.add_argument("--seed", type=int, default=d.seed, help="init and shuffle seed")
    p.add_argument("--val-fraction", type=float, default=0.1, help="share held out for validation")
    p.add_argument("--scene", type=int, default=None, help="train on this scene index only")
    p.add_argument("--checkpoint-every", type=int, default=0, help="epochs between checkpoints (0 = none)")
    p.add_argument("--report", default=None, help="write history, key=value records and loss figure here")
    p.add_argument("--verbose", action="store_true", help="print every epoch")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run a trained model on one image", formatter_class=fmt)
    p.add_argument("--model", required=True, help="weights file")
    p.add_argument("--in", dest="input", required=True, help="input PPM")
    p.add_argument("--out", required=True, help="output mask PPM")
    p.add_argument("--fused", action="store_true", help="fold batchnorm into the convolutions first")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("classic", help="classical bloom mask of one image", formatter_class=fmt)
    p.add_argument("--in", dest="input", required=True, help="input PPM")
    p.add_argument("--out", required=True, help="output mask PPM")
    _bloom_flags(p)
    p.set_defaults(func=cmd_classic)

    p = sub.add_parser("compose", help="add a mask onto an image", formatter_class=fmt)
    p.add_argument("--in", dest="input", required=True, help="input PPM")
    p.add_argument("--mask", required=True, help="mask PPM")
    p.add_argument("--out", required=True, help="output PPM")
    p.add_argument("--intensity", type=float, default=BloomParams().intensity, help="mask strength")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("eval", help="per-image MSE against stored targets", formatter_class=fmt)
    p.add_argument("--method", choices=[NBL, FASTNBL, "classic"], required=True, help="mask producer")
    p.add_argument("--weights", default=None, help="weights file (nbl/fastnbl)")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", choices=["all", "train", "val"], default="all", help="which pairs to score")
    p.add_argument("--val-fraction", type=float, default=0.1, help="held-out share used by --split")
    p.add_argument("--unfused", action="store_true", help="skip conv-batchnorm fusion")
    p.add_argument("--report", default=None, help="write table, key=value records and histogram here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="latency percentiles per method", formatter_class=fmt)
    p.add_argument("--methods", default="classic,nbl,fastnbl", help="comma-separated methods")
    p.add_argument("--weights", nargs="*", default=[], help="weights files, model kind read from each")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--reps", type=int, default=50, help="timed runs per image")
    p.add_argument("--trim", type=float, default=0.02, help="fraction dropped from each tail")
    p.add_argument("--warmup", type=int, default=5, help="untimed runs per image")
    p.add_argument("--limit", type=int, default=None, help="benchmark only the first N images")
    p.add_argument("--unfused", action="store_true", help="skip conv-batchnorm fusion")
    p.add_argument("--report", default=None, help="write table, key=value records and figure here")
    p.set_defaults(func=cmd_bench)
    return parser


USER_ERRORS = (UsageError, ValueError, OSError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    try:
        args.func(args)
    except USER_ERRORS as exc:
        print(f"neural-bloom {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # anything else is a bug or a numerical failure
        print(f"neural-bloom {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0
