import argparse
import json
import os
import sys
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np
import pandas as pd

from utils import config
from utils.console_logger import LogLevel, error, info, logger, section, success
from utils.errors import CodecError, ConfigurationError


def load_settings_file(path):
    """Load a settings override file (JSON or TOML)"""
    if path.endswith(".toml"):
        with open(path, "rb") as f:
            return tomllib.load(f)
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def cmd_train(args):
    from training.trainer import TrainConfig, train

    train_config = TrainConfig(
        corpus=args.corpus, out=args.out, lmbda=args.lmbda, distortion=args.distortion,
        model_kind=args.model, n_filters=args.N, m_filters=args.M, crop_size=args.crop,
        batch_size=args.batch, learning_rate=args.lr, steps=args.steps, seed=args.seed,
        checkpoint_every=args.checkpoint_every, metrics_csv=args.metrics_csv,
        single_threaded=args.single_threaded, num_workers=args.workers, downsample=args.downsample,
        resume=args.resume,
    )
    result = train(train_config)
    info(f"Final loss {result.final_loss:.5f} after {result.steps_run} steps ({result.wall_time:.1f}s)")


def cmd_sweep(args):
    from training.sweep import load_sweep_config, rd_sweep

    sweep = load_sweep_config(args.config)
    if args.steps is not None:
        sweep.steps = args.steps
    rd_sweep(sweep, csv_path=args.csv)


def cmd_compress(args):
    from codec.codec import encode_image
    from codec.image_io import read_image
    from models.checkpoint import load_checkpoint

    checkpoint = load_checkpoint(args.ckpt)
    image = read_image(args.input)
    result = encode_image(checkpoint.model, image, checkpoint.identity)
    with open(args.out, "wb") as f:
        f.write(result.data)

    rates = result.container.rates()
    overhead = result.container.overhead()
    success(f"{args.input} -> {args.out}: {overhead['total']} bytes, {rates['bpp_total']:.4f} bpp "
            f"(side {rates['bpp_side']:.4f}, header {overhead['header']} bytes) in {result.seconds:.2f}s")


def cmd_decompress(args):
    from codec.codec import decode_container
    from codec.container import BitstreamContainer
    from codec.image_io import write_image
    from models.checkpoint import load_checkpoint

    checkpoint = load_checkpoint(args.ckpt)
    with open(args.input, "rb") as f:
        container = BitstreamContainer.from_bytes(f.read())
    result = decode_container(checkpoint.model, container, checkpoint.identity)
    write_image(args.out, result.x_hat)
    success(f"{args.input} -> {args.out}: {container.width}x{container.height} in {result.seconds:.2f}s")


def cmd_eval(args):
    from codec.evaluation import aggregate_by_lambda, aggregate_by_rate, evaluate, records_frame
    from codec.image_io import read_image
    from models.checkpoint import load_checkpoint
    from training.corpus import list_images

    paths = list_images(args.images)
    if not paths:
        raise ConfigurationError(f"no images found in {args.images}")
    images = [(os.path.basename(p), read_image(p)) for p in paths]

    all_records, frames = [], []
    for path in args.ckpts:
        checkpoint = load_checkpoint(path)
        records, _ = evaluate(images, checkpoint)
        frame = records_frame(records)
        frame.insert(0, "checkpoint", os.path.basename(path))
        frame.insert(1, "model", checkpoint.architecture.model_kind)
        frame.insert(2, "lambda", checkpoint.architecture.lmbda)
        frames.append(frame)
        all_records.extend(records)

    pd.concat(frames, ignore_index=True).to_csv(args.csv, index=False, float_format="%.6g")
    success(f"Wrote {len(all_records)} records to {args.csv}")

    if args.aggregate:
        table = aggregate_by_lambda(all_records) if args.aggregate == "lambda" else aggregate_by_rate(all_records)
        target = args.aggregate_csv or os.path.splitext(args.csv)[0] + f".by_{args.aggregate}.csv"
        table.to_csv(target, index=False, float_format="%.6g")
        success(f"Wrote {args.aggregate}-aggregated curve ({len(table)} rows) to {target}")


def cmd_diagnostics(args):
    from codec.diagnostics import dump_diagnostics
    from codec.image_io import read_image
    from models.checkpoint import load_checkpoint

    result = dump_diagnostics(read_image(args.input), load_checkpoint(args.ckpt), args.outdir)
    print(result.sideinfo_row())


def cmd_fit_density(args):
    from density.fitting import fit_density, sample_toy, toy_density, write_fit_csv
    from density.nonparametric import NonParametricDensity

    rng = np.random.default_rng(args.seed)
    samples = sample_toy(args.distribution, args.samples, rng)
    filters = tuple(int(f) for f in args.filters.split(",") if f) if args.filters is not None else None
    model = NonParametricDensity(channels=1, filters=filters)
    result = fit_density(samples, model=model, steps=args.steps, noisy=not args.plain,
                         true_density=toy_density(args.distribution))
    write_fit_csv(result, args.csv)
    info(f"{args.distribution}: final NLL {result.final_nll:.5f} nats")


def build_parser():
    parser = argparse.ArgumentParser(description="Scale-hyperprior image codec")
    parser.add_argument("--settings", type=str, help="JSON or TOML file overriding utils/config.py settings")
    parser.add_argument("--log-level", choices=[level.name for level in LogLevel], default="INFO")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("train", help="Train one model at one lambda")
    p.add_argument("--corpus", required=True, help="Directory of training images")
    p.add_argument("--out", required=True, help="Checkpoint path")
    p.add_argument("--lambda", dest="lmbda", type=float, default=0.01)
    p.add_argument("--distortion", default=config.DEFAULT_DISTORTION, choices=["mse", "ms-ssim", "msssim"])
    p.add_argument("--model", default=config.DEFAULT_MODEL_KIND, choices=["factorized", "hyperprior"])
    p.add_argument("--N", type=int, default=config.DEFAULT_N)
    p.add_argument("--M", type=int, default=config.DEFAULT_M)
    p.add_argument("--crop", type=int, default=config.CROP_SIZE)
    p.add_argument("--batch", type=int, default=config.BATCH_SIZE)
    p.add_argument("--lr", type=float, default=config.LEARNING_RATE)
    p.add_argument("--steps", type=int, default=config.DEFAULT_STEPS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int, default=config.CHECKPOINT_EVERY)
    p.add_argument("--metrics-csv", type=str, default=None, help="Default: <out>.metrics.csv")
    p.add_argument("--single-threaded", action="store_true", help="Bit-reproducible single-threaded mode")
    p.add_argument("--workers", type=int, default=None, help="Batch assembly threads (default: physical cores)")
    p.add_argument("--downsample", action="store_true", help="Randomly downsample corpus images on load")
    p.add_argument("--resume", action="store_true", help="Continue from --out if it exists")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("sweep", help="Train and evaluate a grid of (N, M, lambda) models")
    p.add_argument("config", help="Sweep configuration (JSON or TOML)")
    p.add_argument("--csv", type=str, default=None)
    p.add_argument("--steps", type=int, default=None, help="Override the per-model step count")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("compress", help="Compress an image to a .bmsh container")
    p.add_argument("input")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_compress)

    p = sub.add_parser("decompress", help="Decompress a .bmsh container to an image")
    p.add_argument("input")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_decompress)

    p = sub.add_parser("eval", help="Rate-distortion records for a set of checkpoints")
    p.add_argument("--images", required=True)
    p.add_argument("--ckpts", required=True, nargs="+")
    p.add_argument("--csv", required=True)
    p.add_argument("--aggregate", choices=["lambda", "rate"], default=None)
    p.add_argument("--aggregate-csv", type=str, default=None)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("diagnostics", help="Dump latent, scale and normalized-latent planes")
    p.add_argument("input")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--outdir", required=True)
    p.set_defaults(handler=cmd_diagnostics)

    p = sub.add_parser("fit-density", help="Fit the non-parametric density to a toy distribution")
    p.add_argument("--distribution", choices=["uniform", "gaussian", "mixture", "constant"], default="mixture")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--steps", type=int, default=config.DENSITY_FIT_STEPS)
    p.add_argument("--filters", type=str, default=None, help="Comma-separated hidden widths, e.g. 3,3,3 ('' for K=1)")
    p.add_argument("--plain", action="store_true", help="Fit the density itself rather than its noisy version")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", required=True)
    p.set_defaults(handler=cmd_fit_density)
    return parser


def apply_settings_file(path):
    try:
        config.apply_settings(load_settings_file(path))
    except KeyError as e:
        raise ConfigurationError(f"{path}: {e.args[0]}") from e
    except (OSError, ValueError) as e:
        raise ConfigurationError(f"cannot read settings file {path}: {e}") from e
    info(f"Applied settings from {path}")


def main(argv=None):
    # Settings change the defaults shown by the subcommand parsers, so apply them first
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--settings", type=str)
    known, _ = pre.parse_known_args(argv)
    try:
        if known.settings:
            apply_settings_file(known.settings)
    except CodecError as e:
        error(str(e))
        return 1

    parser = build_parser()
    args = parser.parse_args(argv)
    logger.set_level(LogLevel[args.log_level])

    if getattr(args, "handler", None) is None:
        parser.print_help()
        return 0

    try:
        section(f"bmsh {args.command}", emoji="🗜️")
        started = time.time()
        args.handler(args)
        info(f"{args.command} finished in {time.time() - started:.2f}s", emoji="⏱️")
    except CodecError as e:
        error(str(e))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
