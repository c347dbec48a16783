"""Command line interface: ``ntc train | compress | decompress | eval | rdcurve``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .codec import compress, decompress, rd_curve
from .container import CodecModel, ModelRegistry
from .errors import NTCError, ParameterError
from .imageio import read_directory, read_image, write_image
from .metrics import ms_ssim, psnr
from .trainer import TrainConfig, preprocess_dataset, train
from .transforms import PRESETS, preset

log = logging.getLogger("ntc")


class JsonFormatter(logging.Formatter):
    def format(self, record):
        entry = {"level": record.levelname.lower(), "logger": record.name, "message": record.getMessage()}
        entry.update(getattr(record, "fields", {}))
        return json.dumps(entry)


def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def _finite(x):
    return x if isinstance(x, float) and math.isfinite(x) else None


# ------------------------------------------------------------------ commands


def cmd_train(args) -> int:
    spec = preset(args.preset)
    images = read_directory(args.data, args.max_images)
    if not images:
        raise ParameterError(f"no readable images in {args.data}")
    patches = preprocess_dataset(images, args.seed, patch_size=args.patch_size, color=spec.color,
                                 patches_per_image=args.patches_per_image)
    if len(patches) == 0:
        raise ParameterError("no usable training patches (all images too small or saturated)")
    log.info("dataset ready", extra={"fields": {"images": len(images), "patches": len(patches)}})
    config = TrainConfig(
        lmbda=args.lmbda, initial_step=args.initial_step, batch_size=args.batch_size,
        max_steps=args.steps, seed=args.seed, density_fit_step=args.density_fit_step,
        range_adapt_every=args.range_adapt_every,
    )
    stream = open(args.log, "w") if args.log else None
    try:
        def progress(entry):
            if entry["step"] % args.log_every == 0:
                log.info("step", extra={"fields": entry})

        result = train(config, patches / 255.0, spec, log_stream=stream, callback=progress)
    finally:
        if stream:
            stream.close()
    registry = ModelRegistry.load(args.output) if args.append and Path(args.output).exists() else ModelRegistry()
    registry.add(args.lambda_index, CodecModel.from_training(result, preset=args.preset))
    registry.save(args.output)
    log.info("model written", extra={"fields": {"path": str(args.output), "lambda_index": args.lambda_index}})
    return 0


def cmd_compress(args) -> int:
    registry = ModelRegistry.load(args.model)
    data = compress(read_image(args.input), args.lambda_index, registry)
    Path(args.output).write_bytes(data)
    log.info("compressed", extra={"fields": {"bytes": len(data)}})
    return 0


def cmd_decompress(args) -> int:
    registry = ModelRegistry.load(args.model)
    write_image(args.output, decompress(Path(args.input).read_bytes(), registry))
    return 0


def cmd_eval(args) -> int:
    ref, test = read_image(args.ref), read_image(args.test)
    report = {"psnr": _finite(psnr(ref, test))}
    if ref.ndim == 3:
        report["psnr_chroma"] = _finite(psnr(ref, test, "chroma"))
    try:
        report["ms_ssim"] = ms_ssim(ref, test)
    except ParameterError as exc:
        report["ms_ssim"] = None
        log.warning(str(exc))
    print(json.dumps(report))
    return 0


def cmd_rdcurve(args) -> int:
    registry = ModelRegistry.load(args.model)
    images = read_directory(args.images, args.max_images)
    if not images:
        raise ParameterError(f"no readable images in {args.images}")
    points = rd_curve(images, registry, args.lambda_index or None)
    text = json.dumps({"points": points}, indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n")
    else:
        print(text)
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ntc", description="Learned nonlinear transform image codec.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model at one lambda")
    t.add_argument("--lambda", dest="lmbda", type=float, required=True)
    t.add_argument("--lambda-index", type=int, default=0)
    t.add_argument("--preset", default="desk", choices=sorted(PRESETS))
    t.add_argument("--data", required=True, help="directory of training images")
    t.add_argument("--max-images", type=int)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--steps", type=int, default=2000)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--patch-size", type=int, default=64)
    t.add_argument("--patches-per-image", type=int, default=16)
    t.add_argument("--initial-step", type=float, default=1e-3)
    t.add_argument("--density-fit-step", type=float, default=0.5)
    t.add_argument("--range-adapt-every", type=int, default=100)
    t.add_argument("--log", help="write the per-step NDJSON training log here")
    t.add_argument("--log-every", type=int, default=100)
    t.add_argument("--append", action="store_true", help="add to an existing model file")
    t.add_argument("-o", "--output", required=True)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compress")
    c.add_argument("-m", "--model", action="append", required=True)
    c.add_argument("-l", "--lambda-index", type=int, default=0)
    c.add_argument("input")
    c.add_argument("output")
    c.set_defaults(func=cmd_compress)

    d = sub.add_parser("decompress")
    d.add_argument("-m", "--model", action="append", required=True)
    d.add_argument("input")
    d.add_argument("output")
    d.set_defaults(func=cmd_decompress)

    e = sub.add_parser("eval", help="PSNR and MS-SSIM between two images")
    e.add_argument("--ref", required=True)
    e.add_argument("--test", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("rdcurve", help="rate-distortion points from actual file sizes")
    r.add_argument("-m", "--model", action="append", required=True)
    r.add_argument("--images", required=True)
    r.add_argument("--max-images", type=int)
    r.add_argument("-l", "--lambda-index", type=int, action="append")
    r.add_argument("-o", "--output")
    r.set_defaults(func=cmd_rdcurve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except NTCError as exc:
        log.error(str(exc), extra={"fields": {"error": type(exc).__name__}})
        return exc.exit_code
    except OSError as exc:
        log.error(str(exc), extra={"fields": {"error": type(exc).__name__}})
        return 2


if __name__ == "__main__":
    sys.exit(main())
