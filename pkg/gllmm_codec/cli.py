"""Command line interface."""

from __future__ import annotations

import argparse
from dataclasses import asdict
import json
import logging
from pathlib import Path
import sys

import numpy as np

from . import weight_store
from .codec import Bitstream, compress, decode_bytes, to_tensor
from .config import (
    fit_config_from_document,
    load_document,
    load_model_config,
    model_config_from_document,
    write_sidecar,
)
from .const import (
    BITSTREAM_MAGIC,
    DEFAULT_ABLATION_FAMILIES,
    DEFAULT_FIT_SEED,
    DISTORTION_METRICS,
    EXIT_DATA_ERROR,
    EXIT_OK,
    EXIT_USAGE,
    FAMILY_CONFIGS,
    SOURCE_GENERATORS,
    default_filters,
)
from .diagnostics import bitstream_diagnostics, weight_diagnostics
from .entropy import quantize
from .errors import ConfigError, GllmmCodecError
from .fitting import ablation_run, fit_factorized, fit_mixture, read_samples
from .harness import (
    average_points,
    list_images,
    rd_curve,
    read_image,
    run_codec,
    score,
    write_image,
)
from .network import analysis_transform, describe, hyper_analysis
from .weight_layout import FACTORIZED_NAME

_LOGGER = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _families(value):
    names = [name.strip() for name in value.split(",") if name.strip()]
    for name in names:
        if name not in FAMILY_CONFIGS:
            raise argparse.ArgumentTypeError(f"unknown family {name}")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gllmm-codec", description="Learned image codec with mixture entropy models")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def model_options(sub):
        sub.add_argument("--weights", required=True, help="GLWS weight file")
        sub.add_argument("--config", help="JSON config document (default: weights sidecar)")

    sub = commands.add_parser("init-weights", help="write a seeded random model")
    sub.add_argument("--output", required=True)
    sub.add_argument("--config")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--lambda", dest="lmbda", type=float)
    sub.add_argument("--filters", type=int)
    sub.add_argument("--crm-stages", type=int)
    sub.add_argument("--metric", choices=DISTORTION_METRICS, default=DISTORTION_METRICS[0])

    sub = commands.add_parser("encode", help="compress a PNG")
    sub.add_argument("--input", required=True)
    sub.add_argument("--output", required=True)
    model_options(sub)

    sub = commands.add_parser("decode", help="decompress a bitstream to PNG")
    sub.add_argument("--input", required=True)
    sub.add_argument("--output", required=True)
    model_options(sub)

    sub = commands.add_parser("eval", help="rate-distortion metrics for one image")
    sub.add_argument("--input", required=True)
    sub.add_argument("--output")
    model_options(sub)

    sub = commands.add_parser("fit", help="fit mixtures to an i32 sample file")
    sub.add_argument("--input", required=True)
    sub.add_argument("--families", type=_families, default=["GLLMM"])
    sub.add_argument("--config")
    sub.add_argument("--seed", type=int)

    sub = commands.add_parser("fit-hyper", help="calibrate the factorized hyper-latent model")
    sub.add_argument("--input", required=True, help="PNG file or directory of PNGs")
    sub.add_argument("--output", required=True)
    model_options(sub)

    sub = commands.add_parser("ablate", help="compare family sets on a synthetic source")
    sub.add_argument("--source", choices=sorted(SOURCE_GENERATORS), default="mixed")
    sub.add_argument("--families", type=_families, default=DEFAULT_ABLATION_FAMILIES)
    sub.add_argument("--samples", type=int, default=50000)
    sub.add_argument("--seed", type=int, default=DEFAULT_FIT_SEED)
    sub.add_argument("--config")
    sub.add_argument("--output")

    sub = commands.add_parser("rd-curve", help="evaluate a dataset under several weight files")
    sub.add_argument("--input", required=True, help="directory of PNGs")
    sub.add_argument("--weights", required=True, help="comma separated weight files")
    sub.add_argument("--output", required=True)
    sub.add_argument("--workers", type=int, default=1)

    sub = commands.add_parser("inspect", help="describe a bitstream or weight file")
    sub.add_argument("--input", required=True)
    sub.add_argument("--config")
    return parser


def _load_model(args):
    cfg = load_model_config(args.config, weights_path=args.weights)
    return weight_store.load(args.weights, cfg), cfg


def _print_json(data, output=None):
    text = json.dumps(data, indent=2, sort_keys=True)
    if output:
        Path(output).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def cmd_init_weights(args):
    document = load_document(args.config) if args.config else {}
    overrides = {"lmbda": args.lmbda, "crm_stages": args.crm_stages}
    if args.filters is not None:
        overrides["latent_channels"] = args.filters
    elif args.lmbda is not None:
        overrides["latent_channels"] = default_filters(args.lmbda, args.metric)
    cfg = model_config_from_document(document, **overrides)
    w = weight_store.init_random(cfg, args.seed)
    weight_store.save(w, args.output)
    write_sidecar(args.output, cfg)
    _LOGGER.info("Wrote %s (%s)", args.output, describe(cfg))


def cmd_encode(args):
    w, cfg = _load_model(args)
    bitstream = compress(read_image(args.input), w, cfg)
    Path(args.output).write_bytes(bitstream.to_bytes())


def cmd_decode(args):
    w, cfg = _load_model(args)
    data = Path(args.input).read_bytes()
    write_image(args.output, decode_bytes(data, w, cfg))


def cmd_eval(args):
    w, cfg = _load_model(args)
    image = read_image(args.input)
    run = run_codec(image, w, cfg)
    data = {
        "image": Path(args.input).name,
        "lambda": cfg.lmbda,
        "filters": cfg.latent_channels,
        "metrics": asdict(score(image, run)),
        "bitstream": bitstream_diagnostics(run.bitstream),
        "weights": weight_diagnostics(w, cfg),
    }
    _print_json(data, args.output)


def cmd_fit(args):
    document = load_document(args.config) if args.config else {}
    base = fit_config_from_document(document, seed=args.seed)
    samples = read_samples(args.input)
    for family in args.families:
        result = fit_mixture(samples, base.with_counts(FAMILY_CONFIGS[family]["counts"]))
        print(
            json.dumps(
                {
                    "family": family,
                    "bits_per_symbol": result.bits_per_symbol,
                    "iterations": result.iterations,
                    "restart": result.restart,
                    "n_samples": int(samples.size),
                }
            )
        )


def cmd_fit_hyper(args):
    w, cfg = _load_model(args)
    source = Path(args.input)
    paths = list_images(source) if source.is_dir() else [source]
    per_channel = [[] for _ in range(cfg.hyper_channels)]
    for path in paths:
        y = analysis_transform(to_tensor(read_image(path)), w)
        z_hat = quantize(hyper_analysis(y, w), cfg.z_alphabet)
        for channel in range(cfg.hyper_channels):
            per_channel[channel].append(z_hat.data[0, channel].ravel())
    samples = [np.concatenate(values) if values else np.zeros(0) for values in per_channel]
    model = fit_factorized(samples, cfg.z_alphabet)
    weight_store.save(w.replace(FACTORIZED_NAME, model.logits()), args.output)
    write_sidecar(args.output, cfg)
    _LOGGER.info("Calibrated the factorized model on %d images", len(paths))


def cmd_ablate(args):
    document = load_document(args.config) if args.config else {}
    cfg = fit_config_from_document(document, seed=args.seed)
    rows = ablation_run(args.source, args.families, args.samples, args.seed, cfg, args.output)
    if not args.output:
        for row in rows:
            print(f"{row['family']:<8} {row['bits_per_symbol']:.5f}")


def cmd_rd_curve(args):
    weight_sets = []
    for path in args.weights.split(","):
        cfg = load_model_config(weights_path=path)
        weight_sets.append((weight_store.load(path, cfg), cfg))
    rows = rd_curve(args.input, weight_sets, args.output, workers=args.workers)
    for point in average_points(rows):
        _LOGGER.info(
            "lambda %s filters %d: %.4f bpp, %.2f dB",
            point["lambda"],
            point["filters"],
            point["bpp"],
            point["psnr_db"],
        )


def cmd_inspect(args):
    data = Path(args.input).read_bytes()
    if data[:4] == BITSTREAM_MAGIC:
        _print_json(bitstream_diagnostics(Bitstream.from_bytes(data)))
        return
    cfg = load_model_config(args.config, weights_path=args.input)
    _print_json(weight_diagnostics(weight_store.from_bytes(data), cfg))


COMMANDS = {
    "init-weights": cmd_init_weights,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "fit": cmd_fit,
    "fit-hyper": cmd_fit_hyper,
    "ablate": cmd_ablate,
    "rd-curve": cmd_rd_curve,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(f"{parser.prog}: {err}", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        COMMANDS[args.command](args)
    except ConfigError as err:
        _LOGGER.error("%s", err)
        return EXIT_USAGE
    except (GllmmCodecError, OSError) as err:
        _LOGGER.error("%s", err)
        return EXIT_DATA_ERROR
    return EXIT_OK
