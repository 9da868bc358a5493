"""Rate-distortion evaluation over images and weight sets."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import asdict, dataclass
import logging
from pathlib import Path
import time

import numpy as np
from PIL import Image, UnidentifiedImageError

from .codec import Bitstream, compress, decompress
from .const import CSV_CURVE_HEADER, IMAGE_SUFFIXES
from .errors import GllmmCodecError, ParameterError, ShapeError
from .metrics import ms_ssim, msssim_db, msssim_levels, psnr
from .network import ModelConfig
from .weight_store import WeightStore

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class Metrics:
    psnr_db: float
    msssim: float
    msssim_db: float
    bpp: float
    enc_ms: float
    dec_ms: float

    def __post_init__(self):
        if self.bpp < 0:
            raise ParameterError(f"Rate must not be negative, got {self.bpp}")


def read_image(path) -> np.ndarray:
    """Load an image file as (H, W, 3) uint8 RGB."""
    try:
        with Image.open(path) as image:
            return np.asarray(image.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, UnidentifiedImageError) as err:
        raise ShapeError(f"Cannot read image {path}: {err}") from err


def write_image(path, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path, format="PNG")


@dataclass(frozen=True)
class CodecRun:
    bitstream: Bitstream
    recon: np.ndarray
    enc_ms: float
    dec_ms: float


def run_codec(image: np.ndarray, w: WeightStore, cfg: ModelConfig) -> CodecRun:
    start = time.perf_counter()
    bitstream = compress(image, w, cfg)
    encoded = time.perf_counter()
    recon = decompress(bitstream, w, cfg)
    decoded = time.perf_counter()
    return CodecRun(bitstream, recon, 1000.0 * (encoded - start), 1000.0 * (decoded - encoded))


def score(image: np.ndarray, run: CodecRun) -> Metrics:
    recon = run.recon
    if msssim_levels(*image.shape[:2]):
        similarity = ms_ssim(image, recon)
    else:
        _LOGGER.warning("Image %s too small for MS-SSIM, reporting 0", image.shape[:2])
        similarity = 0.0
    return Metrics(
        psnr_db=psnr(image, recon),
        msssim=similarity,
        msssim_db=msssim_db(similarity),
        bpp=run.bitstream.bpp,
        enc_ms=run.enc_ms,
        dec_ms=run.dec_ms,
    )


def evaluate_image(image: np.ndarray, w: WeightStore, cfg: ModelConfig) -> Metrics:
    """Compress, decompress and score one image."""
    return score(image, run_codec(image, w, cfg))


def rd_point(path, w: WeightStore, cfg: ModelConfig) -> Metrics:
    metrics = evaluate_image(read_image(path), w, cfg)
    _LOGGER.info(
        "%s: %.4f bpp, %.2f dB PSNR, %.4f MS-SSIM",
        Path(path).name,
        metrics.bpp,
        metrics.psnr_db,
        metrics.msssim,
    )
    return metrics


def list_images(dataset_dir) -> list:
    dataset_dir = Path(dataset_dir)
    if not dataset_dir.is_dir():
        raise ShapeError(f"Dataset {dataset_dir} is not a directory")
    return sorted(p for p in dataset_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _curve_row(path, w, cfg):
    try:
        metrics = rd_point(path, w, cfg)
    except (GllmmCodecError, OSError) as err:
        _LOGGER.warning("Skipping %s: %s", path, err)
        return None
    return {
        "image": Path(path).name,
        "lambda": cfg.lmbda,
        "filters": cfg.latent_channels,
        **asdict(metrics),
    }


def rd_curve(dataset_dir, weight_sets, output=None, workers: int = 1) -> list:
    """Evaluate every image under every (weights, config) pair.

    Rows are sorted by bpp and written as CSV when output is given.
    Images that fail are logged and skipped.
    """
    images = list_images(dataset_dir)
    if not images:
        _LOGGER.warning("No images found in %s", dataset_dir)

    rows = []
    for w, cfg in weight_sets:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            results = list(pool.map(lambda path: _curve_row(path, w, cfg), images))
        rows.extend(row for row in results if row is not None)
    rows.sort(key=lambda row: (row["bpp"], row["lambda"], row["image"]))

    if output is not None:
        write_curve_csv(output, rows)
    return rows


def write_curve_csv(output, rows) -> None:
    with open(output, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=CSV_CURVE_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: row[key] for key in CSV_CURVE_HEADER})
    _LOGGER.info("Wrote %d rate-distortion rows to %s", len(rows), output)


def average_points(rows) -> list:
    """Per-config averages of per-image metrics, sorted by bpp."""
    groups = {}
    for row in rows:
        groups.setdefault((row["lambda"], row["filters"]), []).append(row)
    averages = []
    for (lmbda, filters), members in groups.items():
        averaged = {"lambda": lmbda, "filters": filters, "images": len(members)}
        for key in ("bpp", "psnr_db", "msssim", "msssim_db", "enc_ms", "dec_ms"):
            averaged[key] = float(np.mean([member[key] for member in members]))
        averages.append(averaged)
    return sorted(averages, key=lambda row: row["bpp"])


def format_table_row(
    dataset: str, name: str, filters: int, lmbda: float, objective: str, metrics: Metrics
) -> str:
    """One printed result row: dataset, model, filters, lambda, objective, bpp, PSNR, MS-SSIM."""
    return (
        f"{dataset:<10} {name:<12} {filters:>4d} {lmbda:>8.4g} {objective:<8} "
        f"{metrics.bpp:>7.4f} {metrics.psnr_db:>7.2f} {metrics.msssim_db:>7.2f}"
    )
