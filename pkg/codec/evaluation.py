"""
evaluation.py - Rate-distortion records and their aggregation

PSNR uses the 8-bit convention 10*log10(255^2 / MSE) on the decoded 8-bit
image, capped at PSNR_CAP_DB for identical images. MS-SSIM is reported raw
and in decibels, -10*log10(1 - MS-SSIM), with the same cap.

Two aggregations over a set of models:
- by lambda: mean rate and distortion over images for each lambda
- by rate: each image's curve is interpolated with a cubic spline in bpp,
  sampled at fixed rates inside its range, and averaged across images
"""
import math
from dataclasses import asdict, dataclass, fields
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from scipy.interpolate import CubicSpline

from codec.codec import decode_container, encode_image
from codec.image_io import as_uint8
from models.distortion import ms_ssim as ms_ssim_tensor
from utils import config
from utils.console_logger import info, progress_bar
from utils.errors import ConfigurationError

RECORD_COLUMNS = ["image", "bpp_total", "bpp_side", "psnr", "ms_ssim", "ms_ssim_db",
                  "encode_seconds", "decode_seconds"]
GROUP_COLUMNS = ["model", "N", "M", "lambda"]


@dataclass
class RdRecord:
    image: str
    bpp_total: float
    bpp_side: float
    psnr: float
    ms_ssim: float
    ms_ssim_db: float
    encode_seconds: float = 0.0
    decode_seconds: float = 0.0
    model: str = ""
    N: int = 0
    M: int = 0
    lmbda: float = 0.0

    def __post_init__(self):
        if self.bpp_side > self.bpp_total:
            raise ValueError(f"side information ({self.bpp_side}) exceeds total rate ({self.bpp_total})")


def psnr(reference: np.ndarray, decoded: np.ndarray) -> float:
    a = as_uint8(reference).astype(np.float64)
    b = as_uint8(decoded).astype(np.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"images differ in shape: {a.shape} vs {b.shape}")
    error = np.mean((a - b) ** 2)
    if error == 0:
        return config.PSNR_CAP_DB
    return min(10 * math.log10(255.0 ** 2 / error), config.PSNR_CAP_DB)


def ms_ssim(reference: np.ndarray, decoded: np.ndarray) -> float:
    def tensor(pixels):
        array = as_uint8(pixels).astype(np.float64) / 255.0
        return torch.from_numpy(array.transpose(2, 0, 1).copy())[None]

    with torch.no_grad():
        return float(ms_ssim_tensor(tensor(reference), tensor(decoded)))


def ms_ssim_db(value: float) -> float:
    if value >= 1.0:
        return config.PSNR_CAP_DB
    return min(-10 * math.log10(1 - value), config.PSNR_CAP_DB)


def evaluate_image(name: str, image: np.ndarray, checkpoint) -> RdRecord:
    image = as_uint8(image)
    encoded = encode_image(checkpoint.model, image, checkpoint.identity)
    decoded = decode_container(checkpoint.model, encoded.container, checkpoint.identity)
    rates = encoded.container.rates()
    similarity = ms_ssim(image, decoded.x_hat)
    arch = checkpoint.architecture
    return RdRecord(image=name, bpp_total=rates["bpp_total"], bpp_side=rates["bpp_side"],
                    psnr=psnr(image, decoded.x_hat), ms_ssim=similarity, ms_ssim_db=ms_ssim_db(similarity),
                    encode_seconds=encoded.seconds, decode_seconds=decoded.seconds,
                    model=arch.model_kind, N=arch.n_filters, M=arch.m_filters, lmbda=arch.lmbda)


def records_frame(records: Sequence[RdRecord]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in records], columns=[f.name for f in fields(RdRecord)])[RECORD_COLUMNS]


def evaluate(images: Sequence[Tuple[str, np.ndarray]], checkpoint) -> Tuple[List[RdRecord], dict]:
    """Compress and decompress every image; per-image records and their mean."""
    if not images:
        raise ConfigurationError("evaluation set is empty")
    records = [evaluate_image(name, pixels, checkpoint)
               for name, pixels in progress_bar(images, total=len(images), desc="Evaluating", unit="img")]
    frame = pd.DataFrame([asdict(r) for r in records])
    mean = frame[RECORD_COLUMNS[1:]].mean().to_dict()
    info(f"{checkpoint.architecture.model_kind} lambda={checkpoint.architecture.lmbda:g}: "
         f"{mean['bpp_total']:.4f} bpp, {mean['psnr']:.2f} dB PSNR, {mean['ms_ssim_db']:.2f} dB MS-SSIM")
    return records, mean


def _all_records_frame(records: Sequence[RdRecord]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in records]).rename(columns={"lmbda": "lambda"})


def aggregate_by_lambda(records: Sequence[RdRecord]) -> pd.DataFrame:
    """Mean bpp and distortion over images at equal lambda (one row per model configuration)."""
    frame = _all_records_frame(records)
    metrics = ["bpp_total", "bpp_side", "psnr", "ms_ssim", "ms_ssim_db"]
    grouped = frame.groupby(GROUP_COLUMNS, as_index=False)[metrics].mean()
    grouped["images"] = frame.groupby(GROUP_COLUMNS).size().values
    return grouped.sort_values(["model", "N", "M", "lambda"]).reset_index(drop=True)


def aggregate_by_rate(records: Sequence[RdRecord], rates: Optional[Sequence[float]] = None,
                      metric: str = "ms_ssim_db") -> pd.DataFrame:
    """Average of per-image spline interpolants of `metric` over bpp, at each requested rate."""
    rates = list(config.RATE_AGGREGATION_POINTS if rates is None else rates)
    frame = _all_records_frame(records)
    rows = []
    for (model, n, m), group in frame.groupby(["model", "N", "M"]):
        samples = {rate: [] for rate in rates}
        for _, curve in group.groupby("image"):
            curve = curve.groupby("bpp_total", as_index=False)[metric].mean().sort_values("bpp_total")
            if len(curve) < 2:
                continue
            spline = CubicSpline(curve["bpp_total"].to_numpy(), curve[metric].to_numpy())
            lo, hi = curve["bpp_total"].iloc[0], curve["bpp_total"].iloc[-1]
            for rate in rates:
                if lo <= rate <= hi:
                    samples[rate].append(float(spline(rate)))
        for rate in rates:
            if samples[rate]:
                rows.append({"model": model, "N": n, "M": m, "bpp": rate,
                             metric: float(np.mean(samples[rate])), "images": len(samples[rate])})
    return pd.DataFrame(rows, columns=["model", "N", "M", "bpp", metric, "images"])
