"""
diagnostics.py - Latent visualizations for a hyperprior model

For one image, writes per-channel planes of the latents y, the predicted
scales sigma = h_s(z_hat) and the normalized latents y / sigma as grayscale
PNGs, the same planes as long-format CSV, and the (bpp_total, bpp_side)
pair of the real coded stream.
"""
import os
from dataclasses import dataclass
from typing import Dict

import numpy as np
import pandas as pd
import torch

from codec.codec import encode_image
from codec.image_io import as_uint8, pad_image, to_tensor, write_grayscale
from models.compression import ScaleHyperpriorModel
from utils.console_logger import info, success
from utils.errors import ConfigurationError


@dataclass
class DiagnosticsResult:
    outdir: str
    bpp_total: float
    bpp_side: float
    autocorrelation: Dict[str, float]  # mean lag-1 autocorrelation per plane kind
    plane_shape: tuple

    def sideinfo_row(self) -> str:
        return sideinfo_row(self.bpp_total, self.bpp_side)


def sideinfo_row(bpp_total: float, bpp_side: float) -> str:
    return f"{bpp_total:.4g},{bpp_side:.3g}"


def lag1_autocorrelation(plane: np.ndarray) -> float:
    """Mean of the horizontal and vertical lag-1 correlation coefficients of a 2-D plane."""
    plane = np.asarray(plane, dtype=np.float64)
    centered = plane - plane.mean()
    variance = np.mean(centered ** 2)
    if variance <= 0:
        return 0.0
    coefficients = []
    if plane.shape[1] > 1:
        coefficients.append(np.mean(centered[:, 1:] * centered[:, :-1]) / variance)
    if plane.shape[0] > 1:
        coefficients.append(np.mean(centered[1:, :] * centered[:-1, :]) / variance)
    return float(np.mean(coefficients)) if coefficients else 0.0


def _long_frame(planes: np.ndarray) -> pd.DataFrame:
    channels, height, width = planes.shape
    c, r, w = np.meshgrid(np.arange(channels), np.arange(height), np.arange(width), indexing="ij")
    return pd.DataFrame({"channel": c.ravel(), "row": r.ravel(), "col": w.ravel(), "value": planes.ravel()})


def dump_diagnostics(image: np.ndarray, checkpoint, outdir: str) -> DiagnosticsResult:
    model = checkpoint.model
    if not isinstance(model, ScaleHyperpriorModel):
        raise ConfigurationError("diagnostics need a hyperprior checkpoint (there is no sigma otherwise)")
    os.makedirs(outdir, exist_ok=True)
    image = as_uint8(image)

    encoded = encode_image(model, image, checkpoint.identity)
    with torch.no_grad():
        y = model.analysis(to_tensor(pad_image(image, model.architecture.pad_multiple)))
        scales = model.hyper_synthesis(torch.from_numpy(encoded.z_hat)).scales
    planes = {
        "y": y[0].double().numpy(),
        "sigma": scales[0].double().numpy(),
    }
    planes["normalized"] = planes["y"] / planes["sigma"]

    autocorrelation = {}
    for kind, stack in planes.items():
        for channel, plane in enumerate(stack):
            write_grayscale(os.path.join(outdir, f"{kind}_c{channel:03d}.png"), plane)
        _long_frame(stack).to_csv(os.path.join(outdir, f"{kind}.csv"), index=False, float_format="%.6g")
        autocorrelation[kind] = float(np.mean([lag1_autocorrelation(plane) for plane in stack]))

    rates = encoded.container.rates()
    pd.DataFrame([{"bpp_total": rates["bpp_total"], "bpp_side": rates["bpp_side"]}]).to_csv(
        os.path.join(outdir, "sideinfo.csv"), index=False, float_format="%.6g")

    info(f"Lag-1 autocorrelation: y={autocorrelation['y']:.3f}, y/sigma={autocorrelation['normalized']:.3f}")
    success(f"Diagnostics for {planes['y'].shape[0]} channels written to {outdir} "
            f"(side info {sideinfo_row(rates['bpp_total'], rates['bpp_side'])})")
    return DiagnosticsResult(outdir, rates["bpp_total"], rates["bpp_side"], autocorrelation,
                             tuple(planes["y"].shape))
