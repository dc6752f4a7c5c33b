"""
distortion.py - Squared error and MS-SSIM on [0, 1] pixels

MS-SSIM follows the usual construction: a separable 11x11 Gaussian window
(sigma 1.5), contrast-structure terms at every scale, luminance at the
coarsest, 2x average pooling between scales. Images too small for five
scales use fewer, with the leading weights renormalized; images smaller
than the window shrink the window to the largest odd size that fits.
"""
from typing import Optional, Tuple

import torch
import torch.nn.functional as F

from utils import config
from utils.errors import ConfigurationError


def mse(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    _check_shapes(x, x_hat)
    return torch.mean((x - x_hat) ** 2)


def _check_shapes(x: torch.Tensor, x_hat: torch.Tensor) -> None:
    if x.shape != x_hat.shape:
        raise ConfigurationError(f"distortion inputs differ in shape: {tuple(x.shape)} vs {tuple(x_hat.shape)}")


def _gaussian_window(size: int, sigma: float, dtype: torch.dtype) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype) - size // 2
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _blur(x: torch.Tensor, window: torch.Tensor) -> torch.Tensor:
    channels = x.shape[1]
    size = window.numel()
    horizontal = window.reshape(1, 1, 1, size).repeat(channels, 1, 1, 1)
    vertical = window.reshape(1, 1, size, 1).repeat(channels, 1, 1, 1)
    x = F.conv2d(x, horizontal, groups=channels)
    return F.conv2d(x, vertical, groups=channels)


def _ssim_terms(x: torch.Tensor, y: torch.Tensor, window: torch.Tensor,
                data_range: float) -> Tuple[torch.Tensor, torch.Tensor]:
    k1, k2 = config.MS_SSIM_K
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    mu_x = _blur(x, window)
    mu_y = _blur(y, window)
    mu_xx = mu_x * mu_x
    mu_yy = mu_y * mu_y
    mu_xy = mu_x * mu_y
    var_x = _blur(x * x, window) - mu_xx
    var_y = _blur(y * y, window) - mu_yy
    cov_xy = _blur(x * y, window) - mu_xy

    cs_map = (2 * cov_xy + c2) / (var_x + var_y + c2)
    ssim_map = ((2 * mu_xy + c1) / (mu_xx + mu_yy + c1)) * cs_map
    return ssim_map.flatten(2).mean(-1), cs_map.flatten(2).mean(-1)


def scale_count(height: int, width: int, window: int) -> int:
    scales = len(config.MS_SSIM_WEIGHTS)
    while scales > 1 and min(height, width) / 2 ** (scales - 1) < window:
        scales -= 1
    return scales


def ms_ssim(x: torch.Tensor, x_hat: torch.Tensor, data_range: float = 1.0,
            scales: Optional[int] = None) -> torch.Tensor:
    """Mean MS-SSIM over the batch; 1 for identical inputs."""
    _check_shapes(x, x_hat)
    if x.dim() != 4:
        raise ConfigurationError(f"ms_ssim expects NCHW tensors, got {tuple(x.shape)}")

    height, width = x.shape[-2:]
    size = min(config.MS_SSIM_WINDOW, height, width)
    if size % 2 == 0:
        size -= 1
    scales = scale_count(height, width, size) if scales is None else scales
    weights = torch.tensor(config.MS_SSIM_WEIGHTS[:scales], dtype=x.dtype, device=x.device)
    weights = weights / weights.sum()
    window = _gaussian_window(size, config.MS_SSIM_SIGMA, x.dtype).to(x.device)

    factors = []
    for s in range(scales):
        ssim_value, cs_value = _ssim_terms(x, x_hat, window, data_range)
        if s < scales - 1:
            factors.append(torch.relu(cs_value))
            x = F.avg_pool2d(x, kernel_size=2)
            x_hat = F.avg_pool2d(x_hat, kernel_size=2)
        else:
            factors.append(torch.relu(ssim_value))

    stacked = torch.stack(factors, dim=0)  # (scales, B, C)
    value = torch.prod(stacked ** weights.reshape(-1, 1, 1), dim=0)
    return value.mean()


def distortion(x: torch.Tensor, x_hat: torch.Tensor, kind: str = "mse") -> torch.Tensor:
    if kind == "mse":
        return mse(x, x_hat)
    if kind in ("ms-ssim", "msssim"):
        return 1 - ms_ssim(x, x_hat)
    raise ConfigurationError(f"unknown distortion kind '{kind}'")
