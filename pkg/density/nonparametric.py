"""
nonparametric.py - Univariate density defined through its cumulative

    c = f_K o ... o f_1,   p = f_K' * ... * f_1'
    f_k(x) = g_k(H_k x + b_k),  g_k(x) = x + a_k * tanh(x)     (k < K)
    f_K(x) = sigmoid(H_K x + b_K)

H_k = softplus(H^_k) >= 0 and a_k = tanh(a^_k) > -1 keep every Jacobian
non-negative, so c is monotone and p is a normalized density by
construction. One independent model per channel; channels are batched on
the leading axis.
"""
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from autodiff.parameters import Reparam, ReparamParameter
from utils import config

_TINY = 1e-30


class NonParametricDensity(nn.Module):
    def __init__(self, channels: int = 1, filters: Optional[Sequence[int]] = None,
                 init_scale: Optional[float] = None):
        super().__init__()
        self.channels = int(channels)
        self.filters = tuple(int(f) for f in (config.DENSITY_FILTERS if filters is None else filters))
        self.init_scale = float(config.DENSITY_INIT_SCALE if init_scale is None else init_scale)

        dims = (1,) + self.filters + (1,)
        scale = self.init_scale ** (1 / (len(self.filters) + 1))

        self.matrices = nn.ModuleList()
        self.biases = nn.ModuleList()
        self.factors = nn.ModuleList()
        for k in range(len(self.filters) + 1):
            h_init = torch.full((self.channels, dims[k + 1], dims[k]), 1 / scale / dims[k + 1])
            self.matrices.append(ReparamParameter(h_init, Reparam.SOFTPLUS))
            self.biases.append(ReparamParameter(torch.empty(self.channels, dims[k + 1], 1).uniform_(-0.5, 0.5)))
            if k < len(self.filters):
                self.factors.append(ReparamParameter(torch.zeros(self.channels, dims[k + 1], 1), Reparam.TANH))

    @property
    def depth(self) -> int:
        """K, the number of composed stages."""
        return len(self.filters) + 1

    def _as_stages(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[0] != self.channels:
            raise ValueError(f"expected {self.channels} channels on axis 0, got shape {tuple(x.shape)}")
        return x.reshape(self.channels, 1, -1)

    def logits_cumulative(self, x: torch.Tensor) -> torch.Tensor:
        """Pre-sigmoid cumulative, x of shape (C, ...); same shape out."""
        shape = x.shape
        logits = self._as_stages(x)
        for k in range(self.depth):
            h = self.matrices[k].value.to(logits.dtype)
            b = self.biases[k].value.to(logits.dtype)
            logits = torch.matmul(h, logits) + b
            if k < len(self.filters):
                a = self.factors[k].value.to(logits.dtype)
                logits = logits + a * torch.tanh(logits)
        return logits.reshape(shape)

    def cumulative(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits_cumulative(x))

    def log_density(self, x: torch.Tensor) -> torch.Tensor:
        """log p(x), propagating the derivative of each stage alongside its value."""
        shape = x.shape
        u = self._as_stages(x)
        du = torch.ones_like(u)
        for k in range(self.depth):
            h = self.matrices[k].value.to(u.dtype)
            b = self.biases[k].value.to(u.dtype)
            u = torch.matmul(h, u) + b
            du = torch.matmul(h, du)
            if k < len(self.filters):
                a = self.factors[k].value.to(u.dtype)
                t = torch.tanh(u)
                du = du * (1 + a * (1 - t * t))
                u = u + a * t
        log_p = F.logsigmoid(u) + F.logsigmoid(-u) + torch.log(du.clamp_min(_TINY))
        return log_p.reshape(shape)

    def density(self, x: torch.Tensor) -> torch.Tensor:
        return torch.exp(self.log_density(x))

    @torch.no_grad()
    def median(self, iterations: int = 80) -> np.ndarray:
        """Per-channel point where the cumulative crosses 1/2 (bisection in float64)."""
        lo = torch.full((self.channels, 1), -1e6, dtype=torch.float64)
        hi = torch.full((self.channels, 1), 1e6, dtype=torch.float64)
        for _ in range(iterations):
            mid = (lo + hi) / 2
            above = self.logits_cumulative(mid) > 0
            hi = torch.where(above, mid, hi)
            lo = torch.where(above, lo, mid)
        return ((lo + hi) / 2).reshape(-1).numpy()


def _as_channel_tensor(model: NonParametricDensity, x: Union[float, torch.Tensor]) -> torch.Tensor:
    x = torch.as_tensor(x, dtype=torch.float64)
    if x.dim() == 0:
        x = x.expand(model.channels).clone()
    return x


def cumulative(model: NonParametricDensity, x: Union[float, torch.Tensor]):
    """c(x). Scalars evaluate every channel at x (a float for one-channel models)."""
    scalar = not torch.is_tensor(x)
    out = model.cumulative(_as_channel_tensor(model, x))
    if scalar and model.channels == 1:
        return float(out.reshape(-1)[0])
    return out


def log_density(model: NonParametricDensity, x: Union[float, torch.Tensor]):
    scalar = not torch.is_tensor(x)
    out = model.log_density(_as_channel_tensor(model, x))
    if scalar and model.channels == 1:
        return float(out.reshape(-1)[0])
    return out
