"""
transforms.py - Analysis, synthesis and hyper transforms

Each transform is a stack of Conv2dLayer modules built from the
architecture's LayerSpec schedule, with GDN/IGDN or ReLU between layers.
"""
from typing import List

import torch
import torch.nn as nn

from autodiff.layers import Conv2dLayer, GDNLayer, ReLULayer
from density.noisy import ScaleField
from models.architecture import Architecture, LayerSpec
from utils.errors import ConfigurationError


class Transform(nn.Module):
    def __init__(self, in_channels: int, layers: List[LayerSpec], name: str):
        super().__init__()
        self.name = name
        self.in_channels = in_channels
        self.out_channels = layers[-1].filters
        self.layers = nn.ModuleList()

        channels = in_channels
        for i, spec in enumerate(layers):
            self.layers.append(Conv2dLayer(channels, spec.filters, spec.kernel, spec.stride, spec.direction,
                                           name=f"{name}.conv{i}"))
            channels = spec.filters
            if spec.activation in ("gdn", "igdn"):
                self.layers.append(GDNLayer(channels, inverse=spec.activation == "igdn", name=f"{name}.{spec.activation}{i}"))
            elif spec.activation == "relu":
                self.layers.append(ReLULayer())
            elif spec.activation is not None:
                raise ConfigurationError(f"unknown activation '{spec.activation}'", layer=f"{name}.conv{i}")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ConfigurationError(
                f"expected (B, {self.in_channels}, H, W) input, got {tuple(x.shape)}", layer=self.name)
        for layer in self.layers:
            x = layer(x)
        return x

    def conv_layers(self) -> List[Conv2dLayer]:
        return [layer for layer in self.layers if isinstance(layer, Conv2dLayer)]


class AnalysisTransform(Transform):
    """g_a: image (3 channels) -> y (M channels), extents / 16."""

    def __init__(self, architecture: Architecture):
        super().__init__(architecture.image_channels, architecture.analysis_layers, "g_a")


class SynthesisTransform(Transform):
    """g_s: y_hat (M channels) -> reconstruction, extents * 16."""

    def __init__(self, architecture: Architecture):
        super().__init__(architecture.m_filters, architecture.synthesis_layers, "g_s")


class HyperAnalysisTransform(Transform):
    """h_a: y (M channels) -> z (N channels), extents / 4. Consumes y itself, not |y|."""

    def __init__(self, architecture: Architecture):
        super().__init__(architecture.m_filters, architecture.hyper_analysis_layers, "h_a")


class HyperSynthesisTransform(Transform):
    """h_s: z_hat -> log sigma, mapped through exp and bounded below at sigma_min."""

    def __init__(self, architecture: Architecture):
        super().__init__(architecture.n_filters, architecture.hyper_synthesis_layers, "h_s")
        self.sigma_min = architecture.sigma_min

    def log_scales(self, z_hat: torch.Tensor) -> torch.Tensor:
        return super().forward(z_hat)

    def forward(self, z_hat: torch.Tensor) -> ScaleField:
        return ScaleField.from_log_scales(self.log_scales(z_hat), self.sigma_min)
