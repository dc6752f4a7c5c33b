"""
layers.py - Layer modules assembled into the analysis/synthesis transforms
"""
import torch
import torch.nn as nn

from autodiff import ops
from autodiff.parameters import Reparam, ReparamParameter
from utils import config


class Conv2dLayer(nn.Module):
    """Strided convolution (down) or transposed convolution (up) with same padding."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 5, stride: int = 2,
                 direction: str = "down", name: str = "conv"):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.direction = direction
        self.name = name

        if direction == "up":
            shape = (in_channels, out_channels, kernel_size, kernel_size)
            mode = "fan_out"  # torch counts fan-in on dim 1 for this layout
        else:
            shape = (out_channels, in_channels, kernel_size, kernel_size)
            mode = "fan_in"
        kernel = torch.empty(shape)
        nn.init.kaiming_normal_(kernel, mode=mode, nonlinearity="linear")

        self.kernel = ReparamParameter(kernel, Reparam.IDENTITY)
        self.bias = ReparamParameter(torch.zeros(out_channels), Reparam.IDENTITY)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return ops.conv2d(x, self.kernel, self.bias, self.stride, self.direction, layer=self.name)

    def extra_repr(self) -> str:
        arrow = "↑" if self.direction == "up" else "↓"
        return f"{self.out_channels}x{self.kernel_size}x{self.kernel_size}/{self.stride}{arrow}"


class GDNLayer(nn.Module):
    """GDN (or IGDN with inverse=True) with beta >= beta_min and gamma >= 0."""

    def __init__(self, channels: int, inverse: bool = False, name: str = "gdn"):
        super().__init__()
        self.channels = channels
        self.inverse = inverse
        self.name = name
        self.beta = ReparamParameter(torch.ones(channels), Reparam.LOWER_BOUNDED, bound=config.GDN_BETA_MIN)
        self.gamma = ReparamParameter(config.GDN_GAMMA_INIT * torch.eye(channels), Reparam.LOWER_BOUNDED,
                                      bound=0.0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return ops.gdn(x, self.beta, self.gamma, inverse=self.inverse, layer=self.name)

    def extra_repr(self) -> str:
        return f"{'IGDN' if self.inverse else 'GDN'}({self.channels})"


class ReLULayer(nn.Module):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return ops.relu(x)
