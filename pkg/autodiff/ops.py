"""
ops.py - Differentiable primitives used by the transforms

Thin wrappers over torch autograd with the shape policy of the codec:
same-padding with zero fill, so a stride-s layer divides (down) or
multiplies (up) the spatial extents by exactly s.
"""
from typing import Iterable, Optional, Union

import torch
import torch.nn.functional as F

from autodiff.parameters import ReparamParameter
from utils import config
from utils.errors import ConfigurationError, NumericalError, UsageError

TensorLike = Union[torch.Tensor, ReparamParameter]


def _value(t: Optional[TensorLike]) -> Optional[torch.Tensor]:
    if isinstance(t, ReparamParameter):
        return t.value
    return t


def check_finite(tensor: torch.Tensor, layer: str) -> torch.Tensor:
    if not torch.isfinite(tensor).all():
        raise NumericalError("non-finite values in forward pass", layer=layer)
    return tensor


def conv2d(inputs: torch.Tensor, kernel: TensorLike, bias: Optional[TensorLike], stride: int,
           direction: str = "down", layer: str = "conv") -> torch.Tensor:
    """
    Strided 2-D convolution.

    down: kernel is (C_out, C_in, k, k); output extents = input / stride.
    up:   transposed convolution, kernel is (C_in, C_out, k, k); output
          extents = input * stride. With the same kernel, `up` is the exact
          adjoint of `down`.
    """
    kernel = _value(kernel)
    bias = _value(bias)

    if stride < 1:
        raise ConfigurationError(f"stride must be positive, got {stride}", layer=layer)
    if inputs.dim() != 4:
        raise ConfigurationError(f"expected NCHW input, got shape {tuple(inputs.shape)}", layer=layer)
    if kernel.dim() != 4 or kernel.shape[2] != kernel.shape[3] or kernel.shape[2] % 2 == 0:
        raise ConfigurationError(f"kernel must be square with odd support, got {tuple(kernel.shape)}", layer=layer)

    padding = (kernel.shape[2] - 1) // 2
    height, width = inputs.shape[2], inputs.shape[3]

    if direction == "down":
        if inputs.shape[1] != kernel.shape[1]:
            raise ConfigurationError(
                f"input has {inputs.shape[1]} channels, kernel expects {kernel.shape[1]}", layer=layer)
        if height % stride or width % stride:
            raise ConfigurationError(
                f"spatial extents {height}x{width} not divisible by stride {stride}", layer=layer)
        out_channels = kernel.shape[0]
        out = F.conv2d(inputs, kernel, None, stride=stride, padding=padding)
    elif direction == "up":
        if inputs.shape[1] != kernel.shape[0]:
            raise ConfigurationError(
                f"input has {inputs.shape[1]} channels, kernel expects {kernel.shape[0]}", layer=layer)
        out_channels = kernel.shape[1]
        out = F.conv_transpose2d(inputs, kernel, None, stride=stride, padding=padding,
                                 output_padding=stride - 1)
    else:
        raise ConfigurationError(f"unknown direction '{direction}'", layer=layer)

    if bias is not None:
        if bias.shape != (out_channels,):
            raise ConfigurationError(
                f"bias shape {tuple(bias.shape)} does not match {out_channels} output channels", layer=layer)
        out = out + bias.view(1, -1, 1, 1)

    if config.DEBUG_CHECKS:
        check_finite(out, layer)
    return out


def gdn(inputs: torch.Tensor, beta: TensorLike, gamma: TensorLike, inverse: bool = False,
        layer: str = "gdn") -> torch.Tensor:
    """
    Generalized divisive normalization.

        forward: out_i = in_i / sqrt(beta_i + sum_j gamma_ij * in_j**2)
        inverse: out_i = in_i * sqrt(beta_i + sum_j gamma_ij * in_j**2)
    """
    beta = _value(beta)
    gamma = _value(gamma)
    channels = inputs.shape[1]
    if beta.shape != (channels,) or gamma.shape != (channels, channels):
        raise ConfigurationError(
            f"beta {tuple(beta.shape)} / gamma {tuple(gamma.shape)} do not match {channels} channels",
            layer=layer)

    norm = F.conv2d(inputs ** 2, gamma.reshape(channels, channels, 1, 1), beta)
    if not torch.isfinite(norm).all():
        raise NumericalError("non-finite normalizer", layer=layer)

    if inverse:
        return inputs * torch.sqrt(norm)
    return inputs * torch.rsqrt(norm)


def relu(inputs: torch.Tensor) -> torch.Tensor:
    return F.relu(inputs)


def backward(loss: torch.Tensor, parameters: Optional[Iterable[torch.nn.Parameter]] = None) -> None:
    """
    Populate gradients of `loss` on every reachable parameter.

    Parameters listed in `parameters` that the loss does not reach receive a
    zero gradient instead of None.
    """
    if loss.numel() != 1:
        raise UsageError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    if loss.grad_fn is None:
        raise UsageError("backward called without a recorded forward computation")
    loss.backward()
    if parameters is not None:
        for param in parameters:
            if param.grad is None:
                param.grad = torch.zeros_like(param)
