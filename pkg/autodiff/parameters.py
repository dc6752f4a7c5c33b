"""
parameters.py - Trainable parameters with constraint-preserving reparameterization

Every trainable quantity is stored as an unconstrained pre-image (`raw`) and
mapped to its effective value on access. Optimizers only ever see `raw`.
"""
from enum import Enum

import torch
import torch.nn as nn
import torch.nn.functional as F

from utils import config


class Reparam(str, Enum):
    IDENTITY = "identity"
    SOFTPLUS = "softplus"
    TANH = "tanh"
    LOWER_BOUNDED = "lower-bounded"


class LowerBoundFunction(torch.autograd.Function):
    """max(x, bound) whose gradient still flows when it pushes x back up"""

    @staticmethod
    def forward(ctx, x, bound):
        ctx.save_for_backward(x, bound)
        return torch.max(x, bound)

    @staticmethod
    def backward(ctx, grad_output):
        x, bound = ctx.saved_tensors
        pass_through = (x >= bound) | (grad_output < 0)
        return pass_through.to(grad_output.dtype) * grad_output, None


def lower_bound(x: torch.Tensor, bound: float) -> torch.Tensor:
    bound_t = torch.tensor(float(bound), dtype=x.dtype, device=x.device)
    return LowerBoundFunction.apply(x, bound_t)


def _inverse_softplus(value: torch.Tensor) -> torch.Tensor:
    return torch.where(value > 20, value, torch.log(torch.expm1(value)))


class ReparamParameter(nn.Module):
    """
    A parameter whose effective value satisfies a constraint.

    identity:       value = raw
    softplus:       value = softplus(raw) > 0
    tanh:           value = tanh(raw) in (-1, 1)
    lower-bounded:  value = max(raw, sqrt(bound + p))**2 - p >= bound,
                    with pedestal p = REPARAM_OFFSET**2
    """

    def __init__(self, initial: torch.Tensor, tag: Reparam = Reparam.IDENTITY, bound: float = 0.0):
        super().__init__()
        self.tag = Reparam(tag)
        self.bound = float(bound)
        self.pedestal = config.REPARAM_OFFSET ** 2
        initial = torch.as_tensor(initial, dtype=torch.float32)
        self.raw = nn.Parameter(self._pre_image(initial.detach().clone()))

    def _pre_image(self, value: torch.Tensor) -> torch.Tensor:
        if self.tag is Reparam.IDENTITY:
            return value
        if self.tag is Reparam.SOFTPLUS:
            if (value <= 0).any():
                raise ValueError("softplus parameters need a positive initial value")
            return _inverse_softplus(value)
        if self.tag is Reparam.TANH:
            return torch.atanh(value.clamp(-1 + 1e-6, 1 - 1e-6))
        # lower-bounded
        return torch.sqrt(torch.clamp(value + self.pedestal, min=self.bound + self.pedestal))

    @property
    def value(self) -> torch.Tensor:
        raw = self.raw
        if self.tag is Reparam.IDENTITY:
            return raw
        if self.tag is Reparam.SOFTPLUS:
            return F.softplus(raw)
        if self.tag is Reparam.TANH:
            return torch.tanh(raw)
        floor = (self.bound + self.pedestal) ** 0.5
        return lower_bound(raw, floor) ** 2 - self.pedestal

    @property
    def gradient(self) -> torch.Tensor:
        """Gradient with respect to the unconstrained pre-image (zeros if unreached)."""
        if self.raw.grad is None:
            return torch.zeros_like(self.raw)
        return self.raw.grad

    @property
    def shape(self) -> torch.Size:
        return self.raw.shape

    def assign(self, value: torch.Tensor) -> None:
        """Set the effective value (the pre-image is recomputed)."""
        with torch.no_grad():
            self.raw.copy_(self._pre_image(torch.as_tensor(value, dtype=self.raw.dtype)))

    def forward(self) -> torch.Tensor:
        return self.value

    def extra_repr(self) -> str:
        return f"shape={tuple(self.raw.shape)}, tag={self.tag.value}"
