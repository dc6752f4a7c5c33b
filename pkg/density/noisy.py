"""
noisy.py - Densities convolved with a unit-width uniform

For any base cumulative c, the convolved density evaluated at v is
c(v + 1/2) - c(v - 1/2). On the integer grid this is exactly the PMF of
the rounded variable, so the same object serves as training prior (noisy
latents) and as coding model (quantized latents).
"""
import math
from dataclasses import dataclass
from typing import Optional, Union

import torch

from autodiff.parameters import lower_bound
from density.nonparametric import NonParametricDensity
from utils import config

LIKELIHOOD_FLOOR = config.LIKELIHOOD_FLOOR


def gaussian_cdf(x: torch.Tensor) -> torch.Tensor:
    return 0.5 * torch.erfc(-x / math.sqrt(2))


@dataclass
class ScaleField:
    """Predicted standard deviations, one per latent element, all >= sigma_min."""

    scales: torch.Tensor
    sigma_min: float = config.SIGMA_MIN

    def __post_init__(self):
        if self.sigma_min <= 0:
            raise ValueError("sigma_min must be positive")
        if bool((self.scales < self.sigma_min).any()):
            raise ValueError(f"scales below sigma_min={self.sigma_min}")

    @classmethod
    def from_log_scales(cls, log_scales: torch.Tensor, sigma_min: Optional[float] = None) -> "ScaleField":
        sigma_min = config.SIGMA_MIN if sigma_min is None else sigma_min
        return cls(lower_bound(torch.exp(log_scales), sigma_min), sigma_min)

    @property
    def shape(self) -> torch.Size:
        return self.scales.shape


class NoisyDensity:
    """base * U(-1/2, 1/2) for a non-parametric or zero-mean Gaussian base."""

    def __init__(self, base: Optional[NonParametricDensity] = None,
                 scales: Union[None, float, torch.Tensor, ScaleField] = None,
                 channel_axis: int = 0, floor: Optional[float] = None):
        if (base is None) == (scales is None):
            raise ValueError("give exactly one of a non-parametric base or Gaussian scales")
        self.base = base
        if isinstance(scales, ScaleField):
            scales = scales.scales
        elif scales is not None:
            scales = torch.as_tensor(scales, dtype=torch.float64)
            if bool((scales <= 0).any()):
                raise ValueError("Gaussian scales must be positive")
        self.scales = scales
        self.channel_axis = channel_axis
        self.floor = config.LIKELIHOOD_FLOOR if floor is None else floor

    @classmethod
    def gaussian(cls, scales, **kwargs) -> "NoisyDensity":
        return cls(scales=scales, **kwargs)

    @classmethod
    def nonparametric(cls, model: NonParametricDensity, channel_axis: int = 0, **kwargs) -> "NoisyDensity":
        return cls(base=model, channel_axis=channel_axis, **kwargs)

    @property
    def is_gaussian(self) -> bool:
        return self.base is None

    def _nonparametric_mass(self, values: torch.Tensor) -> torch.Tensor:
        moved = values.movedim(self.channel_axis, 0)
        lower = self.base.logits_cumulative(moved - 0.5)
        upper = self.base.logits_cumulative(moved + 0.5)
        # difference taken in whichever tail keeps both terms small
        sign = torch.where(lower + upper > 0, -1.0, 1.0).to(lower.dtype).detach()
        mass = torch.abs(torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower))
        return mass.movedim(0, self.channel_axis)

    def _gaussian_mass(self, values: torch.Tensor) -> torch.Tensor:
        scales = self.scales.to(values.dtype) if torch.is_tensor(self.scales) else self.scales
        magnitude = torch.abs(values)
        upper = gaussian_cdf((0.5 - magnitude) / scales)
        lower = gaussian_cdf((-0.5 - magnitude) / scales)
        return upper - lower

    def likelihood(self, values: torch.Tensor) -> torch.Tensor:
        """c(v + 1/2) - c(v - 1/2), floored; differentiable in v and the base parameters."""
        if self.is_gaussian:
            mass = self._gaussian_mass(values)
        else:
            mass = self._nonparametric_mass(values)
        return lower_bound(mass, self.floor)

    def log_likelihood(self, values: torch.Tensor) -> torch.Tensor:
        return torch.log(self.likelihood(values))

    def pmf(self, n: Union[int, torch.Tensor]) -> torch.Tensor:
        values = torch.as_tensor(n, dtype=torch.float64)
        if torch.is_floating_point(values) and not bool((values == torch.round(values)).all()):
            raise ValueError("pmf is defined on integers")
        return self.likelihood(self._broadcast(values))

    def _broadcast(self, values: torch.Tensor) -> torch.Tensor:
        if self.is_gaussian or values.dim() > 0:
            return values
        return values.expand(self.base.channels).clone()


def _scalar_or_tensor(out: torch.Tensor, scalar: bool):
    if scalar and out.numel() == 1:
        return float(out.reshape(-1)[0])
    return out


def noisy_pmf(density: NoisyDensity, n: Union[int, torch.Tensor]):
    """Probability of the integer n under the convolved density."""
    with torch.no_grad():
        return _scalar_or_tensor(density.pmf(n), not torch.is_tensor(n))


def noisy_log_likelihood(density: NoisyDensity, value: Union[float, torch.Tensor]) -> torch.Tensor:
    """log(c(v + 1/2) - c(v - 1/2)) for continuous noisy values, floored at LIKELIHOOD_FLOOR."""
    value = torch.as_tensor(value, dtype=torch.float64) if not torch.is_tensor(value) else value
    return density.log_likelihood(density._broadcast(value))
