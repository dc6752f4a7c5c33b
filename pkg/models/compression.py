"""
compression.py - Factorized-prior and scale-hyperprior codec models

    factorized:  x -> g_a -> y -> U|Q -> y~ -> g_s -> x~
                 rate_y = sum -log2 p(y~), one non-parametric noisy density per channel
    hyperprior:  y -> h_a -> z -> U|Q -> z~ -> h_s -> sigma
                 rate_y = sum -log2 N(0, sigma) * U evaluated at y~
                 rate_z = sum -log2 p(z~), one non-parametric noisy density per channel

In train mode U adds uniform noise; in infer mode Q rounds. The loss is
expressed per pixel:

    loss = lambda * s * D + (rate_y + rate_z) / pixels

with s the distortion scale of the configured kind.
"""
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn as nn

from density.noisy import NoisyDensity, ScaleField
from density.nonparametric import NonParametricDensity
from models import quantization
from models.architecture import Architecture
from models.distortion import distortion as distortion_fn
from models.quantization import NOISE_Y, NOISE_Z, NoiseSource, perturb_or_quantize
from models.transforms import (AnalysisTransform, HyperAnalysisTransform, HyperSynthesisTransform,
                               SynthesisTransform)
from utils.errors import ConfigurationError, TrainingError

_LN2 = math.log(2.0)


@dataclass
class ForwardOutput:
    x_hat: torch.Tensor
    y: torch.Tensor
    y_hat: torch.Tensor
    likelihoods_y: torch.Tensor
    rate_y: torch.Tensor
    distortion: torch.Tensor
    num_pixels: int
    z: Optional[torch.Tensor] = None
    z_hat: Optional[torch.Tensor] = None
    likelihoods_z: Optional[torch.Tensor] = None
    rate_z: Optional[torch.Tensor] = None
    scales: Optional[ScaleField] = None

    @property
    def total_rate(self) -> torch.Tensor:
        return self.rate_y if self.rate_z is None else self.rate_y + self.rate_z

    @property
    def bpp_y(self) -> float:
        return float(self.rate_y) / self.num_pixels

    @property
    def bpp_z(self) -> float:
        return 0.0 if self.rate_z is None else float(self.rate_z) / self.num_pixels

    @property
    def bpp(self) -> float:
        return self.bpp_y + self.bpp_z


def _bits(likelihoods: torch.Tensor) -> torch.Tensor:
    return -torch.log(likelihoods).sum() / _LN2


def _generator(noise: Optional[NoiseSource], step: int, tensor_id: int) -> Optional[torch.Generator]:
    return None if noise is None else noise.generator(step, tensor_id)


class _CodecModel(nn.Module):
    def __init__(self, architecture: Architecture):
        super().__init__()
        self.architecture = architecture
        self.g_a: nn.Module = AnalysisTransform(architecture)
        self.g_s: nn.Module = SynthesisTransform(architecture)

    @property
    def kind(self) -> str:
        return self.architecture.model_kind

    def analysis(self, x: torch.Tensor) -> torch.Tensor:
        return self.g_a(x)

    def synthesis(self, y_hat: torch.Tensor) -> torch.Tensor:
        return self.g_s(y_hat)

    def _check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 4:
            raise ConfigurationError(f"expected NCHW images, got {tuple(x.shape)}")
        multiple = self.architecture.pad_multiple
        if x.shape[2] % multiple or x.shape[3] % multiple:
            raise ConfigurationError(
                f"image extents {x.shape[2]}x{x.shape[3]} must be multiples of {multiple}; pad first")


class FactorizedPriorModel(_CodecModel):
    def __init__(self, architecture: Architecture):
        super().__init__(architecture)
        self.prior_y = NonParametricDensity(architecture.m_filters, architecture.density_filters,
                                            architecture.init_scale)

    def y_density(self) -> NoisyDensity:
        return NoisyDensity.nonparametric(self.prior_y, channel_axis=1)

    def forward(self, x: torch.Tensor, mode: str = quantization.TRAIN, noise: Optional[NoiseSource] = None,
                step: int = 0) -> ForwardOutput:
        self._check_input(x)
        y = self.analysis(x)
        y_hat = perturb_or_quantize(y, mode, _generator(noise, step, NOISE_Y))
        x_hat = self.synthesis(y_hat)
        likelihoods = self.y_density().likelihood(y_hat)
        return ForwardOutput(
            x_hat=x_hat, y=y, y_hat=y_hat, likelihoods_y=likelihoods, rate_y=_bits(likelihoods),
            distortion=distortion_fn(x, x_hat, self.architecture.distortion),
            num_pixels=x.shape[0] * x.shape[2] * x.shape[3])


class ScaleHyperpriorModel(_CodecModel):
    def __init__(self, architecture: Architecture):
        super().__init__(architecture)
        self.h_a: nn.Module = HyperAnalysisTransform(architecture)
        self.h_s: nn.Module = HyperSynthesisTransform(architecture)
        self.prior_z = NonParametricDensity(architecture.n_filters, architecture.density_filters,
                                            architecture.init_scale)

    def hyper_analysis(self, y: torch.Tensor) -> torch.Tensor:
        return self.h_a(y)

    def hyper_synthesis(self, z_hat: torch.Tensor) -> ScaleField:
        return self.h_s(z_hat)

    def z_density(self) -> NoisyDensity:
        return NoisyDensity.nonparametric(self.prior_z, channel_axis=1)

    def forward(self, x: torch.Tensor, mode: str = quantization.TRAIN, noise: Optional[NoiseSource] = None,
                step: int = 0) -> ForwardOutput:
        self._check_input(x)
        y = self.analysis(x)
        z = self.hyper_analysis(y)
        z_hat = perturb_or_quantize(z, mode, _generator(noise, step, NOISE_Z))
        scales = self.hyper_synthesis(z_hat)
        y_hat = perturb_or_quantize(y, mode, _generator(noise, step, NOISE_Y))
        x_hat = self.synthesis(y_hat)

        likelihoods_y = NoisyDensity.gaussian(scales).likelihood(y_hat)
        likelihoods_z = self.z_density().likelihood(z_hat)
        return ForwardOutput(
            x_hat=x_hat, y=y, y_hat=y_hat, likelihoods_y=likelihoods_y, rate_y=_bits(likelihoods_y),
            distortion=distortion_fn(x, x_hat, self.architecture.distortion),
            num_pixels=x.shape[0] * x.shape[2] * x.shape[3],
            z=z, z_hat=z_hat, likelihoods_z=likelihoods_z, rate_z=_bits(likelihoods_z), scales=scales)


def build_model(architecture: Architecture) -> _CodecModel:
    if architecture.model_kind == "factorized":
        return FactorizedPriorModel(architecture)
    return ScaleHyperpriorModel(architecture)


def _loss(model: _CodecModel, output: ForwardOutput, step: Optional[int]) -> torch.Tensor:
    arch = model.architecture
    loss = arch.lmbda * arch.distortion_scale * output.distortion + output.total_rate / output.num_pixels
    if not torch.isfinite(loss):
        raise TrainingError("loss is not finite", step=step)
    return loss


def loss_factorized(model: FactorizedPriorModel, x: torch.Tensor, noise: Optional[NoiseSource] = None,
                    step: int = 0) -> Tuple[torch.Tensor, ForwardOutput]:
    """lambda * s * D + rate_y / pixels, in train mode."""
    if not isinstance(model, FactorizedPriorModel):
        raise ConfigurationError("loss_factorized needs a factorized-prior model")
    output = model(x, quantization.TRAIN, noise, step)
    return _loss(model, output, step), output


def loss_hyperprior(model: ScaleHyperpriorModel, x: torch.Tensor, noise: Optional[NoiseSource] = None,
                    step: int = 0) -> Tuple[torch.Tensor, ForwardOutput]:
    """lambda * s * D + (rate_y + rate_z) / pixels, in train mode; rate_z is kept separate in the output."""
    if not isinstance(model, ScaleHyperpriorModel):
        raise ConfigurationError("loss_hyperprior needs a scale-hyperprior model")
    output = model(x, quantization.TRAIN, noise, step)
    return _loss(model, output, step), output


def compute_loss(model: _CodecModel, x: torch.Tensor, noise: Optional[NoiseSource] = None,
                 step: int = 0) -> Tuple[torch.Tensor, ForwardOutput]:
    if isinstance(model, ScaleHyperpriorModel):
        return loss_hyperprior(model, x, noise, step)
    return loss_factorized(model, x, noise, step)
