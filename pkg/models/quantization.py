"""
quantization.py - Additive uniform noise (training) and rounding (inference)
"""
from typing import Optional

import torch

from utils.determinism import noise_generator

TRAIN = "train"
INFER = "infer"

# tensor ids keying the noise streams
NOISE_Y = 0
NOISE_Z = 1


def round_half_away(v: torch.Tensor) -> torch.Tensor:
    return torch.sign(v) * torch.floor(torch.abs(v) + 0.5)


def perturb_or_quantize(v: torch.Tensor, mode: str, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """train: v + U(-1/2, 1/2) i.i.d.; infer: round with ties away from zero."""
    if mode == TRAIN:
        noise = torch.rand(v.shape, generator=generator, dtype=v.dtype, device=v.device) - 0.5
        return v + noise
    if mode == INFER:
        return round_half_away(v)
    raise ValueError(f"mode must be '{TRAIN}' or '{INFER}', got '{mode}'")


class NoiseSource:
    """Noise generators keyed by (seed, step, tensor id), independent of call order."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def generator(self, step: int, tensor_id: int) -> torch.Generator:
        return noise_generator(self.seed, step, tensor_id)
