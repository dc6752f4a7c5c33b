"""
codec.py - compress / decompress

    compress:   pad -> g_a -> round -> [h_a -> round -> code z_hat under the
                per-channel priors -> sigma = h_s(z_hat)] -> code y_hat -> container
    decompress: container -> [decode z_hat -> sigma = h_s(z_hat)] -> decode y_hat
                -> g_s -> crop -> clamp -> 8-bit

Encoder and decoder derive every PMF table through `entropy_tables`, from
quantized values only, so both sides hold the same 16-bit probabilities.
Latents outside their table range are clamped before reconstruction.
"""
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from codec.container import BitstreamContainer
from codec.image_io import as_uint8, crop, pad_image, to_tensor, to_uint8
from coding.arithmetic import BinaryArithmeticDecoder, BinaryArithmeticEncoder
from coding.symbols import ChannelCumulativeModel, GaussianModel, TabulatedModel
from density.nonparametric import NonParametricDensity
from models.compression import ScaleHyperpriorModel
from models.quantization import round_half_away
from utils import config
from utils.console_logger import debug
from utils.errors import ConfigurationError, ModelMismatchError, UsageError


@dataclass
class EncodeResult:
    container: BitstreamContainer
    x_hat: np.ndarray  # encoder-side reconstruction, uint8 (H, W, 3)
    y_hat: np.ndarray
    z_hat: Optional[np.ndarray]
    y_bits_estimate: float  # sum of -log2 pmf under the coded tables
    z_bits_estimate: float
    seconds: float

    @property
    def data(self) -> bytes:
        return self.container.to_bytes()


@dataclass
class DecodeResult:
    x_hat: np.ndarray
    y_hat: np.ndarray
    z_hat: Optional[np.ndarray]
    seconds: float


def channel_tables(density: NonParametricDensity, shape) -> TabulatedModel:
    """Per-channel rows, indexed by the channel of each element of a (1, C, H, W) tensor."""
    channels, height, width = shape[1], shape[2], shape[3]
    per_channel = TabulatedModel.from_model(ChannelCumulativeModel(density))
    return per_channel.take(np.repeat(np.arange(channels), height * width))


def gaussian_tables(scales: torch.Tensor) -> TabulatedModel:
    return TabulatedModel.from_model(GaussianModel(scales.detach().to(torch.float64).reshape(-1).numpy()))


def entropy_tables(model, stage: str, shape, z_hat: Optional[torch.Tensor] = None) -> TabulatedModel:
    """
    Tables for the "z" stream (hyperprior priors), or the "y" stream
    (Gaussian from h_s(z_hat) for the hyperprior, channel priors otherwise).
    """
    if stage == "z":
        return channel_tables(model.prior_z, shape)
    if isinstance(model, ScaleHyperpriorModel):
        if z_hat is None:
            raise UsageError("the hyperprior y tables need the quantized z")
        return gaussian_tables(model.hyper_synthesis(z_hat).scales)
    return channel_tables(model.prior_y, shape)


def _code(tables: TabulatedModel, values: torch.Tensor):
    encoder = BinaryArithmeticEncoder()
    clamped = tables.clamp(values.reshape(-1).numpy())
    tables.encode(encoder, clamped)
    bits = tables.information_bits(clamped)
    return encoder.finish(), torch.from_numpy(clamped.astype(np.float32)).reshape(values.shape), bits


def _decode(tables: TabulatedModel, segment: bytes, shape) -> torch.Tensor:
    decoder = BinaryArithmeticDecoder(segment)
    values = tables.decode(decoder)
    return torch.from_numpy(values.astype(np.float32)).reshape(shape)


def _latent_shape(channels: int, padded_height: int, padded_width: int, factor: int):
    return (1, channels, padded_height // factor, padded_width // factor)


def encode_image(model, image: np.ndarray, identity: Optional[bytes]) -> EncodeResult:
    if identity is None:
        raise UsageError("refusing to compress with a model that has no checkpoint identity; save or load it first")
    started = time.time()
    image = as_uint8(image)
    height, width = image.shape[:2]
    arch = model.architecture
    multiple = arch.pad_multiple
    if max(height, width) + multiple > config.MAX_IMAGE_SIDE:
        raise ConfigurationError(f"image {width}x{height} exceeds the {config.MAX_IMAGE_SIDE}px container limit")

    padded = pad_image(image, multiple)
    x = to_tensor(padded)
    z_segment, z_hat, z_bits = b"", None, 0.0
    with torch.no_grad():
        y = model.analysis(x)
        if isinstance(model, ScaleHyperpriorModel):
            z = model.hyper_analysis(y)
            z_tables = entropy_tables(model, "z", z.shape)
            z_segment, z_hat, z_bits = _code(z_tables, round_half_away(z))
        y_tables = entropy_tables(model, "y", y.shape, z_hat)
        y_segment, y_hat, y_bits = _code(y_tables, round_half_away(y))
        x_hat = to_uint8(model.synthesis(y_hat))

    container = BitstreamContainer(arch.model_kind, arch.lmbda, identity, width, height,
                                   padded.shape[1], padded.shape[0], z_segment, y_segment)
    elapsed = time.time() - started
    debug(f"Compressed {width}x{height} to {container.total_bytes} bytes "
          f"({container.rates()['bpp_total']:.4f} bpp) in {elapsed:.2f}s")
    return EncodeResult(container, crop(x_hat, height, width), y_hat.numpy(),
                        None if z_hat is None else z_hat.numpy(), y_bits, z_bits, elapsed)


def decode_container(model, container: BitstreamContainer, identity: Optional[bytes]) -> DecodeResult:
    if identity is None or container.identity != identity:
        raise ModelMismatchError(
            f"bitstream was produced by model {container.identity.hex()}, "
            f"checkpoint is {identity.hex() if identity else 'unidentified'}")
    arch = model.architecture
    if container.model_kind != arch.model_kind:
        raise ModelMismatchError(f"bitstream holds a {container.model_kind} stream, model is {arch.model_kind}")
    started = time.time()

    z_hat = None
    with torch.no_grad():
        if isinstance(model, ScaleHyperpriorModel):
            z_shape = _latent_shape(arch.n_filters, container.padded_height, container.padded_width,
                                    arch.total_downsampling)
            z_hat = _decode(entropy_tables(model, "z", z_shape), container.z_segment, z_shape)
        y_shape = _latent_shape(arch.m_filters, container.padded_height, container.padded_width,
                                arch.analysis_downsampling)
        y_hat = _decode(entropy_tables(model, "y", y_shape, z_hat), container.y_segment, y_shape)
        x_hat = to_uint8(model.synthesis(y_hat))

    elapsed = time.time() - started
    return DecodeResult(crop(x_hat, container.height, container.width), y_hat.numpy(),
                        None if z_hat is None else z_hat.numpy(), elapsed)


def compress(image: np.ndarray, checkpoint) -> BitstreamContainer:
    """Compress with a LoadedCheckpoint; the container records its identity."""
    return encode_image(checkpoint.model, image, checkpoint.identity).container


def decompress(container, checkpoint) -> np.ndarray:
    if isinstance(container, (bytes, bytearray)):
        container = BitstreamContainer.from_bytes(container)
    return decode_container(checkpoint.model, container, checkpoint.identity).x_hat
