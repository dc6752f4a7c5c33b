"""
corpus.py - Training images, crops and batch assembly

Batches are a pure function of (seed, step): each step draws its crops
from its own counter-keyed generator, so the worker pool can assemble
batches in any order without changing what the optimizer sees.
"""
import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from utils import config
from utils.console_logger import info, success, warning
from utils.determinism import default_worker_count, step_rng
from utils.errors import CorpusError, DataLeakageError

IMAGE_EXTENSIONS = (".png", ".ppm", ".pgm", ".pnm", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg", ".webp")


@dataclass
class CorpusImage:
    name: str
    pixels: np.ndarray  # (H, W, 3) float32 in [0, 1]
    digest: str  # sha256 of the source file

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]


def file_digest(path: str) -> str:
    sha = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            sha.update(chunk)
    return sha.hexdigest()


def list_images(directory: str) -> List[str]:
    if not os.path.isdir(directory):
        raise CorpusError(f"corpus directory not found: {directory}")
    return sorted(os.path.join(directory, name) for name in os.listdir(directory)
                  if name.lower().endswith(IMAGE_EXTENSIONS))


def _downsample(image: Image.Image, crop_size: int, rng: np.random.Generator) -> Image.Image:
    low, high = config.DOWNSAMPLE_RANGE
    factor = rng.uniform(low, high)
    # never shrink below the crop size
    factor = min(factor, min(image.size) / crop_size)
    if factor <= 1.0:
        return image
    size = (max(crop_size, int(round(image.width / factor))), max(crop_size, int(round(image.height / factor))))
    return image.resize(size, Image.Resampling.LANCZOS)


def load_corpus(directory: str, crop_size: Optional[int] = None, downsample: bool = False,
                seed: int = 0) -> List[CorpusImage]:
    """
    Decode every image in `directory` to RGB float32 in [0, 1].

    Unreadable files and images smaller than the crop are skipped with a
    warning. An empty result is fatal.
    """
    crop_size = config.CROP_SIZE if crop_size is None else crop_size
    rng = np.random.default_rng(seed)
    images = []
    for path in list_images(directory):
        name = os.path.basename(path)
        try:
            with Image.open(path) as handle:
                image = handle.convert("RGB")
        except (UnidentifiedImageError, OSError, ValueError) as e:
            warning(f"Skipping unreadable image {name}: {e}")
            continue
        if min(image.size) < crop_size:
            warning(f"Skipping {name}: {image.width}x{image.height} is smaller than the {crop_size}px crop")
            continue
        if downsample:
            image = _downsample(image, crop_size, rng)
        pixels = np.asarray(image, dtype=np.float32) / 255.0
        images.append(CorpusImage(name=name, pixels=pixels, digest=file_digest(path)))

    if not images:
        raise CorpusError(f"no usable images in {directory}")
    info(f"Loaded {len(images)} images from {directory}")
    return images


def sample_batch(images: Sequence[CorpusImage], train_config, rng: np.random.Generator) -> torch.Tensor:
    """(batch, 3, crop, crop) crops at uniformly random positions of uniformly chosen images."""
    if not images:
        raise CorpusError("cannot sample from an empty corpus")
    crop = train_config.crop_size
    batch = np.empty((train_config.batch_size, 3, crop, crop), dtype=np.float32)
    for i in range(train_config.batch_size):
        source = images[int(rng.integers(len(images)))].pixels
        top = int(rng.integers(source.shape[0] - crop + 1))
        left = int(rng.integers(source.shape[1] - crop + 1))
        batch[i] = source[top:top + crop, left:left + crop].transpose(2, 0, 1)
    return torch.from_numpy(batch)


def batch_for_step(images: Sequence[CorpusImage], train_config, seed: int, step: int) -> torch.Tensor:
    return sample_batch(images, train_config, step_rng(seed, step))


class BatchPrefetcher:
    """
    Assembles the batches of steps start..stop-1 on a thread pool, yielding
    them strictly in step order with at most `depth` batches in flight.
    num_workers=0 assembles on the calling thread.
    """

    def __init__(self, images: Sequence[CorpusImage], train_config, seed: int, start: int, stop: int,
                 num_workers: Optional[int] = None, depth: Optional[int] = None):
        self.images = images
        self.train_config = train_config
        self.seed = seed
        self.start = start
        self.stop = stop
        self.num_workers = default_worker_count() if num_workers is None else num_workers
        self.depth = config.PREFETCH_BATCHES if depth is None else max(1, depth)
        self.executor = ThreadPoolExecutor(max_workers=self.num_workers) if self.num_workers > 0 else None

    def __iter__(self) -> Iterator[Tuple[int, torch.Tensor]]:
        if self.executor is None:
            for step in range(self.start, self.stop):
                yield step, batch_for_step(self.images, self.train_config, self.seed, step)
            return

        pending = []
        next_step = self.start
        while next_step < self.stop and len(pending) < self.depth:
            pending.append((next_step, self._submit(next_step)))
            next_step += 1
        while pending:
            step, future = pending.pop(0)
            batch = future.result()
            if next_step < self.stop:
                pending.append((next_step, self._submit(next_step)))
                next_step += 1
            yield step, batch

    def _submit(self, step: int):
        return self.executor.submit(batch_for_step, self.images, self.train_config, self.seed, step)

    def close(self) -> None:
        if self.executor is not None:
            self.executor.shutdown(wait=True, cancel_futures=True)
            self.executor = None

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()


@dataclass
class Manifest:
    train: List[str]
    evaluation: List[str]

    def to_dict(self) -> dict:
        return {"train": self.train, "evaluation": self.evaluation}


def build_manifest(train_images: Sequence[CorpusImage], eval_images: Sequence[CorpusImage]) -> Manifest:
    """Record both sets by content digest; identical files on both sides are a leak."""
    train_digests = {image.digest: image.name for image in train_images}
    overlap = [image.name for image in eval_images if image.digest in train_digests]
    if overlap:
        raise DataLeakageError(f"evaluation images also in the training set: {overlap[:5]}")
    success(f"Manifest: {len(train_images)} training / {len(eval_images)} evaluation images, disjoint")
    return Manifest(train=sorted(train_digests), evaluation=sorted(image.digest for image in eval_images))
