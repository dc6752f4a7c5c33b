# determinism.py
import random
from contextlib import contextmanager
from typing import Iterator

import numpy as np
import psutil
import torch

from utils import config


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)


@contextmanager
def single_threaded(enabled: bool = True) -> Iterator[None]:
    """Pin torch to one thread and deterministic kernels inside the block, then restore both."""
    threads = torch.get_num_threads()
    deterministic = torch.are_deterministic_algorithms_enabled()
    if enabled:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.set_num_threads(threads)
        torch.use_deterministic_algorithms(deterministic)


def derive_seed(*keys: int) -> int:
    """Stable 63-bit seed from a tuple of non-negative integer keys."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


def noise_generator(seed: int, step: int, tensor_id: int) -> torch.Generator:
    """Counter-keyed generator: the stream depends only on (seed, step, tensor_id)."""
    generator = torch.Generator(device="cpu")
    generator.manual_seed(derive_seed(seed, step, tensor_id))
    return generator


def step_rng(seed: int, step: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(step), int(stream)]))


def default_worker_count() -> int:
    if config.NUM_BATCH_WORKERS is not None:
        return max(1, int(config.NUM_BATCH_WORKERS))
    cores = psutil.cpu_count(logical=False) or psutil.cpu_count() or 1
    return max(1, min(cores, 8))
