"""
trainer.py - Rate-distortion training loop

One model, one lambda. Adam on the parameter pre-images, constant learning
rate, no normalization layers. Checkpoints are written atomically every
`checkpoint_every` steps, so a diverging run leaves the last good one on
disk. The metrics CSV holds one row per step:

    step, loss, rate_y_bpp, rate_z_bpp, distortion
"""
import os
import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import pandas as pd
import torch

from autodiff import ops
from autodiff.optim import AdamState, adam_step
from models.architecture import Architecture, normalize_distortion
from models.checkpoint import identity_of, load_checkpoint, save_checkpoint
from models.compression import build_model, compute_loss
from models.quantization import NoiseSource
from training.corpus import BatchPrefetcher, CorpusImage, load_corpus
from utils import config
from utils.console_logger import error, info, logger, progress_bar, section, success, warning
from utils.determinism import seed_everything, single_threaded
from utils.errors import ConfigurationError, TrainingError

METRICS_COLUMNS = ["step", "loss", "rate_y_bpp", "rate_z_bpp", "distortion"]


@dataclass
class TrainConfig:
    corpus: Optional[str] = None
    out: str = "model.ckpt"
    lmbda: float = 0.01
    distortion: str = field(default_factory=lambda: config.DEFAULT_DISTORTION)
    model_kind: str = field(default_factory=lambda: config.DEFAULT_MODEL_KIND)
    n_filters: int = field(default_factory=lambda: config.DEFAULT_N)
    m_filters: int = field(default_factory=lambda: config.DEFAULT_M)
    crop_size: int = field(default_factory=lambda: config.CROP_SIZE)
    batch_size: int = field(default_factory=lambda: config.BATCH_SIZE)
    learning_rate: float = field(default_factory=lambda: config.LEARNING_RATE)
    steps: int = field(default_factory=lambda: config.DEFAULT_STEPS)
    seed: int = 0
    checkpoint_every: int = field(default_factory=lambda: config.CHECKPOINT_EVERY)
    metrics_csv: Optional[str] = None
    single_threaded: bool = False
    num_workers: Optional[int] = None
    downsample: bool = False
    resume: bool = False

    def __post_init__(self):
        self.distortion = normalize_distortion(self.distortion)
        if self.batch_size < 1:
            raise ConfigurationError(f"batch size must be at least 1, got {self.batch_size}")
        if self.crop_size < 64 or self.crop_size % 64:
            raise ConfigurationError(f"crop size must be a positive multiple of 64, got {self.crop_size}")
        if self.steps < 0:
            raise ConfigurationError(f"step count must be non-negative, got {self.steps}")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.learning_rate}")
        if self.checkpoint_every < 1:
            raise ConfigurationError(f"checkpoint interval must be positive, got {self.checkpoint_every}")
        if self.metrics_csv is None:
            self.metrics_csv = os.path.splitext(self.out)[0] + ".metrics.csv"

    def architecture(self) -> Architecture:
        return Architecture(n_filters=self.n_filters, m_filters=self.m_filters, lmbda=self.lmbda,
                            distortion=self.distortion, model_kind=self.model_kind)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    checkpoint: str
    metrics: pd.DataFrame
    model: torch.nn.Module
    identity: bytes
    final_loss: float
    steps_run: int
    wall_time: float


def _row(step: int, loss: torch.Tensor, output) -> dict:
    return {"step": step, "loss": float(loss.detach()), "rate_y_bpp": output.bpp_y,
            "rate_z_bpp": output.bpp_z, "distortion": float(output.distortion.detach())}


def _save(train_config: TrainConfig, model, optimizer: AdamState, step: int, rows: List[dict]) -> bytes:
    identity = save_checkpoint(train_config.out, model, optimizer,
                               {"step": step, "seed": train_config.seed, "lmbda": train_config.lmbda})
    _write_metrics(train_config.metrics_csv, rows)
    return identity


def _write_metrics(path: str, rows: List[dict]) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    pd.DataFrame(rows, columns=METRICS_COLUMNS).to_csv(path, index=False, float_format="%.8g")


def _resume_state(train_config: TrainConfig, model, optimizer: AdamState):
    loaded = load_checkpoint(train_config.out)
    if loaded.architecture.to_dict() != model.architecture.to_dict():
        raise ConfigurationError("checkpoint architecture differs from the training configuration")
    model.load_state_dict(loaded.model.state_dict())
    names = {p: name for name, p in model.named_parameters()}
    optimizer.restore(names, loaded.optimizer_tensors, loaded.optimizer_step)
    start = int(loaded.trainer_state.get("step", 0))

    rows = []
    if os.path.exists(train_config.metrics_csv):
        rows = [r for r in pd.read_csv(train_config.metrics_csv).to_dict("records") if r["step"] < start]
    info(f"Resuming from step {start}")
    return start, rows


def train(train_config: TrainConfig, images: Optional[Sequence[CorpusImage]] = None) -> TrainResult:
    section(f"Training {train_config.model_kind} model (lambda={train_config.lmbda}, "
            f"{train_config.distortion})", emoji="🏋️")
    started = time.time()
    with single_threaded(train_config.single_threaded):
        return _run(train_config, images, started)


def _run(train_config: TrainConfig, images: Optional[Sequence[CorpusImage]], started: float) -> TrainResult:
    seed_everything(train_config.seed)

    if images is None:
        if train_config.corpus is None:
            raise ConfigurationError("a corpus directory or preloaded images are required")
        images = load_corpus(train_config.corpus, train_config.crop_size, train_config.downsample,
                             seed=train_config.seed)

    log_path = os.path.splitext(train_config.out)[0] + ".log"
    logger.set_log_file(log_path)

    model = build_model(train_config.architecture())
    model.train()
    optimizer = AdamState(list(model.parameters()), lr=train_config.learning_rate)
    noise = NoiseSource(train_config.seed)

    start, rows = 0, []
    if train_config.resume and os.path.exists(train_config.out):
        start, rows = _resume_state(train_config, model, optimizer)

    workers = 0 if train_config.single_threaded else train_config.num_workers
    identity = None
    last_loss = float("nan")
    try:
        with BatchPrefetcher(images, train_config, train_config.seed, start, train_config.steps,
                             num_workers=workers) as batches:
            bar = progress_bar(batches, total=train_config.steps, desc="Training", unit="step", initial=start)
            for step, batch in bar:
                optimizer.zero_grad()
                try:
                    loss, output = compute_loss(model, batch, noise, step)
                except TrainingError as e:
                    error(f"{e}; last good checkpoint kept at {train_config.out}")
                    _write_metrics(train_config.metrics_csv, rows)
                    raise

                ops.backward(loss, optimizer.params)
                adam_step(optimizer.params, optimizer)
                rows.append(_row(step, loss, output))
                last_loss = rows[-1]["loss"]
                bar.set_postfix(loss=f"{last_loss:.4f}", bpp=f"{output.bpp:.3f}")

                if (step + 1) % train_config.checkpoint_every == 0:
                    identity = _save(train_config, model, optimizer, step + 1, rows)
    finally:
        logger.close_log_file()

    if identity is None or train_config.steps % train_config.checkpoint_every:
        identity = _save(train_config, model, optimizer, train_config.steps, rows)
    if train_config.steps == start and rows == []:
        warning("No training steps were run")

    elapsed = time.time() - started
    success(f"Training finished in {elapsed:.1f}s; checkpoint {train_config.out} (id {identity.hex()})")
    return TrainResult(checkpoint=train_config.out, metrics=pd.DataFrame(rows, columns=METRICS_COLUMNS),
                       model=model, identity=identity_of(model), final_loss=last_loss,
                       steps_run=train_config.steps - start, wall_time=elapsed)
