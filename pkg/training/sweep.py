"""
sweep.py - Capacity / lambda sweeps

Trains one model per (N, M, lambda) cell on a shared corpus and seed,
evaluates every cell on a held-out set through the real codec, and writes
one CSV row per cell per image plus one aggregate row per cell.
"""
import json
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import pandas as pd

from codec.evaluation import RECORD_COLUMNS, evaluate, records_frame
from models.checkpoint import load_checkpoint
from training.corpus import CorpusImage, build_manifest, load_corpus
from training.trainer import TrainConfig, train
from utils import config
from utils.console_logger import info, section, success
from utils.errors import ConfigurationError

SWEEP_COLUMNS = ["row_type", "N", "M", "lambda", "model"] + RECORD_COLUMNS


@dataclass
class SweepConfig:
    corpus: str
    out_dir: str = "sweep"
    filters: List[Tuple[int, int]] = field(default_factory=lambda: [(config.DEFAULT_N, config.DEFAULT_M)])
    lambdas: List[float] = field(default_factory=lambda: list(config.LAMBDA_GRID))
    eval_dir: Optional[str] = None
    holdout: int = 0
    model_kind: str = field(default_factory=lambda: config.DEFAULT_MODEL_KIND)
    distortion: str = field(default_factory=lambda: config.DEFAULT_DISTORTION)
    steps: int = field(default_factory=lambda: config.DEFAULT_STEPS)
    seed: int = 0
    crop_size: int = field(default_factory=lambda: config.CROP_SIZE)
    batch_size: int = field(default_factory=lambda: config.BATCH_SIZE)
    learning_rate: float = field(default_factory=lambda: config.LEARNING_RATE)
    checkpoint_every: int = field(default_factory=lambda: config.CHECKPOINT_EVERY)
    single_threaded: bool = False

    def __post_init__(self):
        self.filters = [(int(n), int(m)) for n, m in self.filters]
        self.lambdas = [float(lmbda) for lmbda in self.lambdas]
        if not self.filters or not self.lambdas:
            raise ConfigurationError("sweep grids must be non-empty")
        if self.eval_dir is None and self.holdout < 1:
            raise ConfigurationError("a sweep needs an eval_dir or a positive holdout count")

    @property
    def cells(self) -> List[Tuple[int, int, float]]:
        return [(n, m, lmbda) for n, m in self.filters for lmbda in self.lambdas]

    def train_config(self, n: int, m: int, lmbda: float) -> TrainConfig:
        name = f"{self.model_kind}_N{n}_M{m}_lambda{lmbda:g}.ckpt"
        return TrainConfig(corpus=self.corpus, out=os.path.join(self.out_dir, name), lmbda=lmbda,
                           distortion=self.distortion, model_kind=self.model_kind, n_filters=n, m_filters=m,
                           crop_size=self.crop_size, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, steps=self.steps, seed=self.seed,
                           checkpoint_every=self.checkpoint_every, single_threaded=self.single_threaded)


def load_sweep_config(path: str) -> SweepConfig:
    """JSON or TOML; `filters` is a list of [N, M] pairs (N=M pairs give the capacity sweep)."""
    if path.endswith(".toml"):
        with open(path, "rb") as f:
            data = tomllib.load(f)
    else:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    data = data.get("sweep", data)
    try:
        return SweepConfig(**data)
    except TypeError as e:
        raise ConfigurationError(f"invalid sweep configuration {path}: {e}") from e


def _split(sweep: SweepConfig) -> Tuple[List[CorpusImage], List[CorpusImage]]:
    images = load_corpus(sweep.corpus, sweep.crop_size, seed=sweep.seed)
    if sweep.eval_dir is not None:
        return images, load_corpus(sweep.eval_dir, crop_size=1)
    if sweep.holdout >= len(images):
        raise ConfigurationError(f"holdout of {sweep.holdout} leaves no training images out of {len(images)}")
    return images[:-sweep.holdout], images[-sweep.holdout:]


def rd_sweep(sweep: SweepConfig, csv_path: Optional[str] = None) -> pd.DataFrame:
    section(f"RD sweep: {len(sweep.filters)} filter settings x {len(sweep.lambdas)} lambdas", emoji="📈")
    os.makedirs(sweep.out_dir, exist_ok=True)
    train_images, eval_images = _split(sweep)
    manifest = build_manifest(train_images, eval_images)
    with open(os.path.join(sweep.out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest.to_dict(), f, indent=2)

    eval_set = [(image.name, image.pixels) for image in eval_images]
    frames = []
    for n, m, lmbda in sweep.cells:
        info(f"Cell N={n} M={m} lambda={lmbda:g}")
        result = train(sweep.train_config(n, m, lmbda), images=train_images)
        records, _ = evaluate(eval_set, load_checkpoint(result.checkpoint))

        per_image = records_frame(records)
        aggregate = per_image[RECORD_COLUMNS].mean(numeric_only=True).to_frame().T
        aggregate["image"] = "mean"
        for frame, row_type in ((per_image, "image"), (aggregate, "aggregate")):
            frame.insert(0, "row_type", row_type)
            frame.insert(1, "N", n)
            frame.insert(2, "M", m)
            frame.insert(3, "lambda", lmbda)
            frame.insert(4, "model", sweep.model_kind)
            frames.append(frame[SWEEP_COLUMNS])

    table = pd.concat(frames, ignore_index=True)
    csv_path = csv_path or os.path.join(sweep.out_dir, "sweep.csv")
    table.to_csv(csv_path, index=False, float_format="%.6g")
    success(f"Sweep finished: {len(sweep.cells)} cells, results in {csv_path}")
    return table
