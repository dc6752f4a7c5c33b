# test_training.py
import json
import os

import numpy as np
import pandas as pd
import pytest
import torch
from PIL import Image
from scipy import stats

from models.checkpoint import load_checkpoint
from training import trainer as trainer_module
from training.corpus import (BatchPrefetcher, CorpusImage, batch_for_step, build_manifest, list_images, load_corpus,
                             sample_batch)
from training.sweep import SWEEP_COLUMNS, SweepConfig, load_sweep_config, rd_sweep
from training.trainer import METRICS_COLUMNS, TrainConfig, train
from utils.errors import ConfigurationError, CorpusError, DataLeakageError, TrainingError


def tiny_config(tmp_path, name="model.ckpt", **overrides):
    settings = dict(out=str(tmp_path / name), model_kind="factorized", n_filters=4, m_filters=4,
                    crop_size=64, batch_size=2, steps=3, checkpoint_every=2, learning_rate=1e-3,
                    single_threaded=True, seed=5)
    settings.update(overrides)
    return TrainConfig(**settings)


@pytest.fixture
def corpus(image_dir):
    return load_corpus(str(image_dir), crop_size=64)


# ---------------------------------------------------------------------------
# corpus
# ---------------------------------------------------------------------------

def test_load_corpus(corpus):
    assert len(corpus) == 6
    assert [image.name for image in corpus] == [f"img{i:02d}.png" for i in range(6)]
    for image in corpus:
        assert image.pixels.shape == (96, 96, 3)
        assert image.pixels.dtype == np.float32
        assert 0.0 <= image.pixels.min() and image.pixels.max() <= 1.0
        assert len(image.digest) == 64


def test_unreadable_and_small_images_are_skipped(image_dir, rng, make_image):
    (image_dir / "broken.png").write_bytes(b"not an image")
    Image.fromarray(make_image(rng, 32, 32)).save(image_dir / "tiny.png")
    (image_dir / "notes.txt").write_text("ignored")
    images = load_corpus(str(image_dir), crop_size=64)
    assert len(images) == 6
    assert "notes.txt" not in [os.path.basename(p) for p in list_images(str(image_dir))]


def test_empty_or_missing_corpus_is_fatal(tmp_path, rng, make_image):
    with pytest.raises(CorpusError):
        load_corpus(str(tmp_path / "missing"))
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(CorpusError):
        load_corpus(str(empty))
    Image.fromarray(make_image(rng, 32, 32)).save(empty / "small.png")
    with pytest.raises(CorpusError):
        load_corpus(str(empty), crop_size=64)


def test_downsampling_keeps_images_croppable(image_dir):
    images = load_corpus(str(image_dir), crop_size=64, downsample=True, seed=3)
    for image in images:
        assert 64 <= min(image.shape) <= 96


def test_batches_are_crops_of_the_corpus(corpus):
    cfg = tiny_config_like(batch_size=4)
    batch = sample_batch(corpus[:1], cfg, np.random.default_rng(0))
    assert batch.shape == (4, 3, 64, 64)
    source = torch.from_numpy(corpus[0].pixels).permute(2, 0, 1)
    for crop in batch:
        assert any(torch.equal(crop, source[:, top:top + 64, left:left + 64])
                   for top in range(33) for left in range(33))


def test_batches_depend_only_on_seed_and_step(corpus):
    cfg = tiny_config_like()
    assert torch.equal(batch_for_step(corpus, cfg, 1, 7), batch_for_step(corpus, cfg, 1, 7))
    assert not torch.equal(batch_for_step(corpus, cfg, 1, 7), batch_for_step(corpus, cfg, 1, 8))
    assert not torch.equal(batch_for_step(corpus, cfg, 1, 7), batch_for_step(corpus, cfg, 2, 7))


def test_crop_positions_are_uniform():
    rows, cols = np.mgrid[0:96, 0:96]
    pixels = np.stack([rows / 95, cols / 95, np.zeros((96, 96))], axis=-1).astype(np.float32)
    image = CorpusImage(name="ramp", pixels=pixels, digest="0" * 64)
    cfg = tiny_config_like(batch_size=100)
    rng = np.random.default_rng(0)
    corners = torch.cat([sample_batch([image], cfg, rng)[:, :2, 0, 0] for _ in range(100)])
    positions = torch.round(corners * 95).long().numpy()
    for axis in range(2):
        counts = np.bincount(positions[:, axis], minlength=33)
        assert counts.size == 33
        assert stats.chisquare(counts).pvalue > 0.01


@pytest.mark.parametrize("workers", [0, 1, 3])
def test_prefetcher_yields_steps_in_order(corpus, workers):
    cfg = tiny_config_like()
    with BatchPrefetcher(corpus, cfg, seed=4, start=2, stop=10, num_workers=workers, depth=2) as batches:
        seen = list(batches)
    assert [step for step, _ in seen] == list(range(2, 10))
    for step, batch in seen:
        assert torch.equal(batch, batch_for_step(corpus, cfg, 4, step))


def test_manifest_detects_leakage(corpus):
    manifest = build_manifest(corpus[:4], corpus[4:])
    assert len(manifest.train) == 4 and len(manifest.evaluation) == 2
    assert set(manifest.train).isdisjoint(manifest.evaluation)
    with pytest.raises(DataLeakageError):
        build_manifest(corpus[:4], corpus[3:])


# ---------------------------------------------------------------------------
# training configuration
# ---------------------------------------------------------------------------

def tiny_config_like(**overrides):
    settings = dict(out="unused.ckpt", crop_size=64, batch_size=2)
    settings.update(overrides)
    return TrainConfig(**settings)


@pytest.mark.parametrize("overrides", [
    {"crop_size": 48},
    {"crop_size": 100},
    {"batch_size": 0},
    {"steps": -1},
    {"learning_rate": 0.0},
    {"checkpoint_every": 0},
])
def test_train_config_validation(overrides):
    with pytest.raises(ConfigurationError):
        tiny_config_like(**overrides)


def test_train_config_defaults():
    cfg = TrainConfig(out="runs/model.ckpt", distortion="msssim")
    assert cfg.metrics_csv == os.path.join("runs", "model.metrics.csv")
    assert cfg.distortion == "ms-ssim"
    assert cfg.architecture().distortion == "ms-ssim"


def test_train_needs_images(tmp_path):
    with pytest.raises(ConfigurationError):
        train(tiny_config(tmp_path))


# ---------------------------------------------------------------------------
# training runs
# ---------------------------------------------------------------------------

def test_tiny_training_run(tmp_path, corpus):
    cfg = tiny_config(tmp_path)
    result = train(cfg, images=corpus)

    assert os.path.exists(cfg.out)
    assert os.path.exists(str(tmp_path / "model.log"))
    assert result.steps_run == 3
    assert np.isfinite(result.final_loss)

    metrics = pd.read_csv(cfg.metrics_csv)
    assert list(metrics.columns) == METRICS_COLUMNS
    assert metrics["step"].tolist() == [0, 1, 2]
    assert (metrics["rate_z_bpp"] == 0).all()
    assert (metrics["rate_y_bpp"] > 0).all()

    loaded = load_checkpoint(cfg.out)
    assert loaded.identity == result.identity
    assert loaded.trainer_state == {"step": 3, "seed": 5, "lmbda": 0.01}
    assert loaded.optimizer_step == 3


def test_single_threaded_training_restores_thread_settings(tmp_path, corpus):
    threads = torch.get_num_threads()
    torch.set_num_threads(2)
    try:
        train(tiny_config(tmp_path), images=corpus)
        assert torch.get_num_threads() == 2
        assert not torch.are_deterministic_algorithms_enabled()
        with pytest.raises(ConfigurationError):
            train(tiny_config(tmp_path, "missing.ckpt"))
        assert torch.get_num_threads() == 2
    finally:
        torch.set_num_threads(threads)


def test_hyperprior_training_reports_side_rate(tmp_path, corpus):
    result = train(tiny_config(tmp_path, model_kind="hyperprior", steps=2), images=corpus)
    assert (result.metrics["rate_z_bpp"] > 0).all()


def test_training_is_reproducible(tmp_path, corpus):
    first = train(tiny_config(tmp_path, "a.ckpt"), images=corpus)
    second = train(tiny_config(tmp_path, "b.ckpt"), images=corpus)
    assert first.identity == second.identity
    pd.testing.assert_frame_equal(first.metrics, second.metrics)


def test_resumed_run_matches_uninterrupted_run(tmp_path, corpus):
    straight = train(tiny_config(tmp_path, "straight.ckpt", steps=4), images=corpus)

    train(tiny_config(tmp_path, "resumed.ckpt", steps=2), images=corpus)
    resumed = train(tiny_config(tmp_path, "resumed.ckpt", steps=4, resume=True), images=corpus)

    assert resumed.steps_run == 2
    for (name, a), (_, b) in zip(straight.model.named_parameters(), resumed.model.named_parameters()):
        assert torch.allclose(a, b, atol=1e-6), name
    metrics = pd.read_csv(str(tmp_path / "resumed.metrics.csv"))
    assert metrics["step"].tolist() == [0, 1, 2, 3]


def test_resume_rejects_other_architecture(tmp_path, corpus):
    train(tiny_config(tmp_path, steps=2), images=corpus)
    with pytest.raises(ConfigurationError):
        train(tiny_config(tmp_path, steps=4, n_filters=5, resume=True), images=corpus)


def test_divergence_keeps_last_good_checkpoint(tmp_path, corpus, monkeypatch):
    original = trainer_module.compute_loss

    def diverging(model, x, noise, step):
        if step >= 3:
            raise TrainingError("loss is not finite", step=step)
        return original(model, x, noise, step)

    monkeypatch.setattr(trainer_module, "compute_loss", diverging)
    cfg = tiny_config(tmp_path, steps=6)
    with pytest.raises(TrainingError) as excinfo:
        train(cfg, images=corpus)
    assert excinfo.value.step == 3

    loaded = load_checkpoint(cfg.out)
    assert loaded.trainer_state["step"] == 2
    assert pd.read_csv(cfg.metrics_csv)["step"].tolist() == [0, 1, 2]


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def test_load_sweep_config_json(tmp_path):
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps({"corpus": "imgs", "filters": [[8, 8], [16, 16]], "lambdas": [0.01, 0.1],
                                "holdout": 2, "steps": 10}))
    sweep = load_sweep_config(str(path))
    assert sweep.filters == [(8, 8), (16, 16)]
    assert len(sweep.cells) == 4
    cfg = sweep.train_config(8, 8, 0.01)
    assert cfg.out == os.path.join("sweep", "hyperprior_N8_M8_lambda0.01.ckpt")
    assert cfg.steps == 10


def test_load_sweep_config_toml_table(tmp_path):
    path = tmp_path / "sweep.toml"
    path.write_text('[sweep]\ncorpus = "imgs"\neval_dir = "held"\nfilters = [[4, 6]]\nlambdas = [0.05]\n'
                    'model_kind = "factorized"\n')
    sweep = load_sweep_config(str(path))
    assert sweep.cells == [(4, 6, 0.05)]
    assert sweep.model_kind == "factorized"


@pytest.mark.parametrize("payload", [
    {"corpus": "imgs", "holdout": 2, "unknown_key": 1},
    {"corpus": "imgs"},
    {"corpus": "imgs", "holdout": 2, "lambdas": []},
])
def test_invalid_sweep_config(tmp_path, payload):
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps(payload))
    with pytest.raises(ConfigurationError):
        load_sweep_config(str(path))


def test_holdout_must_leave_training_images(tmp_path, image_dir):
    sweep = SweepConfig(corpus=str(image_dir), out_dir=str(tmp_path / "out"), holdout=6, filters=[(4, 4)],
                        lambdas=[0.01], steps=1)
    with pytest.raises(ConfigurationError):
        rd_sweep(sweep)


def test_rd_sweep_writes_rows_and_manifest(tmp_path, image_dir):
    sweep = SweepConfig(corpus=str(image_dir), out_dir=str(tmp_path / "out"), holdout=2, filters=[(4, 4)],
                        lambdas=[0.01, 0.1], model_kind="factorized", steps=2, batch_size=2,
                        checkpoint_every=2, single_threaded=True)
    table = rd_sweep(sweep)

    assert list(table.columns) == SWEEP_COLUMNS
    assert len(table) == 2 * (2 + 1)
    assert table["row_type"].tolist().count("aggregate") == 2
    assert set(table.loc[table["row_type"] == "aggregate", "image"]) == {"mean"}
    assert (table["bpp_total"] > 0).all()

    written = pd.read_csv(tmp_path / "out" / "sweep.csv")
    assert len(written) == len(table)
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert len(manifest["train"]) == 4 and len(manifest["evaluation"]) == 2
