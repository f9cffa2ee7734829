"""Shared fixtures.

Desk-scale artifacts (48x48 dataset, trained checkpoint) are expensive, so
they are cached under .cache/accept/ and rebuilt only when missing; both the
dataset generator and the trainer are resumable and deterministic, so a cached
artifact is identical to a freshly built one.
"""
import os
from pathlib import Path

import pytest

from topoforge.dataset import DatasetManifest, GridSpec, generate_dataset
from topoforge.gan import GanConfig, train

REPO_ROOT = Path(__file__).resolve().parent.parent
CACHE_ROOT = Path(os.environ.get("TOPOFORGE_TEST_CACHE", REPO_ROOT / ".cache" / "accept"))

# Desk-scale profile used by the acceptance suite: 180-sample 9x5x4 grid at
# 48x48, and a GAN sized to train >= 2000 generator steps on one CPU.
DESK_GRID = GridSpec.profile("desk")
DESK_GAN = dict(
    resolution=(48, 48),
    latent_dim=120,
    base_channels=128,
    critic_base_channels=32,
    stages=4,
    batch_size=32,
    n_critic=3,
    lr=1e-3,
    gen_lr_scale=3.0,
    clip_c=0.01,
    seed=2024,
    critic_dropout=0.1,
    warmup_critic_steps=500,
    warmup_cycles=6,
)
DESK_EPOCHS = 834  # ceil(180/32) = 6 cycles/epoch -> 5004 generator steps


@pytest.fixture(scope="session")
def desk_dataset():
    out = CACHE_ROOT / "dataset-desk48"
    out.mkdir(parents=True, exist_ok=True)
    manifest = generate_dataset(DESK_GRID, out, workers=1, resume=True)
    return out, manifest


@pytest.fixture(scope="session")
def desk_model(desk_dataset):
    ds_dir, manifest = desk_dataset
    ckpt_dir = CACHE_ROOT / "model-desk48"
    cfg = GanConfig(epochs=DESK_EPOCHS, checkpoint_every=100, **DESK_GAN)
    ckpt = ckpt_dir / "checkpoint.cwto"
    metrics_path = ckpt_dir / "metrics.jsonl"
    if not (ckpt.exists() and metrics_path.exists()):
        result = train(
            manifest, ds_dir, cfg, ckpt_dir,
            resume_from=ckpt if ckpt.exists() else None,
            metrics_path=metrics_path, log_every=50,
        )
        assert result.checkpoint_path == ckpt
    return ckpt, metrics_path, cfg


TOY_GRID = GridSpec(
    volfrac_range=(0.3, 0.7, 0.1),
    penal_range=(3.0, 3.0, 0.1),
    rmin_range=(1.2, 1.2, 0.1),
    resolution=(16, 16),
)
TOY_GAN = dict(
    resolution=(16, 16),
    latent_dim=12,
    base_channels=16,
    stages=2,
    batch_size=4,
    n_critic=2,
    seed=5,
)


@pytest.fixture(scope="session")
def toy_model(tmp_path_factory):
    """Small trained model + dataset for CLI/service plumbing tests."""
    ds_dir = tmp_path_factory.mktemp("toy-svc-ds")
    manifest = generate_dataset(TOY_GRID, ds_dir, workers=1)
    ckpt_dir = tmp_path_factory.mktemp("toy-svc-model")
    cfg = GanConfig(epochs=3, **TOY_GAN)
    result = train(manifest, ds_dir, cfg, ckpt_dir)
    return ds_dir, manifest, result.checkpoint_path, cfg
