"""Conditional Wasserstein GAN over density grids.

The condition (volume fraction) enters both halves through a trainable dense
embedding whose output is multiplied elementwise with the main input: noise
for the generator, the image for the critic. Real grids in [0, 1] are mapped
to the generator's tanh range [-1, 1] before scoring.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .dataset import DatasetManifest, load_batches
from .errors import CheckpointError, ConfigError, NumericError, ParameterError
from .fem import DensityField
from .net import Network, clip_weights, rmsprop_step
from .net.checkpoint import load_checkpoint, save_checkpoint
from .net.layers import (
    LayerSpec,
    batch_norm,
    conv,
    conv_transpose,
    dense,
    dropout,
    leaky_relu,
    reshape,
    tanh,
)

TRAINED_CONDITION_RANGE = (0.3, 0.7)
SMOOTH_REAL, SMOOTH_FAKE = -0.9, 0.9  # smoothed critic targets in paper_tanh mode


@dataclass(frozen=True)
class GanConfig:
    resolution: tuple[int, int] = (120, 120)   # (H, W)
    latent_dim: int = 120
    lr: float = 5e-5
    clip_c: float = 0.01
    n_critic: int = 5
    batch_size: int = 64
    epochs: int = 1
    seed: int = 0
    critic_mode: str = "linear"                # "linear" | "paper_tanh"
    base_channels: int = 256
    stages: Optional[int] = None               # None = deepest schedule that divides
    alpha: float = 0.2
    critic_dropout: float = 0.3
    checkpoint_every: int = 0                  # generator steps; 0 = final only
    warmup_critic_steps: int = 0               # critic steps per cycle during warm-up
    warmup_cycles: int = 0                     # cycles at the start using the warm-up count
    embed_init_std: float = 0.5                # label-gate weight spread at init
    gen_lr_scale: float = 1.0                  # generator lr = lr * gen_lr_scale
    critic_base_channels: Optional[int] = None  # None -> base_channels

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ParameterError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.clip_c <= 0:
            raise ParameterError(f"clip_c must be > 0, got {self.clip_c}")
        if self.n_critic < 1:
            raise ParameterError(f"n_critic must be >= 1, got {self.n_critic}")
        if self.critic_mode not in ("linear", "paper_tanh"):
            raise ParameterError(f"critic_mode must be linear or paper_tanh, got {self.critic_mode}")
        if self.warmup_cycles and self.warmup_critic_steps < 1:
            raise ParameterError("warmup_critic_steps must be >= 1 when warmup_cycles > 0")
        self.resolved_stages()  # validates resolution vs stride schedule

    def resolved_stages(self) -> int:
        h, w = self.resolution
        if self.stages is not None:
            k = self.stages
            if k < 1 or h % (1 << k) or w % (1 << k):
                raise ConfigError(
                    f"resolution {h}x{w} not reachable with {k} stride-2 stages; "
                    f"sides must be multiples of {1 << max(k, 1)}"
                )
            return k
        for k in range(4, 0, -1):
            if h % (1 << k) == 0 and w % (1 << k) == 0 and min(h, w) >> k >= 3:
                return k
        raise ConfigError(
            f"resolution {h}x{w} not reachable by the stride-2 schedule; "
            "sides must be even multiples of a power of two (e.g. 48, 64, 120)"
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["resolution"] = list(self.resolution)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GanConfig":
        d = dict(d)
        d["resolution"] = tuple(d["resolution"])
        return cls(**d)


@dataclass(frozen=True)
class ConditionLabel:
    """Requested volume fraction; outside the trained range we warn, not fail."""

    volfrac: float

    def __post_init__(self):
        if not math.isfinite(self.volfrac):
            raise ParameterError(f"condition must be finite, got {self.volfrac}")
        lo, hi = TRAINED_CONDITION_RANGE
        if not lo <= self.volfrac <= hi:
            warnings.warn(
                f"condition volfrac={self.volfrac} is outside the trained range "
                f"[{lo}, {hi}]; generated structures may be unreliable",
                stacklevel=2,
            )


class LabelEmbedding:
    """Trainable dense map from the scalar condition to target_shape.

    The bias starts at one so the multiplicative gate begins near identity;
    the weight spread controls how strongly the condition modulates the
    input before any training."""

    def __init__(self, target_shape: tuple[int, ...], seed: int = 0, dtype=np.float32,
                 init_std: float = 0.5):
        self.target_shape = tuple(target_shape)
        size = int(np.prod(self.target_shape))
        self.net = Network([dense(1, size)], seed=seed, dtype=dtype)
        layer = self.net.layers[0]
        if init_std > 0:
            layer.params["w"] = (
                np.random.default_rng(seed).normal(0.0, init_std, layer.params["w"].shape)
            ).astype(layer.params["w"].dtype)
        layer.params["b"][:] = 1.0

    @classmethod
    def from_network(cls, net: Network, target_shape) -> "LabelEmbedding":
        emb = cls.__new__(cls)
        emb.target_shape = tuple(target_shape)
        emb.net = net
        return emb

    def embed(self, labels: np.ndarray, training: bool = False, rng=None) -> np.ndarray:
        labels = np.asarray(labels, dtype=self.net.dtype).reshape(-1, 1)
        out = self.net.forward(labels, training=training, rng=rng)
        return out.reshape(labels.shape[0], *self.target_shape)


def embed_label(embedding: LabelEmbedding, label: float | np.ndarray) -> np.ndarray:
    """Map conditions to the embedding's target shape (batched)."""
    labels = np.atleast_1d(np.asarray(label, dtype=np.float64))
    return embedding.embed(labels)


class ConditionedNetwork:
    """Embedding + main chain coupled by elementwise product."""

    def __init__(self, embedding: LabelEmbedding, main: Network):
        self.embedding = embedding
        self.main = main
        self._x = None
        self._e = None

    @property
    def networks(self) -> tuple[Network, Network]:
        return self.embedding.net, self.main

    def forward(self, x: np.ndarray, labels: np.ndarray, training: bool = False, rng=None) -> np.ndarray:
        x = np.asarray(x, dtype=self.main.dtype)
        e = self.embedding.embed(labels, training=training, rng=rng).reshape(x.shape)
        self._x, self._e = x, e
        return self.main.forward(x * e, training=training, rng=rng)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dprod = self.main.backward(dout)
        de = (dprod * self._x).reshape(dprod.shape[0], -1)
        self.embedding.net.backward(de)
        return dprod * self._e

    def step(self, lr: float) -> None:
        for net in self.networks:
            rmsprop_step(net, lr=lr)

    def clip(self, c: float) -> None:
        for net in self.networks:
            clip_weights(net, c)

    def max_abs_weight(self) -> float:
        return max(float(np.abs(p).max()) for net in self.networks for _, p in net.parameters())


def _channel_schedule(base: int, stages: int) -> list[int]:
    return [max(8, base >> i) for i in range(stages)]


def _generator_channels(cfg: GanConfig) -> list[int]:
    return _channel_schedule(cfg.base_channels, cfg.resolved_stages())


def _critic_channels(cfg: GanConfig) -> list[int]:
    base = cfg.critic_base_channels or cfg.base_channels
    return list(reversed(_channel_schedule(base, cfg.resolved_stages())))


def generator_specs(cfg: GanConfig) -> list[LayerSpec]:
    h, w = cfg.resolution
    k = cfg.resolved_stages()
    s0h, s0w = h >> k, w >> k
    ch = _generator_channels(cfg)
    specs = [
        dense(cfg.latent_dim, ch[0] * s0h * s0w),
        reshape((ch[0], s0h, s0w)),
        batch_norm(ch[0]),
        leaky_relu(cfg.alpha),
    ]
    for i in range(k - 1):
        specs += [
            conv_transpose(ch[i], ch[i + 1], kernel=4, stride=2, padding=1),
            batch_norm(ch[i + 1]),
            leaky_relu(cfg.alpha),
        ]
    specs += [conv_transpose(ch[-1], 1, kernel=4, stride=2, padding=1), tanh()]
    return specs


def critic_specs(cfg: GanConfig) -> list[LayerSpec]:
    """Strided convolutions down to the seed grid, then a scalar head.

    Batch norm after every conv except the first keeps activations O(1):
    with clipped weights the raw per-layer gain is far below one and a
    norm-free critic's output collapses to a constant."""
    h, w = cfg.resolution
    k = cfg.resolved_stages()
    s0h, s0w = h >> k, w >> k
    ch = _critic_channels(cfg)  # shallow -> deep
    specs: list[LayerSpec] = []
    prev = 1
    for i, c in enumerate(ch):
        specs.append(conv(prev, c, kernel=4, stride=2, padding=1))
        if i > 0:
            specs.append(batch_norm(c))
        specs.append(leaky_relu(cfg.alpha))
        if cfg.critic_dropout > 0:
            specs.append(dropout(cfg.critic_dropout))
        prev = c
    specs += [reshape((prev * s0h * s0w,)), dense(prev * s0h * s0w, 1)]
    if cfg.critic_mode == "paper_tanh":
        specs.append(tanh())
    return specs


def build_generator(cfg: GanConfig, seed: Optional[int] = None) -> ConditionedNetwork:
    seed = cfg.seed if seed is None else seed
    emb = LabelEmbedding((cfg.latent_dim,), seed=seed + 1, init_std=cfg.embed_init_std)
    main = Network(generator_specs(cfg), seed=seed)
    return ConditionedNetwork(emb, main)


def build_critic(cfg: GanConfig, seed: Optional[int] = None) -> ConditionedNetwork:
    seed = cfg.seed if seed is None else seed
    h, w = cfg.resolution
    emb = LabelEmbedding((1, h, w), seed=seed + 3, init_std=cfg.embed_init_std)
    main = Network(critic_specs(cfg), seed=seed + 2)
    return ConditionedNetwork(emb, main)


def critic_loss(real_scores, fake_scores, mode: str = "linear") -> float:
    """Wasserstein critic loss mean(fake) - mean(real); in paper_tanh mode a
    squared-error surrogate against the smoothed targets (-0.9, 0.9)."""
    real = np.asarray(real_scores, dtype=np.float64).ravel()
    fake = np.asarray(fake_scores, dtype=np.float64).ravel()
    if real.size == 0 or fake.size == 0:
        raise ParameterError("score arrays must be nonempty")
    if mode == "linear":
        return float(fake.mean() - real.mean())
    return float(((real - SMOOTH_REAL) ** 2).mean() + ((fake - SMOOTH_FAKE) ** 2).mean())


def generator_loss(fake_scores, mode: str = "linear") -> float:
    """-mean(fake); in paper_tanh mode pushes fakes toward the real target."""
    fake = np.asarray(fake_scores, dtype=np.float64).ravel()
    if fake.size == 0:
        raise ParameterError("score array must be nonempty")
    if mode == "linear":
        return float(-fake.mean())
    return float(((fake - SMOOTH_REAL) ** 2).mean())


def _critic_score_grads(s_real: np.ndarray, s_fake: np.ndarray, mode: str) -> tuple[np.ndarray, np.ndarray]:
    nr, nf = s_real.size, s_fake.size
    if mode == "linear":
        return np.full(nr, -1.0 / nr), np.full(nf, 1.0 / nf)
    return 2.0 * (s_real - SMOOTH_REAL) / nr, 2.0 * (s_fake - SMOOTH_FAKE) / nf


def _generator_score_grads(s_fake: np.ndarray, mode: str) -> np.ndarray:
    n = s_fake.size
    if mode == "linear":
        return np.full(n, -1.0 / n)
    return 2.0 * (s_fake - SMOOTH_REAL) / n


@dataclass
class TrainingMetrics:
    records: list[dict] = field(default_factory=list)
    snapshots: list[dict] = field(default_factory=list)

    def add(self, **kwargs) -> None:
        self.records.append(kwargs)

    def wasserstein_series(self) -> list[float]:
        return [r["wasserstein"] for r in self.records if r["kind"] == "critic"]

    def save_jsonl(self, path: Path) -> None:
        import json

        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec) + "\n")
            for snap in self.snapshots:
                fh.write(json.dumps({"kind": "snapshot", **snap}) + "\n")


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics: TrainingMetrics
    generator_steps: int
    optimizer_steps: int


PROBE_CONDITIONS = (0.3, 0.5, 0.7)
_PROBE_SEED = 771


def cycles_per_epoch(n_samples: int, batch_size: int) -> int:
    return math.ceil(n_samples / batch_size)


def _grids_to_tanh(grids: np.ndarray) -> np.ndarray:
    return (grids[:, None, :, :] * 2.0 - 1.0).astype(np.float32)


def _fields_from_raw(raw: np.ndarray, h: int, w: int) -> DensityField:
    vals = np.clip((raw.reshape(h, w).astype(np.float64) + 1.0) / 2.0, 0.0, 1.0)
    return DensityField(nelx=w, nely=h, values=vals)


class GanTrainer:
    """Alternating CWGAN training with exact checkpoint resume."""

    def __init__(
        self,
        manifest: DatasetManifest,
        manifest_dir: Path,
        cfg: GanConfig,
        checkpoint_dir: Path,
    ):
        h, w = cfg.resolution
        if (manifest.mesh["nely"], manifest.mesh["nelx"]) != (h, w):
            raise ConfigError(
                f"dataset resolution {manifest.mesh['nelx']}x{manifest.mesh['nely']} "
                f"does not match config {w}x{h}"
            )
        self.manifest = manifest
        self.manifest_dir = Path(manifest_dir)
        self.cfg = cfg
        self.checkpoint_dir = Path(checkpoint_dir)
        self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        self.n_samples = len([r for r in manifest.records if r.grid_file])
        self.generator = build_generator(cfg)
        self.critic = build_critic(cfg)
        self.rng = np.random.default_rng(cfg.seed)
        self.gen_step = 0
        self.opt_step = 0

    # -- checkpoint plumbing ------------------------------------------------

    def _networks(self) -> dict[str, Network]:
        return {
            "gen_embed": self.generator.embedding.net,
            "gen_main": self.generator.main,
            "critic_embed": self.critic.embedding.net,
            "critic_main": self.critic.main,
        }

    def save(self, path: Path) -> None:
        extra = {
            "gen_step": self.gen_step,
            "opt_step": self.opt_step,
            "rng_state": self.rng.bit_generator.state,
        }
        save_checkpoint(path, self._networks(), config={"gan": self.cfg.to_dict()}, extra=extra)

    def restore(self, path: Path) -> None:
        nets, config, extra = load_checkpoint(path)
        cfg = GanConfig.from_dict(config["gan"])

        def essentials(c: GanConfig) -> dict:
            d = c.to_dict()
            d.pop("epochs", None)           # resuming may extend the schedule
            d.pop("checkpoint_every", None)
            return d

        if essentials(cfg) != essentials(self.cfg):
            raise CheckpointError("checkpoint config does not match the trainer config")
        self.generator = _conditioned_from(nets["gen_embed"], nets["gen_main"], (cfg.latent_dim,))
        h, w = cfg.resolution
        self.critic = _conditioned_from(nets["critic_embed"], nets["critic_main"], (1, h, w))
        self.gen_step = int(extra["gen_step"])
        self.opt_step = int(extra["opt_step"])
        self.rng = np.random.default_rng(cfg.seed)
        self.rng.bit_generator.state = extra["rng_state"]

    # -- training -----------------------------------------------------------

    def _critic_steps_for(self, cycle_index: int) -> int:
        """Reference WGAN warm-up: the first cycles may train the critic
        longer so the distance estimate starts near its ceiling."""
        if cycle_index < self.cfg.warmup_cycles:
            return self.cfg.warmup_critic_steps
        return self.cfg.n_critic

    def _batches_consumed(self, gen_steps_done: int) -> int:
        warm = min(gen_steps_done, self.cfg.warmup_cycles)
        return (warm * self.cfg.warmup_critic_steps
                + (gen_steps_done - warm) * self.cfg.n_critic)

    def _stream(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        return load_batches(
            self.manifest,
            self.manifest_dir,
            batch_size=self.cfg.batch_size,
            shuffle_seed=self.cfg.seed,
            epochs=None,
        )

    def _probe_snapshot(self, epoch: int) -> dict:
        means = {}
        for cond in PROBE_CONDITIONS:
            rng = np.random.default_rng(_PROBE_SEED)
            z = rng.standard_normal((1, self.cfg.latent_dim)).astype(np.float32)
            out = self.generator.forward(z, np.array([[cond]]), training=False)
            means[str(cond)] = float(((out + 1.0) / 2.0).mean())
        return {"epoch": epoch, "probe_mean_density": means}

    def run(
        self,
        metrics_path: Optional[Path] = None,
        log_every: int = 0,
        step_callback=None,
    ) -> TrainResult:
        cfg = self.cfg
        mode = cfg.critic_mode
        per_epoch = cycles_per_epoch(self.n_samples, cfg.batch_size)
        total_cycles = cfg.epochs * per_epoch
        stream = self._stream()
        for _ in range(self._batches_consumed(self.gen_step)):  # fast-forward after resume
            next(stream)

        metrics = TrainingMetrics()
        final_path = self.checkpoint_dir / "checkpoint.cwto"
        labels = None

        while self.gen_step < total_cycles:
            for _ in range(self._critic_steps_for(self.gen_step)):
                grids, labels = next(stream)
                b = grids.shape[0]
                real = _grids_to_tanh(grids)
                z = self.rng.standard_normal((b, cfg.latent_dim)).astype(np.float32)
                fake = self.generator.forward(z, labels, training=True, rng=self.rng)
                x_in = np.concatenate([real, fake], axis=0)
                y_in = np.concatenate([labels, labels], axis=0)
                t0 = time.perf_counter()
                scores = self.critic.forward(x_in, y_in, training=True, rng=self.rng).ravel()
                s_real, s_fake = scores[:b], scores[b:]
                loss = critic_loss(s_real, s_fake, mode)
                if not math.isfinite(loss):
                    raise NumericError(
                        f"non-finite critic loss at step {self.opt_step}; "
                        f"last checkpoint: {final_path if final_path.exists() else 'none'}"
                    )
                g_real, g_fake = _critic_score_grads(s_real, s_fake, mode)
                dscores = np.concatenate([g_real, g_fake]).reshape(-1, 1)
                self.critic.backward(dscores)
                self.critic.step(cfg.lr)
                self.critic.clip(cfg.clip_c)
                self.opt_step += 1
                metrics.add(
                    step=self.opt_step,
                    kind="critic",
                    critic_loss=loss,
                    wasserstein=float(s_real.mean() - s_fake.mean()),
                    wall_s=time.perf_counter() - t0,
                )
                if step_callback is not None:
                    step_callback("critic", self)

            b = labels.shape[0]
            z = self.rng.standard_normal((b, cfg.latent_dim)).astype(np.float32)
            t0 = time.perf_counter()
            fake = self.generator.forward(z, labels, training=True, rng=self.rng)
            s_fake = self.critic.forward(fake, labels, training=True, rng=self.rng).ravel()
            loss = generator_loss(s_fake, mode)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite generator loss at step {self.opt_step}")
            ds = _generator_score_grads(s_fake, mode).reshape(-1, 1)
            dfake = self.critic.backward(ds)
            self.generator.backward(dfake)
            self.generator.step(cfg.lr * cfg.gen_lr_scale)
            self.opt_step += 1
            self.gen_step += 1
            metrics.add(
                step=self.opt_step,
                kind="generator",
                gen_loss=loss,
                wall_s=time.perf_counter() - t0,
            )
            if step_callback is not None:
                step_callback("generator", self)

            if self.gen_step % per_epoch == 0:
                metrics.snapshots.append(self._probe_snapshot(self.gen_step // per_epoch))
            if log_every and self.gen_step % log_every == 0:
                w_recent = metrics.wasserstein_series()[-cfg.n_critic:]
                print(
                    f"[gan] gen step {self.gen_step}/{total_cycles} "
                    f"wasserstein {np.mean(w_recent):+.4f}",
                    flush=True,
                )
            if cfg.checkpoint_every and self.gen_step % cfg.checkpoint_every == 0:
                self.save(final_path)
                if metrics_path is not None:
                    metrics.save_jsonl(metrics_path)

        self.save(final_path)
        if metrics_path is not None:
            metrics.save_jsonl(metrics_path)
        return TrainResult(
            checkpoint_path=final_path,
            metrics=metrics,
            generator_steps=self.gen_step,
            optimizer_steps=self.opt_step,
        )


def _conditioned_from(embed_net: Network, main_net: Network, target_shape) -> ConditionedNetwork:
    emb = LabelEmbedding.from_network(embed_net, target_shape)
    return ConditionedNetwork(emb, main_net)


def train(
    manifest: DatasetManifest,
    manifest_dir: Path,
    cfg: GanConfig,
    checkpoint_dir: Path,
    resume_from: Optional[Path] = None,
    metrics_path: Optional[Path] = None,
    log_every: int = 0,
    step_callback=None,
) -> TrainResult:
    """Alternating training: n_critic clipped critic updates per generator
    update, deterministic for a given seed, resumable from any checkpoint."""
    trainer = GanTrainer(manifest, manifest_dir, cfg, checkpoint_dir)
    if resume_from is not None:
        trainer.restore(resume_from)
    return trainer.run(metrics_path=metrics_path, log_every=log_every, step_callback=step_callback)


def load_generator(checkpoint_path: Path) -> tuple[ConditionedNetwork, GanConfig]:
    nets, config, _ = load_checkpoint(checkpoint_path)
    cfg = GanConfig.from_dict(config["gan"])
    gen = _conditioned_from(nets["gen_embed"], nets["gen_main"], (cfg.latent_dim,))
    return gen, cfg


@dataclass
class GenerationResult:
    fields: list[DensityField]
    seconds: list[float]

    @property
    def median_seconds(self) -> float:
        return float(np.median(self.seconds))


def sample(
    checkpoint: Path | tuple[ConditionedNetwork, GanConfig],
    volfrac: float,
    count: int = 1,
    seed: int = 0,
) -> GenerationResult:
    """Draw `count` structures for the requested condition: seeded noise,
    inference mode, outputs mapped from tanh range onto [0, 1] densities."""
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    ConditionLabel(volfrac)
    if isinstance(checkpoint, (str, Path)):
        gen, cfg = load_generator(checkpoint)
    else:
        gen, cfg = checkpoint
    h, w = cfg.resolution
    rng = np.random.default_rng(seed)
    labels = np.array([[volfrac]], dtype=np.float32)
    fields, seconds = [], []
    for _ in range(count):
        z = rng.standard_normal((1, cfg.latent_dim)).astype(np.float32)
        t0 = time.perf_counter()
        raw = gen.forward(z, labels, training=False)
        seconds.append(time.perf_counter() - t0)
        fields.append(_fields_from_raw(raw[0, 0], h, w))
    return GenerationResult(fields=fields, seconds=seconds)
