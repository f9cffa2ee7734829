"""CWGAN engine tests: embedding, builders, losses (with FD oracle through
tiny networks), training mechanics, resume determinism, and sampling."""
import numpy as np
import pytest

from topoforge import (
    ConditionLabel,
    GanConfig,
    build_critic,
    build_generator,
    critic_loss,
    generator_loss,
    sample,
)
from topoforge.dataset import DatasetManifest, GridSpec, generate_dataset
from topoforge.errors import ConfigError, ParameterError
from topoforge.gan import (
    LabelEmbedding,
    GanTrainer,
    _critic_score_grads,
    _generator_score_grads,
    cycles_per_epoch,
    embed_label,
    load_generator,
    train,
)
from topoforge.net.checkpoint import load_checkpoint


class TestLabelEmbedding:
    def test_target_shape(self):
        emb = LabelEmbedding((120, 120), seed=0)
        out = emb.embed(np.array([[0.4]]))
        assert out.shape == (1, 120, 120)

    def test_forced_ones_is_identity_gate(self):
        emb = LabelEmbedding((4, 4), seed=0)
        emb.net.layers[0].params["w"][:] = 0.0
        emb.net.layers[0].params["b"][:] = 1.0
        img = np.random.default_rng(0).random((2, 4, 4), dtype=np.float32)
        gate = emb.embed(np.array([[0.3], [0.7]]))
        np.testing.assert_array_equal(img * gate, img)

    def test_distinct_labels_distinct_embeddings(self):
        emb = LabelEmbedding((8, 8), seed=1)
        # non-degenerate weights
        emb.net.layers[0].params["w"][:] = np.random.default_rng(2).normal(
            0, 1, emb.net.layers[0].params["w"].shape
        ).astype(np.float32)
        a = embed_label(emb, 0.3)
        b = embed_label(emb, 0.7)
        assert np.linalg.norm(a - b) > 0

    def test_batched(self):
        emb = LabelEmbedding((6,), seed=0)
        out = embed_label(emb, np.array([0.3, 0.5, 0.7]))
        assert out.shape == (3, 6)


DESK = dict(resolution=(48, 48), base_channels=32, stages=4, batch_size=4, latent_dim=16)


class TestBuilders:
    def test_generator_output_shape_and_range(self):
        cfg = GanConfig(**DESK)
        gen = build_generator(cfg)
        z = np.random.default_rng(0).standard_normal((3, cfg.latent_dim)).astype(np.float32)
        labels = np.full((3, 1), 0.5, dtype=np.float32)
        out = gen.forward(z, labels, training=False)
        assert out.shape == (3, 1, 48, 48)
        assert out.min() >= -1.0 and out.max() <= 1.0

    def test_generator_resolution_120(self):
        cfg = GanConfig(resolution=(120, 120), base_channels=16, latent_dim=8)
        assert cfg.resolved_stages() == 3
        gen = build_generator(cfg)
        z = np.zeros((1, 8), dtype=np.float32)
        out = gen.forward(z, np.array([[0.4]]), training=False)
        assert out.shape == (1, 1, 120, 120)

    def test_generator_deterministic_inference(self):
        cfg = GanConfig(**DESK)
        gen = build_generator(cfg)
        z = np.random.default_rng(1).standard_normal((2, cfg.latent_dim)).astype(np.float32)
        labels = np.array([[0.4], [0.6]], dtype=np.float32)
        a = gen.forward(z, labels, training=False)
        b = gen.forward(z, labels, training=False)
        assert a.tobytes() == b.tobytes()

    def test_unreachable_resolution(self):
        with pytest.raises(ConfigError, match="resolution"):
            GanConfig(resolution=(50, 50), stages=4)
        with pytest.raises(ConfigError):
            GanConfig(resolution=(7, 7))

    def test_critic_scalar_output(self):
        cfg = GanConfig(**DESK)
        critic = build_critic(cfg)
        imgs = np.random.default_rng(0).random((5, 1, 48, 48), dtype=np.float32)
        labels = np.full((5, 1), 0.4, dtype=np.float32)
        out = critic.forward(imgs, labels, training=False)
        assert out.shape == (5, 1)

    def test_paper_tanh_critic_bounded(self):
        cfg = GanConfig(critic_mode="paper_tanh", **DESK)
        critic = build_critic(cfg)
        imgs = np.random.default_rng(0).random((4, 1, 48, 48), dtype=np.float32) * 10
        labels = np.full((4, 1), 0.4, dtype=np.float32)
        out = critic.forward(imgs, labels, training=False)
        assert (np.abs(out) < 1.0).all()

    def test_label_conditioning_is_wired_in(self):
        """Same noise, different labels -> different outputs."""
        cfg = GanConfig(**DESK)
        gen = build_generator(cfg)
        z = np.random.default_rng(3).standard_normal((1, cfg.latent_dim)).astype(np.float32)
        a = gen.forward(z, np.array([[0.3]]), training=False)
        b = gen.forward(z, np.array([[0.7]]), training=False)
        assert np.linalg.norm(a - b) > 0


class TestLosses:
    def test_critic_loss_values(self):
        assert critic_loss([1.0, 1.0], [1.0, 1.0]) == 0.0
        assert critic_loss([1.0, 1.0], [-1.0, -1.0]) == -2.0

    def test_generator_loss_values(self):
        assert generator_loss([0.0, 0.0]) == 0.0
        assert generator_loss([2.0, 4.0]) == -3.0

    def test_generator_loss_monotone(self):
        assert generator_loss([1.0]) > generator_loss([2.0])

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            critic_loss([], [1.0])
        with pytest.raises(ParameterError):
            generator_loss([])

    def test_critic_grad_matches_finite_difference(self):
        rng = np.random.default_rng(0)
        s_real = rng.standard_normal(6)
        s_fake = rng.standard_normal(4)
        g_real, g_fake = _critic_score_grads(s_real, s_fake, "linear")
        h = 1e-6
        for i in range(6):
            up, dn = s_real.copy(), s_real.copy()
            up[i] += h
            dn[i] -= h
            fd = (critic_loss(up, s_fake) - critic_loss(dn, s_fake)) / (2 * h)
            assert abs(fd - g_real[i]) < 1e-9
        for i in range(4):
            up, dn = s_fake.copy(), s_fake.copy()
            up[i] += h
            dn[i] -= h
            fd = (critic_loss(s_real, up) - critic_loss(s_real, dn)) / (2 * h)
            assert abs(fd - g_fake[i]) < 1e-9
        np.testing.assert_allclose(g_real, -1.0 / 6)
        np.testing.assert_allclose(g_fake, 1.0 / 4)

    def test_generator_grad_matches_finite_difference(self):
        rng = np.random.default_rng(1)
        s = rng.standard_normal(5)
        g = _generator_score_grads(s, "linear")
        h = 1e-6
        for i in range(5):
            up, dn = s.copy(), s.copy()
            up[i] += h
            dn[i] -= h
            fd = (generator_loss(up) - generator_loss(dn)) / (2 * h)
            assert abs(fd - g[i]) < 1e-9

    def test_paper_tanh_grads_match_finite_difference(self):
        rng = np.random.default_rng(2)
        s_real = rng.uniform(-0.8, 0.8, 3)
        s_fake = rng.uniform(-0.8, 0.8, 3)
        g_real, g_fake = _critic_score_grads(s_real, s_fake, "paper_tanh")
        h = 1e-6
        for i in range(3):
            up, dn = s_real.copy(), s_real.copy()
            up[i] += h
            dn[i] -= h
            fd = (critic_loss(up, s_fake, "paper_tanh") - critic_loss(dn, s_fake, "paper_tanh")) / (2 * h)
            assert abs(fd - g_real[i]) < 1e-8

    def test_loss_gradient_through_tiny_network(self):
        """Composite check: d(critic_loss)/d(critic params) via FD, float64."""
        from topoforge.net import Network, dense, leaky_relu

        net = Network([dense(4, 3), leaky_relu(0.2), dense(3, 1)], seed=0, dtype=np.float64)
        rng = np.random.default_rng(5)
        x_real = rng.standard_normal((3, 4)) + 1.0
        x_fake = rng.standard_normal((3, 4)) - 1.0

        def loss_value():
            s_r = net.forward(x_real).ravel()
            s_f = net.forward(x_fake).ravel()
            return critic_loss(s_r, s_f)

        # analytic: combined batch trick used by the trainer
        xs = np.concatenate([x_real, x_fake])
        scores = net.forward(xs, training=True).ravel()
        g_r, g_f = _critic_score_grads(scores[:3], scores[3:], "linear")
        net.backward(np.concatenate([g_r, g_f]).reshape(-1, 1))
        analytic = [g.copy() for g in net.gradients()]

        h = 1e-6
        params = net.parameters()
        probe = rng.integers(0, len(params), size=6)
        for pi in probe:
            name, arr = params[pi]
            j = int(rng.integers(0, arr.size))
            orig = arr.flat[j]
            arr.flat[j] = orig + h
            up = loss_value()
            arr.flat[j] = orig - h
            dn = loss_value()
            arr.flat[j] = orig
            fd = (up - dn) / (2 * h)
            a = analytic[pi].flat[j]
            assert abs(fd - a) / max(abs(fd), abs(a), 1e-8) < 1e-4


class TestConditionLabel:
    def test_in_range_silent(self):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("error")
            ConditionLabel(0.4)

    def test_out_of_range_warns(self):
        with pytest.warns(UserWarning, match="outside"):
            ConditionLabel(2.0)

    def test_non_finite_rejected(self):
        with pytest.raises(ParameterError):
            ConditionLabel(float("nan"))


TOY_SPEC = GridSpec(
    volfrac_range=(0.3, 0.7, 0.1),
    penal_range=(3.0, 3.0, 0.1),
    rmin_range=(1.2, 1.5, 0.3),
    resolution=(16, 16),
)
TOY_CFG = dict(
    resolution=(16, 16),
    latent_dim=8,
    base_channels=16,
    stages=2,
    batch_size=4,
    n_critic=2,
    seed=11,
    critic_dropout=0.25,
)


@pytest.fixture(scope="module")
def toy_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy-gan-ds")
    manifest = generate_dataset(TOY_SPEC, out, workers=1)
    assert len(manifest.records) == 10
    return out, manifest


@pytest.fixture(scope="module")
def toy_training(toy_dataset, tmp_path_factory):
    out, manifest = toy_dataset
    ckpt_dir = tmp_path_factory.mktemp("toy-gan-ckpt")
    cfg = GanConfig(epochs=4, **TOY_CFG)
    result = train(manifest, out, cfg, ckpt_dir)
    return cfg, result


class TestTraining:
    def test_step_schedule(self, toy_dataset, toy_training):
        out, manifest = toy_dataset
        cfg, result = toy_training
        per_epoch = cycles_per_epoch(10, cfg.batch_size)  # ceil(10/4) = 3
        expected_gen = cfg.epochs * per_epoch
        assert result.generator_steps == expected_gen
        assert result.optimizer_steps == expected_gen * (cfg.n_critic + 1)
        kinds = [r["kind"] for r in result.metrics.records]
        # exactly n_critic critic steps before each generator step
        for i, k in enumerate(kinds):
            expected = "generator" if (i + 1) % (cfg.n_critic + 1) == 0 else "critic"
            assert k == expected
        steps = [r["step"] for r in result.metrics.records]
        assert steps == list(range(1, len(steps) + 1))

    def test_critic_weights_clipped(self, toy_training):
        cfg, result = toy_training
        nets, _, _ = load_checkpoint(result.checkpoint_path)
        for name in ("critic_embed", "critic_main"):
            for _, p in nets[name].parameters():
                assert np.abs(p).max() <= cfg.clip_c + 1e-12

    def test_checkpoint_roundtrip_sampling(self, toy_training):
        cfg, result = toy_training
        a = sample(result.checkpoint_path, volfrac=0.5, count=2, seed=3)
        b = sample(result.checkpoint_path, volfrac=0.5, count=2, seed=3)
        for fa, fb in zip(a.fields, b.fields):
            assert fa.values.tobytes() == fb.values.tobytes()
        assert a.fields[0].values.shape == (16, 16)
        assert 0.0 <= a.fields[0].values.min() and a.fields[0].values.max() <= 1.0

    def test_different_seeds_different_samples(self, toy_training):
        cfg, result = toy_training
        a = sample(result.checkpoint_path, volfrac=0.5, count=1, seed=3)
        b = sample(result.checkpoint_path, volfrac=0.5, count=1, seed=4)
        assert a.fields[0].values.tobytes() != b.fields[0].values.tobytes()

    def test_resume_reproduces_metrics_bitwise(self, toy_dataset, tmp_path):
        """Stop at 2 epochs, resume to 4: identical metric values as an
        uninterrupted 4-epoch run (wall-clock excluded)."""
        out, manifest = toy_dataset

        cfg_full = GanConfig(epochs=4, **TOY_CFG)
        full = train(manifest, out, cfg_full, tmp_path / "full")

        cfg_half = GanConfig(epochs=2, **TOY_CFG)
        half = train(manifest, out, cfg_half, tmp_path / "half")
        resumed = train(
            manifest, out, cfg_full, tmp_path / "resumed",
            resume_from=half.checkpoint_path,
        )

        def strip(records):
            return [
                {k: v for k, v in r.items() if k != "wall_s"} for r in records
            ]

        full_recs = strip(full.metrics.records)
        resumed_recs = strip(resumed.metrics.records)
        assert resumed_recs == full_recs[len(full_recs) - len(resumed_recs):]
        # final parameters bitwise identical
        a, _, _ = load_checkpoint(full.checkpoint_path)
        b, _, _ = load_checkpoint(resumed.checkpoint_path)
        for name in a:
            for (na, pa), (nb, pb) in zip(a[name].parameters(), b[name].parameters()):
                assert na == nb and pa.tobytes() == pb.tobytes()

    def test_trainer_rejects_mismatched_resolution(self, toy_dataset):
        out, manifest = toy_dataset
        cfg = GanConfig(resolution=(32, 32), latent_dim=8, base_channels=16, stages=2)
        with pytest.raises(ConfigError, match="resolution"):
            GanTrainer(manifest, out, cfg, out / "x")


class TestSample:
    def test_count_and_shapes(self, toy_training):
        cfg, result = toy_training
        res = sample(result.checkpoint_path, volfrac=0.4, count=3, seed=0)
        assert len(res.fields) == 3 and len(res.seconds) == 3
        assert all(s > 0 for s in res.seconds)

    def test_invalid_count(self, toy_training):
        cfg, result = toy_training
        with pytest.raises(ParameterError):
            sample(result.checkpoint_path, volfrac=0.4, count=0, seed=0)

    def test_loaded_generator_reusable(self, toy_training):
        cfg, result = toy_training
        gen_cfg = load_generator(result.checkpoint_path)
        a = sample(gen_cfg, volfrac=0.4, count=1, seed=5)
        b = sample(result.checkpoint_path, volfrac=0.4, count=1, seed=5)
        assert a.fields[0].values.tobytes() == b.fields[0].values.tobytes()


class TestCriticWidth:
    def test_decoupled_critic_channels(self):
        from topoforge.gan import critic_specs

        cfg = GanConfig(resolution=(48, 48), latent_dim=8, base_channels=128,
                        critic_base_channels=32, stages=4)
        convs = [sp for sp in critic_specs(cfg) if sp.kind == "conv"]
        assert [c.options["out_channels"] for c in convs] == [8, 8, 16, 32]
        critic = build_critic(cfg)
        imgs = np.zeros((2, 1, 48, 48), dtype=np.float32)
        out = critic.forward(imgs, np.full((2, 1), 0.5, dtype=np.float32), training=False)
        assert out.shape == (2, 1)
