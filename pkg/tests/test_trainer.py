"""Schedules, the optimizer, mixing, config parsing, and the loop."""

import numpy as np
import pytest

from signrec import autodiff as ad
from signrec.errors import ConfigError, ParseError
from signrec.synth import SynthSpec, generate_dataset
from signrec.trainer import (
    TrainConfig,
    adam_step,
    build_label_tables,
    cosine_lr,
    gamma_schedule,
    intra_modality_mixup,
    load_train_config,
    mu_schedule,
    train,
)
from signrec.vknet import LateralFlags


class TestSchedules:
    def test_mu_endpoints_and_midpoint(self):
        assert mu_schedule(0, 40) == pytest.approx(0.99, abs=0)
        assert mu_schedule(40, 40) == 1.0
        assert mu_schedule(20, 40) == pytest.approx(0.995, abs=1e-12)

    def test_gamma_endpoints_and_midpoint(self):
        assert gamma_schedule(0, 40) == 1.0
        assert gamma_schedule(40, 40) == 0.0
        assert gamma_schedule(20, 40) == pytest.approx(0.5, abs=1e-12)

    def test_lr_endpoints_and_midpoint(self):
        assert cosine_lr(0, 40, 1e-3) == 1e-3
        assert cosine_lr(40, 40, 1e-3) == 0.0
        assert cosine_lr(20, 40, 1e-3) == pytest.approx(5e-4, abs=1e-15)

    def test_mu_monotone_nondecreasing(self):
        vals = [mu_schedule(m, 100) for m in range(101)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))


class TestAdam:
    def test_zero_grad_zero_decay_fixed_point(self):
        p = ad.Parameter(np.array([1.0, -2.0]))
        p.grad = np.zeros(2)
        adam_step([p], lr=0.1, step=1)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_scalar_step_matches_hand_recurrence(self):
        """Single scalar update against the Adam recurrence written out."""
        theta0, g = 0.7, 0.3
        lr, b1, b2, eps, wd = 0.01, 0.9, 0.999, 1e-8, 0.1
        p = ad.Parameter(np.array([theta0]))
        p.grad = np.array([g])
        adam_step([p], lr=lr, step=1, weight_decay=wd)
        geff = g + wd * theta0
        m = (1 - b1) * geff
        v = (1 - b2) * geff * geff
        mhat = m / (1 - b1)
        vhat = v / (1 - b2)
        expect = theta0 - lr * mhat / (np.sqrt(vhat) + eps)
        assert p.data[0] == pytest.approx(expect, abs=1e-12)

    def test_two_steps_match_recurrence(self):
        rng = np.random.default_rng(0)
        p = ad.Parameter(rng.normal(size=(3,)))
        theta = p.data.copy()
        m = np.zeros(3)
        v = np.zeros(3)
        for step in (1, 2):
            g = rng.normal(size=3)
            p.grad = g.copy()
            adam_step([p], lr=0.05, step=step, weight_decay=0.0)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            theta = theta - 0.05 * (m / (1 - 0.9**step)) / (
                np.sqrt(v / (1 - 0.999**step)) + 1e-8
            )
        np.testing.assert_allclose(p.data, theta, atol=1e-12)

    def test_deterministic(self):
        def run():
            p = ad.Parameter(np.array([0.5]))
            for step in (1, 2, 3):
                p.grad = np.array([0.1 * step])
                adam_step([p], lr=0.01, step=step, weight_decay=1e-3)
            return p.data.copy()

        np.testing.assert_array_equal(run(), run())


class TestMixup:
    def test_lambda_one_no_change(self):
        x = np.arange(12.0).reshape(2, 6)
        y = np.eye(2)

        class FakeRng:
            def beta(self, a, b):
                return 1.0

            def permutation(self, n):
                return np.array([1, 0])

        (xm,), (ym,), lam, _ = intra_modality_mixup([x], [y], FakeRng(), 0.8)
        np.testing.assert_array_equal(xm, x)
        np.testing.assert_array_equal(ym, y)

    def test_scalar_definition(self):
        class FakeRng:
            def beta(self, a, b):
                return 0.3

            def permutation(self, n):
                return np.array([1, 0])

        x = np.array([[1.0], [0.0]])
        (xm,), _, lam, _ = intra_modality_mixup([x], [None], FakeRng(), 0.8)
        assert xm[0, 0] == pytest.approx(0.3)
        assert xm[1, 0] == pytest.approx(0.7)

    def test_single_sample_batch_is_identity(self):
        x = np.ones((1, 3))
        y = np.ones((1, 2))
        (xm,), (ym,), lam, _ = intra_modality_mixup([x], [y], np.random.default_rng(0), 0.8)
        np.testing.assert_array_equal(xm, x)
        assert lam == 1.0

    def test_same_partner_and_lambda_across_tensors(self):
        rng = np.random.default_rng(1)
        tensors = [rng.normal(size=(4, 3)), rng.normal(size=(4, 2, 2))]
        labels = [rng.dirichlet(np.ones(3), size=4)]
        mixed_t, mixed_l, lam, perm = intra_modality_mixup(
            tensors, labels, np.random.default_rng(7), 0.8
        )
        for x, xm in zip(tensors, mixed_t):
            np.testing.assert_allclose(xm, lam * x + (1 - lam) * x[perm], atol=1e-12)
        np.testing.assert_allclose(
            mixed_l[0], lam * labels[0] + (1 - lam) * labels[0][perm], atol=1e-12
        )

    def test_mixed_soft_labels_still_sum_to_one(self):
        rng = np.random.default_rng(2)
        y = rng.dirichlet(np.ones(5), size=6)
        _, (ym,), _, _ = intra_modality_mixup(
            [rng.normal(size=(6, 2))], [y], np.random.default_rng(3), 0.8
        )
        np.testing.assert_allclose(ym.sum(axis=1), 1.0, atol=1e-9)


class TestTrainConfig:
    def test_defaults_valid(self):
        cfg = TrainConfig()
        assert cfg.resolved_heads("imm_heads") == tuple(
            ["long_video", "long_keypoint", "short_video", "short_keypoint",
             "long", "short", "joint"]
        )

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"lr": 0.1, "bogus": True})

    def test_lateral_type_toggles(self):
        cfg = TrainConfig.from_dict(
            {"laterals": {"video_keypoint": False, "video_video": True,
                          "keypoint_keypoint": True}}
        )
        assert not cfg.laterals.video_to_keypoint
        assert cfg.laterals.long_to_short_video

    def test_bad_lateral_key(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"laterals": {"sideways": True}})

    def test_json_config_file(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{"epochs": 3, "batch_size": 2, "smoothing": "vanilla"}')
        cfg = load_train_config(p)
        assert cfg.epochs == 3 and cfg.smoothing == "vanilla"

    def test_toml_config_file(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text('epochs = 2\nlr = 0.01\n[laterals]\nvideo_keypoint = false\n')
        cfg = load_train_config(p)
        assert cfg.epochs == 2 and cfg.lr == 0.01
        assert not cfg.laterals.video_to_keypoint

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{nope")
        with pytest.raises(ParseError):
            load_train_config(p)

    def test_roundtrip(self):
        cfg = TrainConfig(epochs=5, laterals=LateralFlags.none())
        back = TrainConfig.from_dict(cfg.to_dict())
        assert back.to_dict() == cfg.to_dict()


def micro_dataset(seed=0):
    return generate_dataset(
        SynthSpec(
            n_classes=4,
            vs_s_pairs=1,
            vs_d_pairs=0,
            train_per_class=3,
            dev_per_class=0,
            test_per_class=1,
            t_raw=8,
            video_size=8,
            heatmap_size=4,
            keypoints=3,
            embed_dim=6,
            min_separation=0.15,
            seed=seed,
        )
    )


def micro_config(**kw):
    base = dict(
        epochs=2,
        batch_size=4,
        t_long=4,
        channels=(2, 3, 3, 4, 4),
        pools=((2, 2, 2), (1, 2, 2), None, None, None),
        spatial_aug=False,
        seed=1,
    )
    base.update(kw)
    return TrainConfig(**base)


class TestLabelTables:
    def test_language_table_rows(self):
        ds = micro_dataset()
        soft, imm = build_label_tables(ds, micro_config())
        assert soft.shape == (4, 4)
        np.testing.assert_allclose(soft.sum(axis=1), 1.0, atol=1e-6)
        assert imm.shape == (4, 4, 4)

    def test_vanilla_table(self):
        ds = micro_dataset()
        soft, imm = build_label_tables(
            ds, micro_config(smoothing="vanilla", inter_mixup=False)
        )
        np.testing.assert_allclose(soft[0], [0.8, 0.2 / 3, 0.2 / 3, 0.2 / 3], atol=1e-6)
        assert imm is None


class TestTrainLoop:
    def test_two_epochs_produce_metrics_and_checkpoint(self, tmp_path):
        ds = micro_dataset()
        result = train(ds, micro_config(), out_dir=tmp_path / "run")
        assert result.epochs_run == 2
        assert len(result.metrics) == 2
        assert (tmp_path / "run" / "checkpoint.bin").exists()
        assert (tmp_path / "run" / "metrics.csv").exists()
        header = (tmp_path / "run" / "metrics.csv").read_text().splitlines()[0]
        assert header == "epoch,lr,gamma,mu,loss_total,loss_cls,loss_imm,train_top1"

    def test_plain_soft_ce_reduction(self, tmp_path):
        """Mixup off, vanilla eps=0, no aux branch: the loop must still run
        and report zero auxiliary loss."""
        ds = micro_dataset()
        cfg = micro_config(
            intra_mixup=False, inter_mixup=False, smoothing="vanilla", epsilon=0.0
        )
        result = train(ds, cfg)
        assert all(row["loss_imm"] == 0.0 for row in result.metrics)
        assert all(np.isfinite(row["loss_total"]) for row in result.metrics)

    def test_reproducible_runs_bitwise_identical(self, tmp_path):
        ds = micro_dataset()
        cfg = micro_config(reproducible=True)
        r1 = train(ds, cfg, out_dir=tmp_path / "a")
        r2 = train(ds, cfg, out_dir=tmp_path / "b")
        assert (tmp_path / "a" / "checkpoint.bin").read_bytes() == (
            tmp_path / "b" / "checkpoint.bin"
        ).read_bytes()
        assert (tmp_path / "a" / "metrics.csv").read_text() == (
            tmp_path / "b" / "metrics.csv"
        ).read_text()

    def test_early_stop(self):
        ds = micro_dataset()
        cfg = micro_config(epochs=30, stop_at_train_top1=0.0)
        result = train(ds, cfg)
        assert result.epochs_run == 1

    def test_loss_decreases_on_micro_overfit(self):
        ds = micro_dataset()
        cfg = micro_config(
            epochs=8, intra_mixup=False, spatial_aug=False, lr=3e-3
        )
        result = train(ds, cfg)
        first, last = result.metrics[0]["loss_total"], result.metrics[-1]["loss_total"]
        assert last < first
