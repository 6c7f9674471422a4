"""Architecture contracts: widths, shapes, parameter counts, freezing."""

import subprocess
import sys

import numpy as np
import pytest

from provnet.engine import ops
from provnet.errors import ConfigError
from provnet.models import (
    ConvNet,
    MultiFrameNet,
    StreamConfig,
    build_indnet,
    build_multiframe,
    build_prednet,
    config_fingerprint,
    freeze_backbone,
    indnet_config,
    indnet_reduced_config,
    plan_shapes,
    prednet_config,
    prednet_reduced_config,
)


def small_ind_cfg(num_classes=2):
    return StreamConfig(
        kind="I", num_classes=num_classes, input_size=16, in_channels=1,
        channels=(4, 8), kernels=(5, 3), convs_per_block=(1, 1),
        pool="max", head_hidden=(8,),
    )


def small_pred_cfg(num_classes=2):
    return StreamConfig(
        kind="P", num_classes=num_classes, input_size=16, in_channels=3,
        channels=(4, 8), kernels=(5, 3), convs_per_block=(1, 1),
        pool="avg", global_pool=True,
    )


class TestConfigs:
    def test_indnet_flatten_width_is_4096(self):
        cfg = indnet_config()
        assert len(cfg.channels) == 6
        assert cfg.final_spatial() == 4
        assert cfg.feature_width() == 4096

    def test_prednet_feature_width_is_256(self):
        cfg = prednet_config()
        assert len(cfg.channels) == 5
        assert cfg.global_pool
        assert cfg.feature_width() == 256

    def test_default_concat_width_is_4352(self):
        assert indnet_config().feature_width() + prednet_config().feature_width() == 4352

    def test_reduced_variants_validate(self):
        indnet_reduced_config().validate()
        prednet_reduced_config().validate()

    def test_misaligned_tuples_rejected(self):
        with pytest.raises(ConfigError):
            StreamConfig(kind="I", num_classes=2, channels=(4, 8),
                         kernels=(3,), convs_per_block=(1, 1)).validate()

    def test_bad_kernel_rejected(self):
        with pytest.raises(ConfigError):
            StreamConfig(kind="I", num_classes=2, channels=(4,),
                         kernels=(4,), convs_per_block=(1,)).validate()

    def test_odd_spatial_rejected(self):
        with pytest.raises(ConfigError):
            StreamConfig(kind="I", num_classes=2, input_size=18, channels=(4, 8),
                         kernels=(3, 3), convs_per_block=(1, 1)).validate()

    def test_wrong_kind_to_builders(self):
        with pytest.raises(ConfigError):
            build_indnet(small_pred_cfg())
        with pytest.raises(ConfigError):
            build_prednet(small_ind_cfg())


class TestShapes:
    def test_plan_matches_recorded_forward(self):
        cfg = small_ind_cfg()
        model = ConvNet(cfg, seed=0)
        record = []
        logits, _ = model.forward(np.zeros((1, 1, 16, 16)), record=record)
        planned = plan_shapes(cfg)
        assert record == planned
        assert logits.shape == (1, 2)

    def test_plan_full_indnet(self):
        planned = dict(plan_shapes(indnet_config()))
        assert planned["feature"] == (1, 4096)
        assert planned["block6.pool"] == (1, 256, 4, 4)
        assert planned["head.out"] == (1, 3)

    def test_plan_full_prednet(self):
        planned = dict(plan_shapes(prednet_config()))
        assert planned["global_pool"] == (1, 256, 1, 1)
        assert planned["feature"] == (1, 256)

    def test_pred_feature_shape(self):
        model = ConvNet(small_pred_cfg(), seed=1)
        feat, _ = model.features(np.zeros((4, 3, 16, 16)))
        assert feat.shape == (4, 8)


def expected_param_count(cfg: StreamConfig) -> int:
    total = 0
    in_c = cfg.in_channels
    for out_c, k, reps in zip(cfg.channels, cfg.kernels, cfg.convs_per_block):
        for _ in range(reps):
            total += out_c * in_c * k * k + out_c  # conv weight + bias
            total += 2 * out_c  # bn gamma + beta
            in_c = out_c
    width = cfg.feature_width()
    for hidden in cfg.head_hidden:
        total += hidden * width + hidden
        width = hidden
    total += cfg.num_classes * width + cfg.num_classes
    return total


class TestParameters:
    @pytest.mark.parametrize("cfg_fn", [small_ind_cfg, small_pred_cfg,
                                        indnet_reduced_config, prednet_reduced_config,
                                        indnet_config, prednet_config])
    def test_param_count_closed_form(self, cfg_fn):
        cfg = cfg_fn()
        model = ConvNet(cfg, seed=0)
        actual = sum(p.size for p in model.params.values())
        assert actual == expected_param_count(cfg)

    def test_zero_input_gives_uniform_probs(self):
        # zero input, zero biases, identity-at-init batchnorm (eval mode):
        # every activation stays zero, so the softmax must be uniform
        model = ConvNet(small_ind_cfg(num_classes=4), seed=3)
        probs = model.predict_proba(np.zeros((2, 1, 16, 16)))
        np.testing.assert_allclose(probs, 0.25, atol=1e-7)

    def test_predict_proba_rows_sum_to_one(self, rng):
        model = ConvNet(small_pred_cfg(), seed=2)
        probs = model.predict_proba(rng.normal(size=(5, 3, 16, 16)))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_named_arrays_round_trip(self, rng):
        a = ConvNet(small_ind_cfg(), seed=7)
        b = ConvNet(small_ind_cfg(), seed=8)
        b.load_arrays(a.named_arrays())
        for name, arr in a.named_arrays().items():
            assert np.array_equal(arr, b.named_arrays()[name]), name

    def test_load_arrays_missing_param(self):
        model = ConvNet(small_ind_cfg(), seed=0)
        table = model.named_arrays()
        del table["head.out.bias"]
        with pytest.raises(ConfigError):
            model.load_arrays(table)


class TestFingerprint:
    def test_same_config_same_fingerprint(self):
        assert config_fingerprint(small_ind_cfg()) == config_fingerprint(small_ind_cfg())
        assert config_fingerprint(small_ind_cfg()) != config_fingerprint(small_pred_cfg())

    def test_fingerprint_stable_across_processes(self):
        code = (
            "from provnet.models import indnet_config, config_fingerprint;"
            "print(config_fingerprint(indnet_config()))"
        )
        out = subprocess.run([sys.executable, "-c", code],
                             capture_output=True, text=True, check=True)
        assert out.stdout.strip() == config_fingerprint(indnet_config())


class TestFreezing:
    def test_freeze_marks_blocks_only(self):
        model = freeze_backbone(ConvNet(small_ind_cfg(), seed=0))
        for name, flag in model.trainable.items():
            assert flag == name.startswith("head")
        assert set(model.trainable_params()) == {
            n for n in model.params if n.startswith("head")
        }

    def test_frozen_step_touches_no_backbone(self, rng):
        model = freeze_backbone(ConvNet(small_ind_cfg(), seed=0))
        before_backbone = model.backbone_hash()
        x = rng.normal(size=(4, 1, 16, 16))
        _, grads, _ = model.training_step(x, np.array([0, 1, 0, 1]))
        assert all(name.startswith("head") for name in grads)
        for name, grad in grads.items():
            model.params[name] -= 0.1 * grad
        assert model.backbone_hash() == before_backbone

    def test_frozen_bn_stats_pinned(self, rng):
        model = freeze_backbone(ConvNet(small_ind_cfg(), seed=0))
        stats_before = {k: v.copy() for k, v in model.state.items()}
        model.training_step(rng.normal(size=(2, 1, 16, 16)), np.array([0, 1]))
        for name, arr in model.state.items():
            assert np.array_equal(arr, stats_before[name]), name

    def test_unfrozen_bn_stats_move(self, rng):
        model = ConvNet(small_ind_cfg(), seed=0)
        mean_before = model.state["block1.bn1.running_mean"].copy()
        model.training_step(rng.normal(size=(2, 1, 16, 16)), np.array([0, 1]))
        assert not np.array_equal(model.state["block1.bn1.running_mean"], mean_before)

    def test_unknown_scope_rejected(self):
        with pytest.raises(ConfigError):
            freeze_backbone(ConvNet(small_ind_cfg(), seed=0), scope="heads")


class TestMultiFrame:
    def build(self, num_classes=2, seed=0):
        ind = ConvNet(small_ind_cfg(num_classes), seed=seed)
        pred = ConvNet(small_pred_cfg(num_classes), seed=seed + 1)
        return build_multiframe(ind, pred, head_hidden=(16,), seed=seed + 2)

    def test_concat_width(self):
        multi = self.build()
        assert multi.concat_width == (small_ind_cfg().feature_width()
                                      + small_pred_cfg().feature_width())

    def test_class_count_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            MultiFrameNet(ConvNet(small_ind_cfg(2)), ConvNet(small_pred_cfg(3)))

    def test_streams_frozen_on_fuse(self):
        multi = self.build()
        assert multi.ind.frozen_blocks and multi.pred.frozen_blocks
        assert not any(multi.ind.trainable[n] for n in multi.ind.trainable
                       if n.startswith("block"))

    def test_compositional_forward(self, rng):
        # fused logits must equal the plain-numpy head applied to the
        # concatenated per-stream features
        multi = self.build(seed=5)
        xi = rng.normal(size=(3, 1, 16, 16)).astype(np.float32)
        xp = rng.normal(size=(3, 3, 16, 16)).astype(np.float32)
        logits, _ = multi.forward((xi, xp))

        fi, _ = multi.ind.features(xi)
        fp, _ = multi.pred.features(xp)
        feat = np.concatenate([fi.data, fp.data], axis=1)
        h = np.maximum(feat @ multi.params["head.fc1.weight"].T
                       + multi.params["head.fc1.bias"], 0.0)
        manual = h @ multi.params["head.out.weight"].T + multi.params["head.out.bias"]
        np.testing.assert_allclose(logits.data, manual, rtol=1e-5, atol=1e-6)

    def test_training_step_only_head_grads(self, rng):
        multi = self.build()
        before = multi.backbone_hash()
        xi = rng.normal(size=(2, 1, 16, 16))
        xp = rng.normal(size=(2, 3, 16, 16))
        loss, grads, probs = multi.training_step((xi, xp), np.array([0, 1]))
        assert np.isfinite(loss)
        assert set(grads) == set(multi.params)
        assert probs.shape == (2, 2)
        assert multi.backbone_hash() == before

    def test_named_arrays_round_trip(self):
        a = self.build(seed=1)
        b = self.build(seed=9)
        b.load_arrays(a.named_arrays())
        assert b.backbone_hash() == a.backbone_hash()
        assert b.head_hash() == a.head_hash()

    def test_predict_proba_rows_sum_to_one(self, rng):
        multi = self.build()
        probs = multi.predict_proba(
            (rng.normal(size=(4, 1, 16, 16)), rng.normal(size=(4, 3, 16, 16)))
        )
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_default_width_check(self):
        ind = build_indnet(num_classes=3, seed=0)
        pred = build_prednet(num_classes=3, seed=1)
        multi = build_multiframe(ind, pred)
        assert multi.concat_width == 4352
