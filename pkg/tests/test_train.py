import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from growgcn import (
    Adam,
    EarlyStopper,
    GcnLayer,
    LayerMode,
    LayerStack,
    NumericalAbort,
    Tensor,
    TrainConfig,
    TrainReport,
    evaluate,
    glorot_init,
    make_adapter,
    normalized_laplacian,
    train,
    train_lgt,
    train_standard,
)
from growgcn import layers as ly
from growgcn.train import _stage_caches, _stage_forward, adam_step


def make_cfg(**kw):
    base = dict(hidden_dim=8, max_epochs=40, patience=10, seed=0)
    base.update(kw)
    return TrainConfig(**base)


class TestAdam:
    def test_first_step_is_minus_lr(self):
        p = np.zeros(3)
        adam_step(p, np.ones(3), np.zeros(3), np.zeros(3), t=1, lr=0.1)
        assert np.allclose(p, -0.1, atol=1e-8)

    def test_none_grad_skipped(self):
        p = Tensor(np.ones((2, 2)), requires_grad=True)
        opt = Adam([{"params": [p], "lr": 0.5}])
        opt.step()
        assert np.array_equal(p.data, np.ones((2, 2)))

    def test_decoupled_weight_decay(self):
        p = Tensor(np.ones(4), requires_grad=True)
        p.grad = np.zeros(4)
        opt = Adam([{"params": [p], "lr": 0.01, "weight_decay": 0.1}])
        opt.step()
        # zero gradient keeps the adam direction at zero; only decay acts
        assert np.allclose(p.data, 1.0 - 0.01 * 0.1)

    def test_per_group_lr(self):
        a = Tensor(np.zeros(2), requires_grad=True)
        b = Tensor(np.zeros(2), requires_grad=True)
        a.grad = np.ones(2)
        b.grad = np.ones(2)
        opt = Adam([{"params": [a], "lr": 0.1}, {"params": [b], "lr": 0.01}])
        opt.step()
        assert np.allclose(a.data, -0.1, atol=1e-8)
        assert np.allclose(b.data, -0.01, atol=1e-9)

    def test_nonfinite_grad_aborts(self):
        p = Tensor(np.ones(2), requires_grad=True)
        p.grad = np.array([1.0, np.inf])
        opt = Adam([{"params": [p], "lr": 0.1}])
        with pytest.raises(NumericalAbort, match="non-finite gradient"):
            opt.step()

    def test_zero_grad_clears(self):
        p = Tensor(np.ones(2), requires_grad=True)
        p.grad = np.ones(2)
        opt = Adam([{"params": [p], "lr": 0.1}])
        opt.zero_grad()
        assert p.grad is None


class TestEarlyStopper:
    def test_flat_trace(self):
        stop = EarlyStopper(patience=2)
        outcomes = [stop.update(v) for v in [0.5, 0.5, 0.5]]
        assert outcomes == [False, False, True]
        assert stop.best == 0.5 and stop.best_epoch == 1

    def test_peak_then_plateau(self):
        stop = EarlyStopper(patience=3)
        outcomes = [stop.update(v) for v in [0.5, 0.7, 0.6, 0.6, 0.6]]
        assert outcomes == [False, False, False, False, True]
        assert stop.best == 0.7 and stop.best_epoch == 2

    def test_ties_do_not_refresh(self):
        stop = EarlyStopper(patience=1)
        assert not stop.update(0.9)
        assert stop.update(0.9)  # tie is not a strict improvement

    def test_rejects_zero_patience(self):
        with pytest.raises(ValueError):
            EarlyStopper(0)

    @settings(max_examples=200, deadline=None)
    @given(
        values=st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=1, max_size=25),
        patience=st.integers(1, 5),
    )
    def test_matches_reference_walk(self, values, patience):
        stop = EarlyStopper(patience)
        best, best_epoch = -np.inf, 0
        for epoch, v in enumerate(values, start=1):
            stopped = stop.update(v)
            if v > best:
                best, best_epoch = v, epoch
            assert stop.best == best
            assert stop.best_epoch == best_epoch
            assert stop.bad == epoch - best_epoch
            assert stopped == (epoch - best_epoch >= patience)
            if stopped:
                break


class TestConfig:
    def test_validate_rejects(self):
        bad = [
            dict(depth=0), dict(hidden_dim=0), dict(lr=0.0), dict(weight_decay=-1.0),
            dict(dropout_p=1.0), dict(max_epochs=0), dict(patience=0),
            dict(max_epochs=10, patience=11), dict(lora_rank=0),
            dict(loss_reduction="median"), dict(new_layer_init="zeros"),
        ]
        for kw in bad:
            with pytest.raises(ValueError):
                TrainConfig(**kw).validate()
        TrainConfig().validate()

    def test_dropout_resolution(self):
        assert TrainConfig().resolved_dropout("standard") == 0.5
        assert TrainConfig().resolved_dropout("lgt") == 0.0
        assert TrainConfig(dropout_p=0.2).resolved_dropout("standard") == 0.2
        assert TrainConfig(dropout_p=0.2).resolved_dropout("lgt") == 0.2

    def test_lora_lr_resolution(self):
        assert TrainConfig(lr=0.03).resolved_lora_lr() == 0.03
        assert TrainConfig(lr=0.03, lora_lr=0.5).resolved_lora_lr() == 0.5


class TestStandardTrainer:
    def test_restore_best_and_report_consistency(self, tiny_dataset):
        cfg = make_cfg(depth=2)
        stack, report = train_standard(tiny_dataset, cfg, "gcn")
        assert len(report.stages) == 1
        assert report.stages[0].epochs_run == len(report.stages[0].train_loss)
        assert evaluate(stack, tiny_dataset, tiny_dataset.splits.val) == \
            report.stages[0].best_val_acc
        assert evaluate(stack, tiny_dataset, tiny_dataset.splits.test) == report.test_acc

    def test_deterministic_given_seed(self, tiny_dataset):
        runs = [train_standard(tiny_dataset, make_cfg(depth=2, seed=3), "gcn")
                for _ in range(2)]
        (s1, r1), (s2, r2) = runs
        assert r1.test_acc == r2.test_acc
        assert r1.stages[0].train_loss == r2.stages[0].train_loss
        for a, b in zip(s1.parameters(), s2.parameters()):
            assert np.array_equal(a.data, b.data)

    def test_seed_changes_trajectory(self, tiny_dataset):
        _, r1 = train_standard(tiny_dataset, make_cfg(depth=2, seed=0), "gcn")
        _, r2 = train_standard(tiny_dataset, make_cfg(depth=2, seed=1), "gcn")
        assert r1.stages[0].train_loss != r2.stages[0].train_loss

    def test_dropout_defaults_per_variant(self, tiny_dataset):
        cfg = make_cfg(depth=2, max_epochs=2, patience=2)
        stack, _ = train_standard(tiny_dataset, cfg, "gcn")
        assert stack.dropout_p == 0.5
        stack, _ = train_standard(tiny_dataset, cfg, "sgc")
        assert stack.dropout_p == 0.0
        stack, _ = train_standard(tiny_dataset, make_cfg(
            depth=2, max_epochs=2, patience=2, dropout_p=0.2), "sgc")
        assert stack.dropout_p == 0.2

    def test_sgc_fast_path_matches_stack_forward(self, tiny_dataset):
        cfg = make_cfg(depth=3)
        stack, report = train_standard(tiny_dataset, cfg, "sgc")
        assert stack.input_layer is None and stack.sgc_steps == 3
        assert evaluate(stack, tiny_dataset, tiny_dataset.splits.test) == report.test_acc

    def test_pairnorm_variant_builds(self, tiny_dataset):
        cfg = make_cfg(depth=2, max_epochs=3, patience=3, pairnorm_s=2.0)
        stack, _ = train_standard(tiny_dataset, cfg, "gcn+pairnorm")
        assert stack.pairnorm is not None and stack.pairnorm.s == 2.0

    def test_loss_reduction_scales_first_epoch(self, tiny_dataset):
        kw = dict(depth=2, max_epochs=1, patience=1, seed=5)
        _, r_mean = train_standard(tiny_dataset, make_cfg(**kw), "gcn")
        _, r_sum = train_standard(tiny_dataset, make_cfg(loss_reduction="sum", **kw), "gcn")
        n_train = len(tiny_dataset.splits.train)
        assert r_sum.stages[0].train_loss[0] == pytest.approx(
            r_mean.stages[0].train_loss[0] * n_train, rel=1e-5)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_forward_aborts(self, tiny_dataset):
        blown = dataclasses.replace(tiny_dataset, X=tiny_dataset.X * 1e39)
        cfg = make_cfg(depth=2, row_normalize_features=False)
        with pytest.raises(NumericalAbort):
            train_standard(blown, cfg, "gcn")

    def test_unknown_variant(self, tiny_dataset):
        with pytest.raises(ValueError, match="variant"):
            train_standard(tiny_dataset, make_cfg(), "gat")


def lgt_cfg(**kw):
    base = dict(depth=3, hidden_dim=8, max_epochs=8, patience=4, lora_rank=2, seed=0)
    base.update(kw)
    return TrainConfig(**base)


class TestLgtTrainer:
    def test_grows_to_requested_depth(self, tiny_dataset):
        stack, report = train_lgt(tiny_dataset, lgt_cfg())
        assert stack.depth == 3
        assert len(report.stages) == 3
        assert report.total_epochs == sum(s.epochs_run for s in report.stages)
        # merge on: every layer is plain frozen, only the head stays trainable
        assert all(l.mode is LayerMode.FROZEN for l in stack.conv_layers())
        assert stack.trainable_parameters() == [stack.head]

    def test_trainable_counts_per_stage(self, tiny_dataset):
        f, c, d, r = tiny_dataset.f, tiny_dataset.C, 8, 2
        expected = {1: f * d + d * c}
        for s in (2, 3, 4):
            expected[s] = d * d + d * c + r * (f + d) + (s - 2) * 2 * r * d
        seen = {}

        def on_start(stage, stack, L, Xp):
            seen[stage] = sum(p.data.size for p in stack.trainable_parameters())

        train_lgt(tiny_dataset, lgt_cfg(depth=4, max_epochs=3, patience=3),
                  on_stage_start=on_start)
        assert seen == expected

    def test_no_lora_trains_only_new_and_head(self, tiny_dataset):
        seen = {}

        def on_start(stage, stack, L, Xp):
            seen[stage] = sum(p.data.size for p in stack.trainable_parameters())

        stack, _ = train_lgt(tiny_dataset, lgt_cfg(use_lora=False, max_epochs=3,
                                                   patience=3), on_stage_start=on_start)
        f, c, d = tiny_dataset.f, tiny_dataset.C, 8
        assert seen == {1: f * d + d * c, 2: d * d + d * c, 3: d * d + d * c}
        assert all(l.adapter is None for l in stack.conv_layers())

    def test_frozen_weights_immutable_without_merge(self, tiny_dataset):
        frozen_at = {}

        def on_end(stage, stack):
            # every conv layer W is about to be (or already is) frozen; none may
            # change after this point when merging is off
            for i, layer in enumerate(stack.conv_layers()):
                frozen_at.setdefault(i, layer.W.data.copy())

        stack, _ = train_lgt(tiny_dataset, lgt_cfg(merge_adapters=False),
                             on_stage_end=on_end)
        for i, layer in enumerate(stack.conv_layers()):
            assert np.array_equal(layer.W.data, frozen_at[i])
        # adapters persist on every layer that ever got one
        assert all(l.mode is LayerMode.FROZEN_LORA for l in stack.conv_layers()[:-1])
        assert stack.conv_layers()[-1].adapter is None

    def test_merge_accounting_bitwise(self, tiny_dataset):
        last = {}

        def on_end(stage, stack):
            last.clear()
            for i, layer in enumerate(stack.conv_layers()):
                if layer.adapter is not None:
                    a = layer.adapter
                    last[i] = (layer.W.data.copy(), a.scaling, a.A.data.copy(),
                               a.B.data.copy())
                else:
                    last[i] = (layer.W.data.copy(), None, None, None)

        stack, _ = train_lgt(tiny_dataset, lgt_cfg(), on_stage_end=on_end)
        for i, layer in enumerate(stack.conv_layers()):
            w0, scaling, a, b = last[i]
            expected = w0 if a is None else w0 + np.asarray(scaling * (a @ b), w0.dtype)
            assert np.array_equal(layer.W.data, expected)

    def test_restore_best_exact_when_caches_off(self, tiny_dataset):
        # dropout > 0 forces the per-layer forward, whose op order matches
        # evaluate() exactly, so the restored weights reproduce best_val_acc
        cfg = lgt_cfg(dropout_p=0.3)
        stack, report = train_lgt(tiny_dataset, cfg)
        assert evaluate(stack, tiny_dataset, tiny_dataset.splits.val) == \
            report.stages[-1].best_val_acc
        assert evaluate(stack, tiny_dataset, tiny_dataset.splits.test) == report.test_acc

    def test_deterministic_given_seed(self, tiny_dataset):
        runs = [train_lgt(tiny_dataset, lgt_cfg(seed=7)) for _ in range(2)]
        (s1, r1), (s2, r2) = runs
        assert r1.test_acc == r2.test_acc
        for a, b in zip(s1.parameters(), s2.parameters()):
            assert np.array_equal(a.data, b.data)
        for st1, st2 in zip(r1.stages, r2.stages):
            assert st1.train_loss == st2.train_loss

    def test_depth1_matches_standard_bitwise(self, tiny_dataset):
        kw = dict(depth=1, dropout_p=0.0, max_epochs=30, patience=10, seed=2)
        s_std, r_std = train_standard(tiny_dataset, make_cfg(**kw), "gcn")
        s_lgt, r_lgt = train_lgt(tiny_dataset, make_cfg(**kw), "gcn")
        assert r_std.test_acc == r_lgt.test_acc
        assert r_std.stages[0].train_loss == r_lgt.stages[0].train_loss
        for a, b in zip(s_std.parameters(), s_lgt.parameters()):
            assert np.array_equal(a.data, b.data)

    def test_glorot_new_layers_supported(self, tiny_dataset):
        stack, report = train_lgt(tiny_dataset, lgt_cfg(new_layer_init="glorot",
                                                        max_epochs=3, patience=3))
        assert stack.depth == 3 and np.isfinite(report.test_acc)

    def test_rejects_sgc(self, tiny_dataset):
        with pytest.raises(ValueError, match="staged training"):
            train_lgt(tiny_dataset, lgt_cfg(), variant="sgc")


class TestStageCaches:
    def _lora_stack(self, f, d, c, rng, zero_b):
        inp = GcnLayer(Tensor(glorot_init(f, d, rng, np.float64)), mode=LayerMode.FROZEN)
        mid = GcnLayer(Tensor(glorot_init(d, d, rng, np.float64)), mode=LayerMode.FROZEN)
        mid.attach_adapter(make_adapter(d, d, 2, None, rng, np.float64))
        if not zero_b:
            mid.adapter.B.data = rng.standard_normal((2, d)) * 0.1
        new = GcnLayer(Tensor(ly.identity_init(d, np.float64), requires_grad=True))
        head = Tensor(glorot_init(d, c, rng, np.float64), requires_grad=True)
        return LayerStack(input_layer=inp, hidden_layers=[mid, new], head=head,
                          row_normalize=False).check()

    def test_bitwise_equal_when_adapter_is_zero(self, tiny_dataset):
        rng = np.random.default_rng(0)
        stack = self._lora_stack(tiny_dataset.f, 6, tiny_dataset.C, rng, zero_b=True)
        L = normalized_laplacian(tiny_dataset.adjacency)
        Xp = ly.prepare_features(stack, tiny_dataset.X)
        caches = _stage_caches(stack, L, Xp)
        assert caches["start"] == 2 and caches["split"]["layer"] == 1
        fast = _stage_forward(stack, L, caches, False, None).data
        plain = ly.stack_forward(stack, L, Xp, prepared=True).data
        assert np.array_equal(fast, plain)

    def test_close_when_adapter_nonzero(self, tiny_dataset):
        rng = np.random.default_rng(1)
        stack = self._lora_stack(tiny_dataset.f, 6, tiny_dataset.C, rng, zero_b=False)
        L = normalized_laplacian(tiny_dataset.adjacency)
        Xp = ly.prepare_features(stack, tiny_dataset.X)
        caches = _stage_caches(stack, L, Xp)
        fast = _stage_forward(stack, L, caches, False, None).data
        plain = ly.stack_forward(stack, L, Xp, prepared=True).data
        assert np.allclose(fast, plain, rtol=1e-9, atol=1e-12)

    def test_dropout_disables_caches(self, tiny_dataset):
        rng = np.random.default_rng(2)
        stack = self._lora_stack(tiny_dataset.f, 6, tiny_dataset.C, rng, zero_b=False)
        stack.dropout_p = 0.4
        L = normalized_laplacian(tiny_dataset.adjacency)
        Xp = ly.prepare_features(stack, tiny_dataset.X)
        caches = _stage_caches(stack, L, Xp)
        assert caches["start"] == 0 and caches["split"] is None


class TestReportSerialization:
    def test_json_roundtrip(self, tiny_dataset):
        _, report = train_standard(tiny_dataset, make_cfg(depth=2, max_epochs=4,
                                                          patience=4), "gcn")
        back = TrainReport.from_json(report.to_json())
        assert back.to_dict() == report.to_dict()
        assert back.total_epochs == report.total_epochs

    def test_dispatcher(self, tiny_dataset):
        cfg = make_cfg(depth=1, max_epochs=2, patience=2)
        _, r1 = train(tiny_dataset, cfg, trainer="standard", variant="gcn")
        assert len(r1.stages) == 1
        _, r2 = train(tiny_dataset, cfg, trainer="lgt", variant="gcn")
        assert len(r2.stages) == 1
        with pytest.raises(ValueError, match="trainer"):
            train(tiny_dataset, cfg, trainer="sgd")
