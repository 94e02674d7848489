"""Training driver: determinism, averaging side effects, verdicts, checkpoints"""
from dataclasses import replace

import numpy as np
import pytest

from src.core.averaging import BnPolicy
from src.database.models import BEST_VAL_ACC, LOWEST_VAL_LOSS
from src.harness.settings import EmaSpec, SwaSpec
from src.harness.trainer import (BASELINE, SWA, TrainingRun, final_fit, prepare_data, score,
                                 train_run)

from .conftest import make_run_config


class TestPrepareData:

    def test_split_sizes(self, tiny_config):
        data = prepare_data(tiny_config)
        assert len(data.test) == 60
        assert len(data.train) == 192
        assert len(data.val) == 48
        assert not data.noisy_mask.any()

    def test_same_data_for_every_seed(self, tiny_config):
        a, b = TrainingRun(tiny_config, 0), TrainingRun(tiny_config, 5)
        np.testing.assert_array_equal(a.data.train.features, b.data.train.features)

    def test_noise_only_in_pool(self, noisy_config, tiny_config):
        noisy, clean = prepare_data(noisy_config), prepare_data(tiny_config)
        np.testing.assert_array_equal(noisy.test.labels, clean.test.labels)
        flipped = noisy.train.labels != noisy.train_clean
        np.testing.assert_array_equal(flipped, noisy.noisy_mask)
        assert 0.3 < noisy.noisy_mask.mean() < 0.5

    def test_full_pool_split(self, tiny_config):
        data = prepare_data(tiny_config.with_split(1.0))
        assert len(data.train) == 240 and not data.has_val


class TestDeterminism:

    def test_identical_records(self, tiny_config):
        a = train_run(tiny_config, 3).record
        b = train_run(tiny_config, 3).record
        assert a.to_dicts() == b.to_dicts()

    def test_seeds_differ(self, tiny_config):
        a = train_run(tiny_config, 0).record
        b = train_run(tiny_config, 1).record
        assert a.series("train_acc", BASELINE) != b.series("train_acc", BASELINE)


class TestAveragingDoesNotInterfere:

    def test_baseline_bit_identical(self, tiny_config):
        with_avg = train_run(tiny_config, 2)
        without = train_run(tiny_config.with_averaging(False), 2)
        np.testing.assert_array_equal(with_avg.final.params.values, without.final.params.values)
        assert with_avg.record.series("val_acc", BASELINE) == without.record.series("val_acc", BASELINE)

    def test_zero_decay_tracks_baseline(self, tiny_config):
        config = replace(tiny_config, ema=EmaSpec(decays=(0.0,), period=1))
        record = train_run(config, 0).record
        for epoch in (1, 2, 4):
            entry = record.at_epoch(epoch)
            assert entry.val_acc["ema_0.0"] == entry.val_acc[BASELINE]
            assert entry.val_loss["ema_0.0"] == pytest.approx(entry.val_loss[BASELINE], abs=1e-12)


class TestRecord:

    def test_epochs_and_steps(self, tiny_config):
        record = train_run(tiny_config, 0).record
        assert [e.epoch for e in record] == [0, 1, 2, 3, 4]
        assert record.at_epoch(4).steps == 4 * 6
        assert record.at_epoch(0).lr == 0.0

    def test_every_model_tracked(self, tiny_config):
        last = train_run(tiny_config, 0).record.last
        assert set(last.val_acc) == {BASELINE, "ema_0.9", "ema_0.968", SWA}

    def test_swa_starts_late(self, tiny_config):
        record = train_run(tiny_config, 0).record
        assert SWA not in record.at_epoch(2).val_acc
        assert SWA in record.at_epoch(3).val_acc

    def test_verdicts(self, tiny_config):
        record = train_run(tiny_config, 0).record
        assert set(record.verdicts) == {BEST_VAL_ACC, LOWEST_VAL_LOSS}
        verdict = record.verdicts[BEST_VAL_ACC]
        assert verdict.epoch >= 1
        best = max(record.at_epoch(e).val_acc[k] for e in range(1, 5) for k in ("ema_0.9", "ema_0.968"))
        assert verdict.value == best
        loss = record.verdicts[LOWEST_VAL_LOSS]
        assert loss.value == record.at_epoch(loss.epoch).val_loss[loss.model_key]

    def test_recompute_each_epoch(self, tiny_config):
        config = replace(tiny_config, bn_policies=(BnPolicy.BATCH_EMA, BnPolicy.RECOMPUTE_EACH_EPOCH))
        record = train_run(config, 0).record
        assert "ema_0.9" in record.at_epoch(1).val_acc_recomputed
        assert not record.at_epoch(0).val_acc_recomputed

    def test_noise_metrics(self, noisy_config):
        last = train_run(noisy_config, 0).record.last
        assert BASELINE in last.train_acc_noisy
        assert BASELINE in last.val_acc_clean


class TestCheckpoints:

    def test_emitted_models(self, tiny_config):
        result = train_run(tiny_config, 0)
        assert set(result.checkpoints) == {
            BASELINE, "ema_acc", "ema_acc_recomputed", "ema_loss", "ema_loss_recomputed",
            SWA, "swa_recomputed",
        }
        _, meta = result.checkpoints["ema_acc"]
        verdict = result.record.verdicts[BEST_VAL_ACC]
        assert meta["decay"] == verdict.decay
        assert meta["epoch"] == verdict.epoch
        assert meta["bn_policy"] == "batch_ema"

    def test_verdict_checkpoint_scores_verdict_value(self, tiny_config):
        result = train_run(tiny_config, 0)
        network, _ = result.checkpoints["ema_acc"]
        accuracy, _ = score(network, result.data.val.features, result.data.val.labels)
        assert accuracy == pytest.approx(result.record.verdicts[BEST_VAL_ACC].value)

    def test_recomputed_differs_only_in_bn(self, tiny_config):
        result = train_run(tiny_config, 0)
        plain, _ = result.checkpoints["swa"]
        recomputed, meta = result.checkpoints["swa_recomputed"]
        np.testing.assert_array_equal(plain.params.values, recomputed.params.values)
        assert meta["bn_policy"] == "recompute_once_final"

    def test_no_bank_no_ema_checkpoints(self, tiny_config):
        result = train_run(tiny_config.with_averaging(False), 0)
        assert set(result.checkpoints) == {BASELINE}
        assert not result.record.verdicts


class TestBootstrap:

    def test_swap_each_epoch_but_last(self, tiny_config):
        config = replace(tiny_config, bootstrap=replace(tiny_config.bootstrap, enabled=True, decay=0.9))
        record = train_run(config, 0).record
        assert [e.bootstrapped for e in record] == [False, True, True, True, False]

    def test_changes_trajectory(self, tiny_config):
        config = replace(tiny_config, bootstrap=replace(tiny_config.bootstrap, enabled=True, decay=0.9))
        plain = train_run(tiny_config, 0).final.params.values
        swapped = train_run(config, 0).final.params.values
        assert not np.array_equal(plain, swapped)


class TestDivergence:

    def test_huge_lr_fails_cleanly(self, tiny_config):
        config = replace(tiny_config.with_lr(1e6), divergence_norm=1e3)
        result = train_run(config, 0)
        assert result.failed
        assert "epoch 1" in result.record.diagnostic
        assert not result.checkpoints
        assert [e.epoch for e in result.record] == [0]


class TestFinalFit:

    def test_snapshots_at_verdicts(self, tiny_config):
        base = train_run(tiny_config, 0)
        result = final_fit(tiny_config, 0, base.record.verdicts)
        assert not result.record.verdicts
        assert not result.data.has_val
        for verdict in base.record.verdicts.values():
            name = f"ema_{verdict.decay!r}_epoch{verdict.epoch}"
            assert name in result.checkpoints
            assert name + "_recomputed" in result.checkpoints


class TestWithoutBatchnorm:

    def test_plain_mlp_trains(self):
        config = make_run_config(swa=SwaSpec(enabled=False))
        config = replace(config, model=replace(config.model, use_batchnorm=(False,)))
        result = train_run(config, 0)
        assert not result.failed
        assert "ema_acc_recomputed" in result.checkpoints


class TestSparseEmaUpdates:
    """Two steps per epoch, so a long sampling period leaves early epochs without an EMA"""

    @pytest.mark.parametrize("policies", [
        (BnPolicy.BATCH_EMA, BnPolicy.RECOMPUTE_ONCE_FINAL),
        (BnPolicy.BATCH_EMA, BnPolicy.RECOMPUTE_EACH_EPOCH),
    ])
    def test_no_update_within_budget(self, policies):
        config = make_run_config(ema=EmaSpec((0.9, 0.968), period=16), batch_size=128,
                                 bn_policies=policies)
        result = train_run(config, 0)
        assert not result.failed
        assert not result.record.verdicts
        assert set(result.checkpoints) == {BASELINE, SWA, "swa_recomputed"}
        for entry in result.record:
            assert not [k for k in entry.val_acc if k.startswith("ema_")]

    def test_late_first_update(self):
        config = make_run_config(ema=EmaSpec((0.9, 0.968), period=5), batch_size=128,
                                 bn_policies=(BnPolicy.BATCH_EMA, BnPolicy.RECOMPUTE_EACH_EPOCH))
        result = train_run(config, 0)
        record = result.record
        assert "ema_0.9" not in record.at_epoch(2).val_acc
        assert "ema_0.9" not in record.at_epoch(2).val_acc_recomputed
        assert "ema_0.9" in record.at_epoch(3).val_acc
        assert record.verdicts[BEST_VAL_ACC].epoch >= 3
        assert "ema_acc_recomputed" in result.checkpoints

    def test_bootstrap_waits_for_first_update(self):
        config = make_run_config(ema=EmaSpec((0.9, 0.968), period=5), batch_size=128)
        config = replace(config, bootstrap=replace(config.bootstrap, enabled=True, decay=0.9))
        record = train_run(config, 0).record
        assert [e.bootstrapped for e in record] == [False, False, False, True, False]

    def test_capture_before_first_update_is_skipped(self):
        config = make_run_config(ema=EmaSpec((0.9,), period=5), batch_size=128).with_split(1.0)
        result = TrainingRun(config, 0, capture={1: [0.9], 4: [0.9]}).run()
        assert "ema_0.9_epoch4" in result.checkpoints
        assert "ema_0.9_epoch1" not in result.checkpoints


class TestEmaTiming:
    """One step per epoch and decay 0, so the EMA is exactly the absorbed iterate"""

    def one_step_run(self, after_step):
        config = make_run_config(ema=EmaSpec((0.0,), period=1, after_step=after_step),
                                 batch_size=192, swa=SwaSpec(enabled=False))
        return TrainingRun(config, 0)

    def test_after_step_absorbs_new_iterate(self):
        run = self.one_step_run(after_step=True)
        run._train_epoch(1)
        state = run.bank.state_for(0.0)
        assert state.count == 1
        np.testing.assert_array_equal(state.params.values, run.network.params.values)

    def test_before_step_absorbs_previous_iterate(self):
        run = self.one_step_run(after_step=False)
        initial = run.network.params.values.copy()
        run._train_epoch(1)
        state = run.bank.state_for(0.0)
        assert state.count == 1
        np.testing.assert_array_equal(state.params.values, initial)
        assert not np.array_equal(run.network.params.values, initial)

    def test_timing_does_not_touch_baseline(self):
        after = train_run(self.one_step_run(True).config, 0).final.params.values
        before = train_run(self.one_step_run(False).config, 0).final.params.values
        np.testing.assert_array_equal(after, before)
