"""Run directories, records, prediction dumps and checkpoints"""
import numpy as np
import pytest

from src.database import RunStore, load_checkpoint, save_checkpoint
from src.database.models import EpochRecord, RunRecord, Verdict
from src.exceptions import InputError


def sample_record():
    record = RunRecord("tiny-seed3", 3, 2, has_noise=True)
    record.append(EpochRecord(epoch=0, val_acc={"baseline": 0.3}))
    record.append(EpochRecord(epoch=1, lr=0.05, steps=6, train_loss=1.1,
                              val_acc={"baseline": 0.5, "ema_0.9": 0.55},
                              val_loss={"baseline": 1.0, "ema_0.9": 0.9}))
    record.verdicts["best_val_acc"] = Verdict("best_val_acc", 1, 0.9, 0.55)
    return record


class TestRecords:

    def test_round_trip(self, tmp_path):
        store = RunStore(str(tmp_path), "exp")
        store.save_record(3, sample_record())
        loaded = store.load_record(3)
        assert loaded.run_id == "tiny-seed3"
        assert loaded.has_noise
        assert loaded.at_epoch(1).val_acc["ema_0.9"] == 0.55
        assert loaded.verdicts["best_val_acc"].model_key == "ema_0.9"

    def test_epochs_must_increase(self):
        record = sample_record()
        with pytest.raises(ValueError):
            record.append(EpochRecord(epoch=1))

    def test_list_seeds(self, tmp_path):
        store = RunStore(str(tmp_path), "exp")
        for seed in (10, 2):
            store.save_record(seed, sample_record())
        store.run_dir(7)
        assert store.list_seeds() == [2, 10]

    def test_missing_record(self, tmp_path):
        store = RunStore(str(tmp_path), "exp")
        store.run_dir(0)
        with pytest.raises(InputError):
            store.load_record(0)

    def test_open_missing_directory(self, tmp_path):
        with pytest.raises(InputError):
            RunStore.open(str(tmp_path / "nowhere"))

    def test_series_skips_absent_models(self):
        assert sample_record().series("val_acc", "ema_0.9") == [(1, 0.55)]


class TestPredictions:

    def test_exact_round_trip(self, tmp_path, rng):
        store = RunStore(str(tmp_path), "exp")
        logits = rng.standard_normal((12, 3))
        labels = rng.integers(0, 3, size=12)
        store.save_predictions(0, "val", "baseline", logits, labels)
        assert store.has_predictions(0, "val", "baseline")
        loaded_logits, loaded_labels = store.load_predictions(0, "val", "baseline")
        np.testing.assert_array_equal(loaded_logits, logits)
        np.testing.assert_array_equal(loaded_labels, labels)

    def test_missing_dump(self, tmp_path):
        with pytest.raises(InputError):
            RunStore(str(tmp_path), "exp").load_predictions(0, "test", "swa")


class TestCheckpoints:

    def test_round_trip(self, tmp_path, bn_network, rng):
        bn_network.forward(rng.standard_normal((8, 4)))
        path = save_checkpoint(tmp_path / "model", bn_network, {"decay": 0.9, "seed": 1})
        assert path.suffix == ".npz"
        network, metadata = load_checkpoint(path)
        assert metadata == {"decay": 0.9, "seed": 1}
        assert network.spec == bn_network.spec
        np.testing.assert_array_equal(network.params.values, bn_network.params.values)
        for a, b in zip(network.bn.layers, bn_network.bn.layers):
            np.testing.assert_array_equal(a.running_mean, b.running_mean)
            np.testing.assert_array_equal(a.running_var, b.running_var)
        x = rng.standard_normal((5, 4))
        np.testing.assert_array_equal(network.predict_logits(x), bn_network.predict_logits(x))

    def test_store_naming(self, tmp_path, bn_network):
        store = RunStore(str(tmp_path), "exp")
        store.save_checkpoint(1, "ema_acc_recomputed", bn_network)
        store.save_checkpoint(1, "baseline", bn_network)
        assert store.list_checkpoints(1) == ["baseline", "ema_acc_recomputed"]

    def test_wrong_version(self, tmp_path, bn_network):
        path = save_checkpoint(tmp_path / "model.npz", bn_network)
        with np.load(path) as archive:
            arrays = dict(archive)
        arrays["format_version"] = np.array(99)
        np.savez(path, **arrays)
        with pytest.raises(InputError, match="unsupported"):
            load_checkpoint(path)

    def test_garbage_file(self, tmp_path):
        path = tmp_path / "bad.npz"
        path.write_bytes(b"not an archive")
        with pytest.raises(InputError):
            load_checkpoint(path)


class TestTables:

    def test_none_written_empty(self, tmp_path):
        store = RunStore(str(tmp_path), "exp")
        path = store.write_table("t", ["a", "b"], [[1, None], [0.5, "x"]])
        assert path.parent.name == "report"
        assert path.read_text().splitlines() == ["a,b", "1,", "0.5,x"]
