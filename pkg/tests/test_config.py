"""Configuration loading, overrides and validation"""
import pytest
import toml

from src.core.averaging import BnPolicy
from src.exceptions import ConfigError
from src.utils.config import Config, parse_override


def write(tmp_path, data, name="exp.toml"):
    path = tmp_path / name
    path.write_text(toml.dumps(data))
    return str(path)


class TestLoading:

    def test_bundled_smoke(self):
        config = Config.from_name("smoke")
        config.validate()
        assert config.experiment.name == "smoke"

    def test_unknown_section(self, tmp_path):
        with pytest.raises(ConfigError, match="optimizer"):
            Config(write(tmp_path, {"optimizer": {"lr": 0.1}}))

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ConfigError) as info:
            Config(write(tmp_path, {"dataset": {"kind": "gaussian_blobs", "colour": 3}}))
        assert info.value.key == "dataset.colour"

    def test_type_mismatch(self, tmp_path):
        with pytest.raises(ConfigError) as info:
            Config(write(tmp_path, {"schedule": {"epochs": "ten"}}))
        assert info.value.key == "schedule.epochs"

    def test_missing_dataset_kind(self, tmp_path):
        config = Config(write(tmp_path, {"schedule": {"epochs": 3}}))
        with pytest.raises(ConfigError) as info:
            config.validate()
        assert info.value.key == "dataset.kind"

    def test_unknown_name(self):
        with pytest.raises(ConfigError):
            Config.from_name("no_such_config")

    def test_malformed_toml(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text("[dataset\nkind = ")
        with pytest.raises(ConfigError):
            Config(str(path))


class TestOverrides:

    def test_parse_literal(self):
        assert parse_override("ema.decays=[0.9, 0.99]") == ("ema", "decays", [0.9, 0.99])

    def test_parse_bare_string(self):
        assert parse_override("dataset.kind=concentric_rings") == ("dataset", "kind", "concentric_rings")

    def test_malformed(self):
        with pytest.raises(ConfigError):
            parse_override("schedule.lr")
        with pytest.raises(ConfigError):
            parse_override("lr=0.1")

    def test_applied_after_file(self, smoke_config_path):
        config = Config(smoke_config_path, ["schedule.lr=0.2", "experiment.seeds=[5]"])
        assert config.get("schedule", "lr") == 0.2
        assert config.experiment.seeds == [5]

    def test_int_accepted_for_float(self):
        config = Config(None, ["schedule.lr=1"])
        assert config.get("schedule", "lr") == 1.0

    @pytest.mark.parametrize("override, key", [
        ("schedule.milestones=['ten']", "schedule.milestones"),
        ("schedule.milestones=[[1, 2]]", "schedule.milestones"),
        ("model.batchnorm_layers=[1, 0]", "model.batchnorm_layers"),
    ])
    def test_empty_default_lists_check_items(self, override, key):
        with pytest.raises(ConfigError) as info:
            Config(None, [override])
        assert info.value.key == key

    def test_empty_default_list_accepts_items(self):
        config = Config(None, ["schedule.milestones=[10, 20]"])
        assert config.get("schedule", "milestones") == [10, 20]


class TestValidation:

    def smoke(self, *overrides):
        return Config.from_name("smoke", overrides)

    @pytest.mark.parametrize("override, key", [
        ("ema.decays=[0.99, 0.9]", "ema.decays"),
        ("ema.decays=[1.0]", "ema.decays"),
        ("ema.decays=[]", "ema.decays"),
        ("schedule.warmup_epochs=10", "schedule.warmup_epochs"),
        ("training.split=0.0", "training.split"),
        ("noise.rate=1.5", "noise.rate"),
        ("model.hidden=[]", "model.hidden"),
        ("experiment.seeds=[1, 1]", "experiment.seeds"),
        ("bn.policies=['sometimes']", "bn.policies"),
        ("schedule.freeze_epoch=0", "schedule.freeze_epoch"),
        ("ece.n_bins=101", "ece.n_bins"),
    ])
    def test_rejects(self, override, key):
        with pytest.raises(ConfigError) as info:
            self.smoke(override).validate()
        assert info.value.key == key

    def test_bootstrap_decay_must_be_in_bank(self):
        config = self.smoke("training.bootstrap=true", "training.bootstrap_decay=0.5")
        with pytest.raises(ConfigError) as info:
            config.validate()
        assert info.value.key == "training.bootstrap_decay"

    def test_zero_decay_allowed(self):
        self.smoke("ema.decays=[0.0, 0.9]").validate()

    def test_threads_from_environment(self, monkeypatch):
        monkeypatch.setenv("EMABENCH_THREADS", "3")
        assert self.smoke().threads == 3

    def test_bad_threads_environment(self, monkeypatch):
        monkeypatch.setenv("EMABENCH_THREADS", "many")
        with pytest.raises(ConfigError):
            self.smoke().threads


class TestRunConfig:

    def test_shapes_follow_dataset(self):
        run = Config.from_name("smoke").to_run_config()
        assert run.model.layer_widths == (4, 16, 3)
        assert run.dataset.n_samples == 500
        assert run.n_test == 100
        assert run.noise is None

    def test_unset_sentinels(self):
        run = Config.from_name("smoke").to_run_config()
        assert run.schedule.freeze_epoch is None
        assert run.swa.start_epoch is None
        assert run.swa.resolved_start(4) == 3

    def test_noise_and_policies(self):
        run = Config.from_name("smoke", ["noise.rate=0.4",
                                         "bn.policies=['batch_ema', 'recompute_each_epoch']"]).to_run_config()
        assert run.has_noise
        assert run.recompute_each_epoch
        assert run.bn_policies == (BnPolicy.BATCH_EMA, BnPolicy.RECOMPUTE_EACH_EPOCH)

    def test_per_layer_batchnorm(self):
        run = Config.from_name("smoke", ["model.hidden=[8, 8]",
                                         "model.batchnorm_layers=[false, true]"]).to_run_config()
        assert run.model.use_batchnorm == (False, True)


class TestSave:

    def test_round_trip(self, tmp_path):
        config = Config.from_name("smoke", ["schedule.lr=0.07"])
        path = tmp_path / "saved" / "config.toml"
        config.save(str(path))
        reloaded = Config(str(path))
        assert reloaded.to_dict() == config.to_dict()


class TestEmaTiming:

    def test_after_step_reaches_run_config(self):
        run = Config.from_name("smoke", ["ema.after_step=false"]).to_run_config()
        assert run.ema.after_step is False

    def test_after_step_default(self):
        assert Config.from_name("smoke").to_run_config().ema.after_step is True
