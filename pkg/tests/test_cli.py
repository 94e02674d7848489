"""Command-line verbs run end to end on the smoke config"""
import csv

import pytest
from click.testing import CliRunner

from src import __version__
from src.main import main, parse_seeds
from src.exceptions import ConfigError


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def trained(runner, tmp_path):
    result = runner.invoke(main, ["train", "-c", "smoke", "-o", str(tmp_path)])
    assert result.exit_code == 0, result.output
    return tmp_path / "smoke"


class TestSeeds:

    def test_lists_and_repeats(self):
        assert parse_seeds(("0,1", "4")) == [0, 1, 4]

    def test_not_an_integer(self):
        with pytest.raises(ConfigError):
            parse_seeds(("one",))


class TestTrain:

    def test_writes_run_directories(self, trained):
        for seed in (0, 1):
            run = trained / f"seed_{seed}"
            assert (run / "record.jsonl").is_file()
            assert (run / "config.toml").is_file()
            assert (run / "ckpt_ema_acc_recomputed.npz").is_file()
            assert (run / "preds_val_baseline.csv").is_file()
        assert (trained / "emabench.log").is_file()

    def test_seed_option_and_decays(self, runner, tmp_path):
        result = runner.invoke(main, ["train", "-c", "smoke", "-o", str(tmp_path), "-s", "7",
                                      "--ema-decays", "0"])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "smoke" / "seed_7" / "ckpt_ema_loss.npz").is_file()
        assert not (tmp_path / "smoke" / "seed_0").exists()

    def test_final_fit(self, runner, tmp_path):
        result = runner.invoke(main, ["train", "-c", "smoke", "-o", str(tmp_path), "-s", "0",
                                      "--final-fit"])
        assert result.exit_code == 0, result.output
        names = [p.name for p in (tmp_path / "smoke" / "seed_0").glob("ckpt_final_*")]
        assert any(n.endswith("_recomputed.npz") for n in names)

    def test_diverged_run_exit_code(self, runner, tmp_path):
        result = runner.invoke(main, ["train", "-c", "smoke", "-o", str(tmp_path), "-s", "0",
                                      "--override", "schedule.lr=1e6",
                                      "--override", "training.divergence_norm=1e3"])
        assert result.exit_code == 4
        assert (tmp_path / "smoke" / "seed_0" / "record.jsonl").is_file()


class TestErrors:

    def test_config_error_exit_code(self, runner, tmp_path):
        result = runner.invoke(main, ["train", "-c", "smoke", "-o", str(tmp_path),
                                      "--override", "ema.decays=[0.99, 0.9]"])
        assert result.exit_code == 2
        assert "ema.decays" in result.output

    def test_unknown_config(self, runner, tmp_path):
        result = runner.invoke(main, ["train", "-c", "nope", "-o", str(tmp_path)])
        assert result.exit_code == 2

    def test_report_on_empty_directory(self, runner, tmp_path):
        result = runner.invoke(main, ["report", str(tmp_path)])
        assert result.exit_code == 3

    def test_version(self, runner):
        result = runner.invoke(main, ["--version"])
        assert __version__ in result.output


class TestReport:

    def test_tables(self, runner, trained):
        result = runner.invoke(main, ["report", str(trained)])
        assert result.exit_code == 0, result.output
        report = trained / "report"
        for name in ("summary", "models", "churn", "churn_summary", "decay_sensitivity",
                     "stopping", "curves", "period_equivalence"):
            assert (report / f"{name}.csv").is_file(), name
        summary = read_csv(report / "summary.csv")
        assert summary[0][:3] == ["seed", "baseline_acc", "baseline_loss"]
        assert [row[0] for row in summary[1:]] == ["0", "1", "mean", "std"]
        churn = read_csv(report / "churn.csv")
        assert len(churn) > 1
        assert (trained / "seed_0" / "preds_test_baseline.csv").is_file()

    def test_report_is_repeatable(self, runner, trained):
        runner.invoke(main, ["report", str(trained)])
        first = (trained / "report" / "models.csv").read_text()
        runner.invoke(main, ["report", str(trained)])
        assert (trained / "report" / "models.csv").read_text() == first

    def test_single_seed_churn_unavailable(self, runner, tmp_path):
        runner.invoke(main, ["train", "-c", "smoke", "-o", str(tmp_path), "-s", "3"])
        result = runner.invoke(main, ["report", str(tmp_path / "smoke")])
        assert result.exit_code == 0, result.output
        rows = read_csv(tmp_path / "smoke" / "report" / "churn_summary.csv")
        assert rows[1][0].startswith("unavailable")


class TestAblate:

    def test_bn_policy(self, runner, tmp_path):
        result = runner.invoke(main, ["ablate", "bn_policy", "-c", "smoke", "-o", str(tmp_path)])
        assert result.exit_code == 0, result.output
        rows = read_csv(tmp_path / "smoke" / "ablate_bn_policy" / "bn_policy.csv")
        # two seeds x two decays x three policies, then mean and std per (decay, policy)
        assert len(rows) == 1 + 2 * 2 * 3 + 2 * 3 * 2
        per_seed, summary = rows[1:13], rows[13:]
        assert [r[0] for r in summary] == ["mean", "std"] * 6
        best = [float(r[4]) for r in per_seed if r[1:3] == summary[0][1:3]]
        assert float(summary[0][4]) == pytest.approx(sum(best) / len(best))
        wins = read_csv(tmp_path / "smoke" / "ablate_bn_policy" / "bn_policy_wins.csv")
        assert [r[0] for r in wins[-4:]] == ["mean", "std", "mean", "std"]

    def test_constant_lr_without_noise(self, runner, tmp_path):
        result = runner.invoke(main, ["ablate", "constant_lr", "-c", "smoke", "-o", str(tmp_path)])
        assert result.exit_code == 2

    def test_constant_lr_with_noise(self, runner, tmp_path):
        result = runner.invoke(main, ["ablate", "constant_lr", "-c", "smoke", "-o", str(tmp_path),
                                      "-s", "0", "--override", "noise.rate=0.4"])
        assert result.exit_code == 0, result.output
        rows = read_csv(tmp_path / "smoke" / "ablate_constant_lr" / "constant_lr.csv")
        assert [r[0] for r in rows[1:]] == ["0", "mean", "std"]
        assert rows[2][8] == rows[1][8]

    def test_bootstrap(self, runner, tmp_path):
        result = runner.invoke(main, ["ablate", "bootstrap", "-c", "smoke", "-o", str(tmp_path),
                                      "-s", "0", "--override", "training.bootstrap_decay=0.9"])
        assert result.exit_code == 0, result.output

    def test_lr_sweep(self, runner, tmp_path):
        result = runner.invoke(main, ["ablate", "lr_sweep", "-c", "smoke", "-o", str(tmp_path), "-s", "0"])
        assert result.exit_code == 0, result.output
        rows = read_csv(tmp_path / "smoke" / "ablate_lr_sweep" / "lr_sweep.csv")
        assert len(rows) == 1 + 2 + 2 * 2
        assert [(r[0], r[1]) for r in rows[3:]] == [("0.02", "mean"), ("0.02", "std"),
                                                    ("0.05", "mean"), ("0.05", "std")]
        assert rows[3][2] == rows[1][2]
        assert float(rows[4][2]) == 0.0

    def test_unknown_kind(self, runner, tmp_path):
        result = runner.invoke(main, ["ablate", "dropout", "-c", "smoke", "-o", str(tmp_path)])
        assert result.exit_code == 2


class TestTransferAndChurn:

    def test_linear_eval(self, runner, trained, tmp_path):
        result = runner.invoke(main, ["linear-eval", "-c", "smoke", "-o", str(tmp_path)])
        assert result.exit_code == 0, result.output
        rows = read_csv(trained / "transfer" / "linear_eval.csv")
        assert len(rows) == 1 + 2 * 2

    def test_linear_eval_single_checkpoint(self, runner, trained, tmp_path):
        checkpoint = trained / "seed_0" / "ckpt_swa_recomputed.npz"
        result = runner.invoke(main, ["linear-eval", "-c", "smoke", "-o", str(tmp_path),
                                      "--checkpoint", str(checkpoint)])
        assert result.exit_code == 0, result.output

    def test_linear_eval_without_runs(self, runner, tmp_path):
        result = runner.invoke(main, ["linear-eval", "-c", "smoke", "-o", str(tmp_path)])
        assert result.exit_code == 3

    def test_churn(self, runner, tmp_path):
        result = runner.invoke(main, ["churn", "-c", "smoke", "-o", str(tmp_path)])
        assert result.exit_code == 0, result.output
        rows = read_csv(tmp_path / "smoke" / "churn" / "pairs.csv")
        assert len(rows) == 1 + 2


class TestAblationSummaries:

    def test_bootstrap_mean_and_std_rows(self, runner, tmp_path):
        result = runner.invoke(main, ["ablate", "bootstrap", "-c", "smoke", "-o", str(tmp_path),
                                      "-s", "0,1", "--override", "training.bootstrap_decay=0.9"])
        assert result.exit_code == 0, result.output
        rows = read_csv(tmp_path / "smoke" / "ablate_bootstrap" / "bootstrap.csv")
        assert [r[0] for r in rows[1:]] == ["0", "1", "mean", "std"]
        for column in range(1, 5):
            values = [float(rows[1][column]), float(rows[2][column])]
            assert float(rows[3][column]) == pytest.approx(sum(values) / 2)
            assert float(rows[4][column]) == pytest.approx(abs(values[0] - values[1]) / 2)


class TestOutputPath:

    def test_quote_in_output_directory(self, runner, tmp_path):
        out = tmp_path / "it's here"
        result = runner.invoke(main, ["train", "-c", "smoke", "-o", str(out), "-s", "0"])
        assert result.exit_code == 0, result.output
        assert (out / "smoke" / "seed_0" / "record.jsonl").is_file()
