import csv
import json

import pytest

from tagprompt.checkpoint import read_manifest
from tagprompt.errors import ConfigError
from tagprompt.cli import (
    OUT_DIR_ENV,
    REPORT_FILE,
    RUN_MANIFEST_FILE,
    SENSITIVITY_HEADER,
    SWEEP_HEADER,
    comma_ints,
    execute,
    synthetic_spec,
)

SPEC = {"classes": 5, "nodes_per_class": 24, "vocab_size": 60, "tokens_per_text": 10}
CONFIG = {
    "lr": 0.001, "epochs": 1, "batch_size": 16, "bank_capacity": 64, "alpha": 0.5,
    "neg_prompt_length": 4, "hidden_dim": 16, "embed_dim": 16, "token_dim": 16,
    "heads": 2, "transformer_layers": 1, "max_seq_len": 32, "min_freq": 1,
    "prompt_steps": 3, "query_per_class": 5,
}  # fmt: skip


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def config_path(workdir):
    path = workdir / "config.json"
    path.write_text(json.dumps(CONFIG), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def data_dir(workdir):
    spec = workdir / "spec.json"
    spec.write_text(json.dumps(SPEC), encoding="utf-8")
    out = workdir / "data"
    assert execute(["gen-synthetic", "--spec", str(spec), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def ckpt_dir(workdir, data_dir, config_path):
    out = workdir / "ckpt"
    argv = ["pretrain", "--data", str(data_dir), "--config", str(config_path), "--out", str(out)]
    assert execute(argv) == 0
    return out


def test_pretrain_writes_checkpoint_and_run_manifest(ckpt_dir, config_path):
    run = json.loads((ckpt_dir / RUN_MANIFEST_FILE).read_text(encoding="utf-8"))
    assert run["command"] == "pretrain"
    assert run["config_path"] == str(config_path)
    assert run["config"]["alpha"] == 0.5
    assert read_manifest(ckpt_dir)["step"] == 8


def test_pretrain_is_reproducible(ckpt_dir, data_dir, config_path, tmp_path):
    out = tmp_path / "again"
    argv = ["pretrain", "--data", str(data_dir), "--config", str(config_path), "--out", str(out)]
    assert execute(argv) == 0
    assert read_manifest(out)["params_digest"] == read_manifest(ckpt_dir)["params_digest"]


def test_eval_fewshot_end_to_end(ckpt_dir, data_dir, tmp_path, capsys):
    out = tmp_path / "fewshot"
    argv = [
        "eval-fewshot", "--ckpt", str(ckpt_dir), "--data", str(data_dir),
        "--way", "5", "--shot", "3", "--runs", "5", "--predictions", "--out", str(out),
    ]  # fmt: skip
    assert execute(argv) == 0
    report = json.loads((out / REPORT_FILE).read_text(encoding="utf-8"))
    assert len(report["runs"]) == 5
    assert report["mode"] == "few-shot"
    assert 0.0 <= report["mean"]["accuracy"] <= 1.0
    assert json.loads(capsys.readouterr().out.splitlines()[-1]) == report
    assert len((out / "predictions.jsonl").read_text(encoding="utf-8").splitlines()) == 5 * 5 * 5


def test_eval_zeroshot_probability_average(ckpt_dir, data_dir, tmp_path):
    out = tmp_path / "zeroshot"
    argv = [
        "eval-zeroshot", "--ckpt", str(ckpt_dir), "--data", str(data_dir),
        "--way", "3", "--runs", "2", "--prob-average", "--out", str(out),
    ]  # fmt: skip
    assert execute(argv) == 0
    report = json.loads((out / REPORT_FILE).read_text(encoding="utf-8"))
    assert report["probability_average"] is True
    assert report["shot"] == 0


def test_zero_shot_through_fewshot_is_a_usage_error(ckpt_dir, data_dir, tmp_path, capsys):
    argv = [
        "eval-fewshot", "--ckpt", str(ckpt_dir), "--data", str(data_dir),
        "--shot", "0", "--out", str(tmp_path / "x"),
    ]  # fmt: skip
    assert execute(argv) == 2
    err = capsys.readouterr().err
    assert len(err.splitlines()) == 1
    assert "eval-zeroshot" in err


def test_usage_errors(capsys):
    assert execute(["pretrain"]) == 2
    assert execute(["no-such-command"]) == 2
    assert execute(["sweep", "--data", "d", "--ways", "2,x"]) == 2
    lines = capsys.readouterr().err.splitlines()
    assert len(lines) == 3
    assert all(line.startswith("tagprompt: error: UsageError:") for line in lines)


def test_unknown_config_key(data_dir, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"learning_rate": 0.1}), encoding="utf-8")
    argv = ["pretrain", "--data", str(data_dir), "--config", str(bad), "--out", str(tmp_path / "o")]
    assert execute(argv) == 2
    assert "ConfigError: unknown config key 'learning_rate'" in capsys.readouterr().err


def test_missing_dataset(tmp_path, config_path, capsys):
    argv = [
        "pretrain", "--data", str(tmp_path / "absent"), "--config", str(config_path),
        "--out", str(tmp_path / "o"),
    ]  # fmt: skip
    assert execute(argv) == 1
    assert "error: DatasetError" in capsys.readouterr().err


def test_existing_output_needs_force(ckpt_dir, tmp_path):
    out = tmp_path / "stats"
    argv = ["bank-stats", "--ckpt", str(ckpt_dir), "--out", str(out)]
    assert execute(argv) == 0
    assert execute(argv) == 2
    assert execute([*argv, "--force"]) == 0
    stats = json.loads((out / "bank_stats.json").read_text(encoding="utf-8"))
    assert stats["size"] == 64


def test_output_root_from_environment(ckpt_dir, tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path / "runs"))
    assert execute(["bank-stats", "--ckpt", str(ckpt_dir)]) == 0
    (run,) = (tmp_path / "runs").iterdir()
    assert run.name.startswith("bank-stats-")
    assert (run / RUN_MANIFEST_FILE).is_file()


def test_probability_average_needs_negative_training(data_dir, config_path, tmp_path, capsys):
    ckpt = tmp_path / "alpha0"
    argv = [
        "pretrain", "--data", str(data_dir), "--config", str(config_path),
        "--alpha", "0", "--out", str(ckpt),
    ]  # fmt: skip
    assert execute(argv) == 0
    argv = [
        "eval-zeroshot", "--ckpt", str(ckpt), "--data", str(data_dir),
        "--prob-average", "--out", str(tmp_path / "eval"),
    ]  # fmt: skip
    assert execute(argv) == 1
    assert "CheckpointError" in capsys.readouterr().err


def test_grad_check(tmp_path):
    out = tmp_path / "grad"
    assert execute(["grad-check", "--alpha", "0.5", "--out", str(out)]) == 0
    report = json.loads((out / "grad_check.json").read_text(encoding="utf-8"))
    assert report["passed"] is True


def test_sweep_writes_csv(data_dir, config_path, tmp_path):
    out = tmp_path / "sweep"
    argv = [
        "sweep", "--data", str(data_dir), "--config", str(config_path),
        "--ways", "2,3", "--shots", "0,1", "--runs", "1", "--out", str(out),
    ]  # fmt: skip
    assert execute(argv) == 0
    with (out / "sweep.csv").open(encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert rows[0] == SWEEP_HEADER
    assert [row[:2] for row in rows[1:]] == [["2", "0"], ["2", "1"], ["3", "0"], ["3", "1"]]


def test_sensitivity_sweep(data_dir, config_path, tmp_path):
    out = tmp_path / "sensitivity"
    argv = [
        "sweep", "--data", str(data_dir), "--config", str(config_path),
        "--ways", "2", "--shots", "1", "--runs", "1", "--top-k", "1,2",
        "--bank-capacity", "32", "--out", str(out),
    ]  # fmt: skip
    assert execute(argv) == 0
    with (out / "sensitivity.csv").open(encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert rows[0] == SENSITIVITY_HEADER
    assert [row[:2] for row in rows[1:]] == [["1", "32"], ["2", "32"]]


def test_comma_ints():
    assert comma_ints("1,3, 5") == [1, 3, 5]


@pytest.mark.parametrize(
    "values, message",
    [
        ({"classes": "5"}, "generator key classes expects int, got str"),
        ({"nodes_per_class": 2.5}, "generator key nodes_per_class expects int"),
        ({"classes": True}, "generator key classes expects int, got bool"),
        ({"p_intra": 1.5}, "p_intra=1.5 outside"),
        ({"vocab_size": 2, "classes": 5}, "vocab_size=2"),
    ],
)
def test_bad_generator_spec_is_a_config_error(values, message, tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(values), encoding="utf-8")
    out = tmp_path / "data"
    assert execute(["gen-synthetic", "--spec", str(spec), "--out", str(out)]) == 2
    err = capsys.readouterr().err
    assert len(err.splitlines()) == 1
    assert err.startswith("tagprompt: error: ConfigError:")
    assert message in err
    assert not out.exists()


def test_synthetic_spec_values():
    spec = synthetic_spec({"classes": 3, "p_intra": 1})
    assert (spec.classes, spec.p_intra) == (3, 1.0)
    assert isinstance(spec.p_intra, float)
    with pytest.raises(ConfigError) as err:
        synthetic_spec({"sizes": 3})
    assert err.value.field == "sizes"
