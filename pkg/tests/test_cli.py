"""End-to-end command-line checks: exit codes, artifact layout, report
regeneration, and reproducibility of emitted bytes."""

import json

import numpy as np
import pytest

from advkit.cli import main
from advkit.pgm import write_pgm

from conftest import DATA_DIR, needs_mnist

pytestmark = needs_mnist


@pytest.fixture(scope="module")
def cli_model(tmp_path_factory):
    """A quickly trained model shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli-model")
    model_path = root / "tiny.advm"
    code = main(["train", "--arch", "mlp", "--epochs", "1", "--limit", "3000",
                 "--seed", "5", "--out", str(model_path),
                 "--data-dir", str(DATA_DIR), "--out-dir", str(root / "run"),
                 "--quiet"])
    assert code == 0
    return model_path


def test_usage_errors_exit_1(capsys):
    assert main(["train"]) == 1                      # missing --out
    assert main(["frobnicate"]) == 1                 # unknown subcommand
    assert main(["attack", "--model", "x", "--unknown-flag"]) == 1
    capsys.readouterr()


def test_train_epoch_zero_is_usage_error(tmp_path, capsys):
    code = main(["train", "--epochs", "0", "--out", str(tmp_path / "m.advm"),
                 "--data-dir", str(DATA_DIR), "--out-dir", str(tmp_path)])
    assert code == 1
    assert "epochs" in capsys.readouterr().err


def test_missing_data_dir_is_usage_error(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("ADVKIT_DATA_DIR", raising=False)
    code = main(["train", "--epochs", "1", "--out", str(tmp_path / "m.advm"),
                 "--out-dir", str(tmp_path)])
    assert code == 1
    capsys.readouterr()


def test_bad_model_file_is_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.advm"
    bad.write_bytes(b"garbage")
    code = main(["attack", "--model", str(bad), "--data-dir", str(DATA_DIR),
                 "--out-dir", str(tmp_path / "out")])
    assert code == 2
    capsys.readouterr()


def test_train_writes_model_and_manifest(cli_model, capsys):
    assert cli_model.exists()
    run = json.loads((cli_model.parent / "run" / "run.json").read_text())
    assert run["model_sha256"]
    assert "--seed" in run["argv"]
    capsys.readouterr()


def test_attack_campaign_artifacts(cli_model, tmp_path, capsys):
    out = tmp_path / "campaign"
    code = main(["attack", "--model", str(cli_model), "--kind", "fgsm",
                 "--theta", "0.2", "--slice", "1:40",
                 "--data-dir", str(DATA_DIR), "--out-dir", str(out),
                 "--jobs", "1", "--quiet"])
    assert code == 0
    for name in ("report.json", "matrix.csv", "outcomes.bin", "run.json",
                 "timings.json"):
        assert (out / name).exists(), name
    report = json.loads((out / "report.json").read_text())
    assert report["counts"]["records"] == 40
    assert list((out / "figures").glob("*.pgm"))
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["overall_sr"] == report["overall_sr"]


def test_report_regeneration_is_byte_identical(cli_model, tmp_path, capsys):
    out = tmp_path / "campaign"
    assert main(["attack", "--model", str(cli_model), "--kind", "ifgsm",
                 "--theta", "0.05", "--iters", "3", "--slice", "2:25",
                 "--data-dir", str(DATA_DIR), "--out-dir", str(out),
                 "--quiet"]) == 0
    regen = tmp_path / "regen"
    code = main(["report", "--campaign", str(out), "--data-dir", str(DATA_DIR),
                 "--out-dir", str(regen), "--quiet"])
    assert code == 0
    assert (regen / "report.json").read_bytes() == (out / "report.json").read_bytes()
    assert (regen / "matrix.csv").read_bytes() == (out / "matrix.csv").read_bytes()
    capsys.readouterr()


def test_identical_runs_reproduce_identical_bytes(cli_model, tmp_path, capsys):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["attack", "--model", str(cli_model), "--kind", "jsma",
                     "--mode", "targeted", "--target", "8", "--slice", "1:6",
                     "--data-dir", str(DATA_DIR), "--out-dir", str(out),
                     "--quiet"]) == 0
        outs.append(out)
    for name in ("report.json", "matrix.csv", "outcomes.bin"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
    capsys.readouterr()


def test_sweep_rejects_single_value(cli_model, tmp_path, capsys):
    code = main(["sweep", "--model", str(cli_model), "--axis", "theta",
                 "--values", "0.1", "--data-dir", str(DATA_DIR),
                 "--out-dir", str(tmp_path / "sweep"), "--quiet"])
    assert code == 1
    capsys.readouterr()


def test_theta_sweep_end_to_end(cli_model, tmp_path, capsys):
    out = tmp_path / "sweep"
    code = main(["sweep", "--model", str(cli_model), "--axis", "theta",
                 "--values", "0.05,0.2", "--slice", "3:30",
                 "--data-dir", str(DATA_DIR), "--out-dir", str(out), "--quiet"])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["runs"]) == 2
    assert (out / "value-0.05" / "report.json").exists()
    assert (out / "value-0.2" / "outcomes.bin").exists()
    capsys.readouterr()


def test_visualize_sign_map_and_triptych(cli_model, tmp_path, capsys):
    out = tmp_path / "viz"
    assert main(["visualize", "--model", str(cli_model), "--what", "sign-map",
                 "--input", "0", "--data-dir", str(DATA_DIR),
                 "--out-dir", str(out), "--quiet"]) == 0
    assert main(["visualize", "--model", str(cli_model), "--what", "saliency",
                 "--input", "0", "--target", "3", "--data-dir", str(DATA_DIR),
                 "--out-dir", str(out), "--quiet"]) == 0
    assert main(["visualize", "--model", str(cli_model), "--what", "triptych",
                 "--input", "0", "--kind", "fgsm", "--theta", "0.2",
                 "--data-dir", str(DATA_DIR), "--out-dir", str(out),
                 "--quiet"]) == 0
    pgms = list((out / "figures").glob("*.pgm"))
    assert len(pgms) >= 5  # sign map + saliency + three triptych panels
    header = pgms[0].read_bytes()[:13]
    assert header == b"P5\n28 28\n255\n"
    capsys.readouterr()


def test_mitigate_monitor_replay(tmp_path, capsys):
    for i in range(4):
        write_pgm(tmp_path / f"q{i}.pgm", np.full((28, 28), 0.5))
    replay = tmp_path / "replay.txt"
    replay.write_text("\n".join(f"bot,q{i}.pgm" for i in range(4)) + "\n")
    out = tmp_path / "monitor"
    code = main(["mitigate", "--defense", "monitor", "--replay", str(replay),
                 "--tau", "0.01", "--k", "3", "--data-dir", str(DATA_DIR),
                 "--out-dir", str(out), "--quiet"])
    assert code == 0
    doc = json.loads((out / "mitigation.json").read_text())
    assert doc["flagged_clients"] == ["bot"]
    capsys.readouterr()


def test_mitigate_requires_matching_flags(capsys):
    assert main(["mitigate", "--defense", "monitor"]) == 1
    assert main(["mitigate", "--defense", "consensus"]) == 1
    capsys.readouterr()
