import subprocess
import sys

import pytest

from toys import toy_config
from rlmolgan.cli import REPORT_COLUMNS, dispatch
from rlmolgan.config import dump_config, load_config
from rlmolgan.trainer import read_metrics


@pytest.fixture
def config_file(toy_corpus_path, tmp_path):
    cfg = toy_config(toy_corpus_path, f_epochs=1, d_epochs=1, epochs=2, n_samples=64, K=2, batch_size=16)
    path = tmp_path / "toy.cfg"
    path.write_text(dump_config(cfg), encoding="utf-8")
    return path


def test_no_arguments_prints_usage(capsys):
    assert dispatch([]) == 2
    assert "usage" in capsys.readouterr().err


def test_console_script_without_arguments():
    proc = subprocess.run([sys.executable, "-m", "rlmolgan"], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "usage" in proc.stderr


def test_unknown_subcommand_exits_2():
    assert dispatch(["frobnicate"]) == 2


def test_bad_config_reports_line(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("seed = 1\n\nnot_a_key = 3\n", encoding="utf-8")
    assert dispatch(["train", "--config", str(bad), "--run-dir", str(tmp_path / "run")]) == 2
    assert "line 3" in capsys.readouterr().err


def test_bad_override_exits_2(tmp_path):
    assert dispatch(["train", "--set", "epochs=zero", "--run-dir", str(tmp_path)]) == 2


def test_runtime_error_exits_1(config_file, tmp_path):
    code = dispatch(["sample", "--config", str(config_file), "--run-dir", str(tmp_path / "run"),
                     "--checkpoint", str(tmp_path / "missing.ckpt")])
    assert code == 1


def test_pretrain_disc_needs_generator(config_file, tmp_path):
    assert dispatch(["pretrain-disc", "--config", str(config_file), "--run-dir", str(tmp_path / "run")]) == 1


def test_config_resolved_round_trips(config_file, tmp_path):
    run = tmp_path / "run"
    assert dispatch(["preprocess", "--config", str(config_file), "--run-dir", str(run), "--seed", "7"]) == 0
    resolved = load_config(run / "config.resolved")
    assert resolved.seed == 7
    assert resolved.run_dir == str(run)
    assert dump_config(resolved) == (run / "config.resolved").read_text(encoding="utf-8")


def test_run_dir_from_environment(config_file, tmp_path, monkeypatch):
    monkeypatch.setenv("RLMG_RUN_DIR", str(tmp_path / "env_run"))
    assert dispatch(["preprocess", "--config", str(config_file)]) == 0
    assert (tmp_path / "env_run" / "dataset.tsv").exists()
    assert (tmp_path / "env_run" / "vocab.txt").exists()


def test_dump_positions(config_file, tmp_path):
    out = tmp_path / "pos.tsv"
    assert dispatch(["preprocess", "--config", str(config_file), "--run-dir", str(tmp_path / "run"),
                     "--set", "task=scaffold", "--dump-positions", str(out)]) == 0
    rows = [ln.split("\t") for ln in out.read_text(encoding="utf-8").splitlines()]
    assert rows[0] == ["entry", "token", "S", "O", "pos"]
    by_entry = {}
    for entry, _, _, _, pos in rows[1:]:
        by_entry.setdefault(entry, []).append(int(pos))
    assert all(len(set(p)) == len(p) for p in by_entry.values())


def test_score_subcommand(config_file, tmp_path, capsys):
    smiles = tmp_path / "in.smi"
    smiles.write_text("CCO\nC1CC\n", encoding="utf-8")
    assert dispatch(["score", str(smiles), "--config", str(config_file), "--run-dir", str(tmp_path / "run")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [ln.split("\t")[0] for ln in lines] == ["CCO", "C1CC"]
    assert float(lines[0].split("\t")[2]) == 1.0
    assert float(lines[1].split("\t")[2]) == 0.0


def test_train_sample_report(config_file, tmp_path, capsys):
    run = tmp_path / "run"
    common = ["--config", str(config_file), "--run-dir", str(run)]
    assert dispatch(["train", *common]) == 0
    capsys.readouterr()

    assert dispatch(["sample", "--n", "10", *common]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 10

    last = read_metrics(run / "metrics.tsv")[-1]
    samples = run / "samples" / f"epoch_{last['epoch']}.smi"
    assert dispatch(["report", "--samples", str(samples), "--training", str(run / "dataset.tsv"), *common]) == 0
    header, values = (run / "report.tsv").read_text(encoding="utf-8").splitlines()
    assert header.split("\t") == list(REPORT_COLUMNS)
    for column, value in zip(REPORT_COLUMNS, values.split("\t")):
        assert float(value) == pytest.approx(float(last[column]), abs=1e-6)
    text = (run / "report.txt").read_text(encoding="utf-8")
    assert "bin_lo\tbin_hi\toriginal\tgenerated" in text


def test_stagewise_commands_match_train(config_file, tmp_path):
    whole, staged = tmp_path / "whole", tmp_path / "staged"
    assert dispatch(["train", "--config", str(config_file), "--run-dir", str(whole)]) == 0
    for cmd in ("pretrain-gen", "pretrain-disc", "train"):
        assert dispatch([cmd, "--config", str(config_file), "--run-dir", str(staged)]) == 0
    assert (whole / "metrics.tsv").read_bytes() == (staged / "metrics.tsv").read_bytes()
