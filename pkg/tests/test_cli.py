import json

import numpy as np
import pytest

from blackout.cli import main, read_config_file
from blackout.corpus import load_vocab


@pytest.fixture()
def corpus_files(tmp_path):
    rng = np.random.default_rng(0)
    def write(path, n):
        lines = []
        for _ in range(n):
            length = int(rng.integers(1, 6))
            lines.append(" ".join(f"w{int(i)}" for i in rng.integers(0, 20, length)))
        path.write_text("\n".join(lines) + "\n")
    train = tmp_path / "train.txt"
    valid = tmp_path / "valid.txt"
    write(train, 150)
    write(valid, 40)
    return train, valid


def test_vocab_subcommand(tmp_path, corpus_files, capsys):
    train, _ = corpus_files
    out = tmp_path / "vocab.tsv"
    assert main(["vocab", "--corpus", str(train), "--out", str(out)]) == 0
    vocab = load_vocab(out)
    assert vocab.words[:3] == ("<s>", "</s>", "<unk>")
    assert "entries" in capsys.readouterr().out


def test_vocab_max_size(tmp_path, corpus_files):
    train, _ = corpus_files
    out = tmp_path / "vocab.tsv"
    main(["vocab", "--corpus", str(train), "--out", str(out), "--max-size", "10"])
    assert load_vocab(out).size == 10


def test_train_eval_score_pipeline(tmp_path, corpus_files, capsys):
    train, valid = corpus_files
    run_dir = tmp_path / "run"
    rc = main([
        "train", "--train", str(train), "--valid", str(valid),
        "--out", str(run_dir), "--head", "blackout", "--num-samples", "4",
        "--epochs", "1", "--batch-size", "4", "--bptt-len", "4",
        "--hidden-size", "5", "--seed", "3",
    ])
    assert rc == 0
    assert (run_dir / "metrics.jsonl").exists()
    assert (run_dir / "config.echo").exists()
    assert (run_dir / "vocab.tsv").exists()
    capsys.readouterr()

    rc = main([
        "eval", "--checkpoint", str(run_dir / "best.ckpt"),
        "--vocab", str(run_dir / "vocab.tsv"), "--corpus", str(valid),
    ])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["perplexity"] > 1.0
    assert report["token_count"] > 0

    rc = main([
        "score", "--checkpoint", str(run_dir / "best.ckpt"),
        "--vocab", str(run_dir / "vocab.tsv"), "--corpus", str(valid),
    ])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 40
    assert all(float(x) < 0 for x in lines)


def test_config_file_with_flag_override(tmp_path, corpus_files):
    train, valid = corpus_files
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text(
        "# comment line\n"
        "head=nce\n"
        "num_samples=3\n"
        "epochs=2\n"
        "batch_size=4\n"
        "bptt_len=4\n"
        "hidden_size=4\n"
        "lr_halving=false\n"
    )
    parsed = read_config_file(cfg_file)
    assert parsed["head"] == "nce" and parsed["lr_halving"] is False

    run_dir = tmp_path / "run"
    main([
        "train", "--train", str(train), "--valid", str(valid),
        "--out", str(run_dir), "--config", str(cfg_file), "--epochs", "1",
    ])
    echo = dict(
        line.split("=", 1)
        for line in (run_dir / "config.echo").read_text().splitlines()
    )
    assert echo["head"] == "nce"
    assert echo["epochs"] == "1"  # explicit flag beats the file
    assert echo["num_samples"] == "3"


def test_config_file_rejects_unknown_keys(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_field=1\n")
    with pytest.raises(ValueError, match="unknown config key"):
        read_config_file(bad)


def test_lab_subcommand_writes_json(tmp_path, capsys):
    out = tmp_path / "lab.json"
    rc = main(["lab", "--draws", "5000", "--out", str(out)])
    assert rc == 0
    report = json.loads(out.read_text())
    assert all(entry["passed"] for entry in report["noise_theorem"])


def test_resume_from_cli(tmp_path, corpus_files):
    train, valid = corpus_files
    first = tmp_path / "first"
    main([
        "train", "--train", str(train), "--valid", str(valid),
        "--out", str(first), "--epochs", "1", "--batch-size", "4",
        "--bptt-len", "4", "--hidden-size", "4",
    ])
    second = tmp_path / "second"
    rc = main([
        "train", "--train", str(train), "--valid", str(valid),
        "--out", str(second), "--epochs", "2", "--batch-size", "4",
        "--bptt-len", "4", "--hidden-size", "4",
        "--resume", str(first / "final.ckpt"),
    ])
    assert rc == 0
    records = [
        json.loads(line)
        for line in (second / "metrics.jsonl").read_text().strip().splitlines()
    ]
    assert records[-1]["epoch"] == 2
