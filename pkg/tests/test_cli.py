import subprocess
import sys

from dipalab.cli import main
from dipalab.data import read_split


def test_run_and_report(tiny_config, tmp_path):
    out = tmp_path / "out"
    assert main(["--quiet", "run", "--config", str(tiny_config), "--out", str(out)]) == 0
    assert (out / "results.csv").exists() and (out / "aggregate.csv").exists()
    assert (out / "config.toml").read_text() == tiny_config.read_text()
    fig = tmp_path / "fig"
    assert main(["report", "--in", str(out), "--out", str(fig), "--quiet"]) == 0
    assert {p.name for p in fig.iterdir()} == {"aggregate.csv", "accuracy.svg", "kappa.svg", "macro_f1.svg"}
    assert (fig / "aggregate.csv").read_bytes() == (out / "aggregate.csv").read_bytes()


def test_generate_then_run_from_files(tiny_config, tmp_path):
    data = tmp_path / "data"
    assert main(["--quiet", "generate", "--config", str(tiny_config), "--out", str(data)]) == 0
    split = read_split(data)
    assert len(split.test_only) == 1
    cfg = tmp_path / "from_files.toml"
    cfg.write_text(tiny_config.read_text() + '[data]\ndir = "data"\n')
    assert main(["--quiet", "run", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["--quiet", "run", "--config", str(tiny_config), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "results.csv").read_text() == (tmp_path / "b" / "results.csv").read_text()


def test_seed_changes_data(tiny_config, tmp_path):
    main(["--quiet", "generate", "--config", str(tiny_config), "--out", str(tmp_path / "a")])
    main(["--quiet", "--seed", "5", "generate", "--config", str(tiny_config), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "train.txt").read_text() != (tmp_path / "b" / "train.txt").read_text()


def test_generate_pretrain_source(tmp_path):
    cfg = tmp_path / "p.toml"
    cfg.write_text(
        'schema = 1\n[experiment]\nregime = "pretrain-finetune"\n'
        "[generator]\nnum_classes = 3\nchannels = 2\ntotal_samples = 60\ntest_only_classes = 0\n"
        "[pretrain]\ntotal_samples = 40\n"
    )
    assert main(["--quiet", "generate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d" / "source" / "train.txt").exists()


def test_invalid_config_exit_code(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("schema = 1\n[train]\nlearning_rat = 0.1\n")
    assert main(["--quiet", "run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["--quiet", "run", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path / "o")]) == 2
    assert main(["--quiet", "generate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_failed_runs_exit_code(tiny_config, tmp_path, monkeypatch):
    from dipalab import experiment

    def boom(*args, **kwargs):
        raise RuntimeError("injected")

    monkeypatch.setattr(experiment, "train", boom)
    assert main(["--quiet", "run", "--config", str(tiny_config), "--out", str(tmp_path / "o")]) == 1


def test_report_bad_input(tmp_path):
    assert main(["--quiet", "report", "--in", str(tmp_path / "missing"), "--out", str(tmp_path / "f")]) == 2
    (tmp_path / "empty").mkdir()
    (tmp_path / "empty" / "results.csv").write_text("regime,loss,dipa,k,seed,accuracy,kappa,macro_f1,best_epoch,epochs_run\n")
    assert main(["--quiet", "report", "--in", str(tmp_path / "empty"), "--out", str(tmp_path / "f")]) == 2


def test_bad_workers(tiny_config, tmp_path):
    assert main(["--quiet", "run", "--config", str(tiny_config), "--out", str(tmp_path), "--workers", "0"]) == 2


def test_gradcheck_entry_point():
    proc = subprocess.run([sys.executable, "-m", "dipalab.cli", "gradcheck"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    lines = proc.stdout.strip().splitlines()
    assert len(lines) == 4 and all(l.endswith("ok") for l in lines)
