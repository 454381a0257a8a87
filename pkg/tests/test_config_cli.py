import csv
from dataclasses import replace

import numpy as np
import pytest

from iiloss import experiments, numerics
from iiloss.cli import main
from iiloss.config import ConfigError, RunConfig, parse_config

TINY = """
[synth]
n_categories = 12
pairs_per_category = 5
latent_dim = 3
video_dim = 4
music_dim = 3
seq_len_min = 3
seq_len_max = 6
seed = 4

[data]
dir = {data}
test_pairs_per_category = 1

[video_encoder]
kind = mlp
output_dim = 4
hidden_dim = 8

[music_encoder]
kind = meanpool_linear
output_dim = 4

[train]
batch_n = 12
epochs = 2
gs_t = 3
lr = 0.01

[experiment]
out_dir = {out}
seeds = 1,2
noise_batch_n = 12
noise_test_pairs_per_category = 1
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY.format(data=tmp_path / "data", out=tmp_path / "out"))
    return path


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_defaults_parse_from_empty_text():
    assert parse_config("") == RunConfig()


def test_sections_and_aliases():
    cfg = parse_config("[train]\nadam_beta1 = 0.8\n[weights]\ngamma2 = 6\n[experiment]\nseeds = 4,5\n")
    assert cfg.train.beta1 == 0.8
    assert cfg.train.weights.gamma2 == 6.0
    assert cfg.experiment.seeds == (4, 5)


@pytest.mark.parametrize("text", [
    "[train]\nbogus = 1\n",
    "[nowhere]\nx = 1\n",
    "[train]\nbatch_n = many\n",
    "[train]\nsampler_mode = most_noise\nbatch_n = 10\n",
    "[video_encoder]\nkind = transformer\n",
])
def test_invalid_configs_raise(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_unknown_key_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nlearning_rate = 0.1\n")
    assert main(["train", "--config", str(bad)]) == 1
    assert "learning_rate" in capsys.readouterr().err


def test_gen_data_is_byte_identical_and_creates_dirs(tiny_cfg, tmp_path):
    a, b = tmp_path / "deep" / "a", tmp_path / "deep" / "b"
    assert main(["gen-data", "--config", str(tiny_cfg), "--out", str(a)]) == 0
    assert main(["gen-data", "--config", str(tiny_cfg), "--out", str(b)]) == 0
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) == 1 + 2 * 60
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes()
    assert not list(a.rglob("*.partial"))


def test_train_and_eval_roundtrip(tiny_cfg, tmp_path):
    out = tmp_path / "out"
    assert main(["gen-data", "--config", str(tiny_cfg)]) == 0
    assert main(["train", "--config", str(tiny_cfg), "--out", str(out)]) == 0
    metrics = rows(out / "metrics.csv")
    assert metrics[0] == ["epoch", "inter_loss", "intra_loss", "r1", "r10", "r25"]
    assert [r[0] for r in metrics[1:]] == ["0", "1"]
    assert main(["eval", "--config", str(tiny_cfg), "--out", str(out)]) == 0
    ev = rows(out / "eval.csv")
    assert [r[0] for r in ev[1:]] == ["pair", "category"]
    # the checkpoint reproduces the last-epoch pair-mode numbers
    assert ev[1][1:] == metrics[-1][3:]

    again = tmp_path / "again"
    main(["train", "--config", str(tiny_cfg), "--out", str(again)])
    assert (again / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()


def test_train_without_data_fails(tiny_cfg):
    assert main(["train", "--config", str(tiny_cfg)]) == 2


def test_corrupt_manifest_exits_nonzero(tiny_cfg, tmp_path):
    main(["gen-data", "--config", str(tiny_cfg)])
    manifest = tmp_path / "data" / "manifest.csv"
    manifest.write_text(manifest.read_text() + "999,0,missing_v.iit\n")
    assert main(["train", "--config", str(tiny_cfg)]) == 1


def test_truncated_tensor_exits_nonzero(tiny_cfg, tmp_path):
    main(["gen-data", "--config", str(tiny_cfg)])
    victim = sorted((tmp_path / "data" / "tensors").iterdir())[0]
    victim.write_bytes(victim.read_bytes()[:-3])
    assert main(["train", "--config", str(tiny_cfg)]) == 1


def test_grad_check_passes(capsys):
    assert main(["grad-check"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "ii_loss[attnpool/mlp,N=8]" in out


def test_grad_check_catches_broken_backward(monkeypatch, capsys):
    original = numerics.Tape.tanh

    def bad_tanh(self, a):
        out = original(self, a)
        fn = out.backward_fn
        out.backward_fn = lambda g: fn(1.5 * g)
        return out

    monkeypatch.setattr(numerics.Tape, "tanh", bad_tanh)
    assert main(["grad-check"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_sweep_gamma_rows_and_consistency_with_train(tiny_cfg, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep-gamma", "--config", str(tiny_cfg), "--out", str(out), "--gamma2", "3,0"]) == 0
    table = rows(out / "sweep_gamma.csv")
    assert table[0] == ["gamma2", "seed", "r1", "r10", "r25"]
    assert [(r[0], r[1]) for r in table[1:]] == [("0.0", "1"), ("0.0", "2"), ("3.0", "1"), ("3.0", "2")]

    tr = tmp_path / "tr"
    main(["gen-data", "--config", str(tiny_cfg)])
    ini = tmp_path / "g0.ini"
    ini.write_text(tiny_cfg.read_text() + "\n[weights]\ngamma2 = 0\n")
    assert main(["train", "--config", str(ini), "--out", str(tr), "--seeds", "2"]) == 0
    assert table[2][2:] == rows(tr / "metrics.csv")[-1][3:]


def test_sweep_batch_and_noise_rows(tiny_cfg, tmp_path):
    out = tmp_path / "o"
    assert main(["sweep-batch", "--config", str(tiny_cfg), "--out", str(out), "--batches", "6,12", "--seeds", "1"]) == 0
    table = rows(out / "sweep_batch.csv")
    assert [tuple(r[:2]) for r in table[1:]] == [("6", "inter"), ("6", "ii"), ("12", "inter"), ("12", "ii")]
    assert main(["noise-exp", "--config", str(tiny_cfg), "--out", str(out)]) == 0
    table = rows(out / "noise_exp.csv")
    assert table[0] == ["mode", "variant", "seed", "r1", "r5", "r10"]
    assert len(table) == 1 + 4 * 2 * 2
    assert all(0 <= float(x) <= 1 for r in table[1:] for x in r[3:])


def test_failed_sweep_leaves_only_partial(tiny_cfg, tmp_path, monkeypatch):
    from iiloss.config import load_config

    def boom(*args):
        raise RuntimeError("interrupted")

    monkeypatch.setattr(experiments, "_unit", boom)
    cfg = load_config(tiny_cfg)
    with pytest.raises(RuntimeError):
        experiments.cmd_sweep_gamma(cfg, [0.0], [1], tmp_path / "p")
    assert (tmp_path / "p" / "sweep_gamma.csv.partial").exists()
    assert not (tmp_path / "p" / "sweep_gamma.csv").exists()


def test_sweep_csv_is_reproducible(tiny_cfg, tmp_path):
    from iiloss.config import load_config

    cfg = load_config(tiny_cfg)
    cfg = replace(cfg, train=replace(cfg.train, epochs=1))
    a = experiments.cmd_sweep_gamma(cfg, [0.0, 3.0], [1], tmp_path / "a")
    b = experiments.cmd_sweep_gamma(cfg, [0.0, 3.0], [1], tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()
    assert np.all(np.array([r[2:] for r in rows(a)[1:]], float) <= 1)


def test_shipped_configs_parse():
    from pathlib import Path

    from iiloss.config import load_config

    root = Path(__file__).resolve().parents[1] / "configs"
    assert load_config(root / "default.ini") == RunConfig()
    for path in root.glob("*.ini"):
        load_config(path)
