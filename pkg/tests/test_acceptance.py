"""Acceptance criteria 1-9.

Run with ``pytest tests/test_acceptance.py -v`` (or execute this file). The
trend criteria (4-6) train on the default synthetic config and take several
minutes on one core; they are marked ``slow`` but are part of the default run.
"""

import csv
import time
from collections import defaultdict
from dataclasses import replace

import numpy as np
import pytest

from iiloss import experiments
from iiloss.config import DataConfig, ExperimentConfig, RunConfig
from iiloss.data import SynthConfig, fd_sample, gs_sample, load_tensor, save_tensor, temporal_mean
from iiloss.encoders import EncoderConfig, init_params, params_on_tape
from iiloss.gradcheck import TOLERANCE, run_grad_checks
from iiloss.losses import LossWeights, ii_loss, inter_loss
from iiloss.numerics import Tape
from iiloss.training import TrainConfig, recall_at_k, recall_from_similarity


def default_cfg(tmp_path) -> RunConfig:
    # data dir that does not exist: the dataset is synthesised in memory
    base = RunConfig()
    return replace(base, data=replace(base.data, dir=str(tmp_path / "no_data")),
                   experiment=replace(base.experiment, out_dir=str(tmp_path / "out")))


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def mean_r1(rows, **match):
    sel = [float(r["r1"]) for r in rows if all(r[k] == str(v) for k, v in match.items())]
    assert sel, match
    return float(np.mean(sel))


# 1 ------------------------------------------------------------------------------


def test_criterion_1_gradient_fidelity(verdict):
    t0 = time.perf_counter()
    report = run_grad_checks(seed=0)
    elapsed = time.perf_counter() - t0
    worst_name, worst = max(report, key=lambda r: r[1])
    names = {n for n, _ in report}
    covers = all(f"ii_loss[{k},N={n}]" in names for k in ("mlp/mlp",) for n in (2, 4, 8))
    ok = worst < TOLERANCE and elapsed < 60 and covers
    assert verdict(1, ok, f"max rel err {worst:.2e} ({worst_name}) over {len(report)} checks, {elapsed:.1f}s")


# 2 ------------------------------------------------------------------------------


def _inter(v, m, n_t):
    tape = Tape()
    return inter_loss(tape, tape.tensor(v), tape.tensor(m), tape.tensor(n_t), LossWeights()).item()


def _intra_parts(video, music, enc_v, enc_m):
    tape = Tape()
    br = ii_loss(tape, video, music, (enc_v[0], params_on_tape(tape, enc_v[1])),
                 (enc_m[0], params_on_tape(tape, enc_m[1])), tape.tensor(0.07), LossWeights())
    return br.intra_v.item(), br.intra_m.item()


def test_criterion_2_analytic_loss_values(verdict):
    rng = np.random.default_rng(2)
    single = _inter(rng.standard_normal((1, 5)), rng.standard_normal((1, 5)), 0.07)
    ortho = _inter(np.eye(2), np.eye(2), 0.0)

    video, music = rng.standard_normal((6, 4, 3)), rng.standard_normal((6, 4, 3))
    cfg = EncoderConfig("meanpool_linear", 3, 3)
    ident = (cfg, {"w": np.eye(3), "b": np.zeros(3)})
    id_v, id_m = _intra_parts(video, music, ident, ident)

    # two orthogonal inputs, an encoder that maps everything to one point
    clips = np.stack([np.tile(np.eye(2)[i], (3, 1)) for i in range(2)])
    collapsed = (EncoderConfig("meanpool_linear", 2, 2), {"w": np.zeros((2, 2)), "b": np.array([1.0, 0.5])})
    col_v, _ = _intra_parts(clips, clips, collapsed, collapsed)

    ok = (single == 0.0 and abs(ortho - 0.313262) <= 1e-6 and abs(id_v) <= 1e-9 and abs(id_m) <= 1e-9
          and abs(col_v - 0.292893) <= 1e-6)
    assert verdict(2, ok, f"N=1 {single!r}, orthonormal {ortho:.7f}, identity {max(abs(id_v), abs(id_m)):.1e}, "
                          f"collapsed {col_v:.7f}")


# 3 ------------------------------------------------------------------------------


def test_criterion_3_total_recomposes(verdict):
    rng = np.random.default_rng(3)
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(1, 9))
        w = LossWeights(*rng.uniform(0, 2, 6))
        cfg_v = EncoderConfig(("meanpool_linear", "mlp", "attnpool")[i % 3], 4, 3, 5, seed=i)
        cfg_m = EncoderConfig("mlp", 3, 3, 5, seed=i + 1)
        tape = Tape()
        br = ii_loss(tape, rng.standard_normal((n, 3, 4)), rng.standard_normal((n, 3, 3)),
                     (cfg_v, params_on_tape(tape, init_params(cfg_v))),
                     (cfg_m, params_on_tape(tape, init_params(cfg_m))),
                     tape.tensor(rng.uniform(-1, 4)), w)
        v = br.values()
        expected = 0.5 * (w.gamma1 * v["inter"] + w.gamma2 * (w.beta1 * v["intra_v"] + w.beta2 * v["intra_m"]))
        worst = max(worst, abs(v["total"] - expected))
    assert verdict(3, worst <= 1e-12, f"max |total - recomposed| = {worst:.1e} over 100 batches")


# 4-6 (trend experiments on the default synthetic config) --------------------------


@pytest.mark.slow
def test_criterion_4_gamma_sweep_trend(tmp_path, verdict):
    cfg = default_cfg(tmp_path)
    t0 = time.perf_counter()
    rows = read_rows(experiments.cmd_sweep_gamma(cfg, [0.0, 3.0, 6.0, 10.0], [1, 2, 3]))
    elapsed = time.perf_counter() - t0
    curve = [mean_r1(rows, gamma2=g) for g in (0.0, 3.0, 6.0, 10.0)]
    strictly_decreasing = all(b < a for a, b in zip(curve, curve[1:]))
    ok = curve[1] >= curve[0] and not strictly_decreasing and elapsed < 1800
    shown = ", ".join(f"{c:.4f}" for c in curve)
    assert verdict(4, ok, f"mean R@1 at gamma2=0,3,6,10: {shown}; {elapsed / 60:.1f} min")


@pytest.mark.slow
def test_criterion_5_noise_experiment_trend(tmp_path, verdict):
    cfg = default_cfg(tmp_path)
    t0 = time.perf_counter()
    rows = read_rows(experiments.cmd_noise_exp(cfg, [1, 2, 3]))
    elapsed = time.perf_counter() - t0
    gap = {m: 100 * (mean_r1(rows, mode=m, variant="ii") - mean_r1(rows, mode=m, variant="inter"))
           for m in cfg.experiment.noise_modes}
    ok = gap["most_noise"] >= 1.0 and abs(gap["no_noise"]) <= 1.0 and elapsed < 1800
    shown = ", ".join(f"{m} {g:+.2f}" for m, g in gap.items())
    assert verdict(5, ok, f"II - inter R@1 points: {shown}; {elapsed / 60:.1f} min")


@pytest.mark.slow
def test_criterion_6_batch_sweep_trend(tmp_path, verdict):
    cfg = default_cfg(tmp_path)
    batches = sorted(cfg.experiment.batch_list)
    rows = read_rows(experiments.cmd_sweep_batch(cfg, batches, [1, 2, 3]))
    drop = {v: mean_r1(rows, batch_n=batches[0], variant=v) - mean_r1(rows, batch_n=batches[-1], variant=v)
            for v in ("inter", "ii")}
    ok = drop["ii"] < drop["inter"]
    assert verdict(6, ok, f"R@1 drop N={batches[0]}->{batches[-1]}: inter {drop['inter']:+.4f}, "
                          f"ii {drop['ii']:+.4f}")


# 7 ------------------------------------------------------------------------------


def test_criterion_7_sampling_exactness(verdict):
    x = np.arange(12.0).reshape(4, 3)
    a, b = [1.0, 2.0], [3.0, 4.0]
    examples = [
        np.array_equal(gs_sample(x, 4), x),
        np.array_equal(gs_sample([[1, 2], [3, 4], [5, 6], [7, 8]], 2), [[2, 3], [6, 7]]),
        np.array_equal(gs_sample([[1], [2]], 4), [[1], [1], [2], [2]]),
        np.array_equal(fd_sample(np.arange(10.0)[:, None], 4), [[3], [4], [5], [6]]),
        np.array_equal(fd_sample(x, 4), x),
        np.array_equal(fd_sample([a, b], 4), [a, a, b, b]),
    ]
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(500):
        t, per = int(rng.integers(1, 12)), int(rng.integers(1, 8))
        seq = rng.uniform(-100, 100, (t * per, int(rng.integers(1, 5))))
        worst = max(worst, float(np.max(np.abs(gs_sample(seq, t).mean(axis=0) - temporal_mean(seq)))))
    ok = all(examples) and worst <= 1e-12
    assert verdict(7, ok, f"{sum(examples)}/{len(examples)} worked examples exact, "
                          f"equal-division mean err {worst:.1e}")


# 8 ------------------------------------------------------------------------------


def test_criterion_8_recall_oracle(verdict):
    sim3 = np.array([[0.9, 0.5, 0.1], [0.8, 0.6, 0.1], [0.9, 0.8, 0.7]])
    ids3 = [0, 1, 2]
    got3 = [recall_from_similarity(sim3, ids3, ids3, k) for k in (1, 2, 3)]
    sim4 = np.array([[0.5, 0.5, 0.2, 0.1], [0.5, 0.5, 0.2, 0.1], [0.1, 0.2, 0.3, 0.9], [0.0, 0.0, 0.0, 0.0]])
    ids4 = [0, 1, 2, 3]
    got4 = [recall_from_similarity(sim4, ids4, ids4, k) for k in (1, 2, 3, 4)]
    exact = got3 == [1 / 3, 2 / 3, 1.0] and got4 == [0.25, 0.75, 0.75, 1.0]

    rng = np.random.default_rng(8)
    monotone = 0
    for _ in range(1000):
        m = int(rng.integers(1, 15))
        q, c = rng.standard_normal((m, 3)), rng.standard_normal((m, 3))
        labels = rng.integers(0, max(1, m // 2), m) if rng.random() < 0.5 else np.arange(m)
        vals = [recall_at_k(q, c, labels, labels, k) for k in range(1, m + 1)]
        monotone += all(x <= y for x, y in zip(vals, vals[1:])) and vals[-1] == 1.0
    ok = exact and monotone == 1000
    assert verdict(8, ok, f"3x3 {got3}, 4x4 {got4}, nondecreasing on {monotone}/1000")


# 9 ------------------------------------------------------------------------------


def _small_cfg(tmp_path, name):
    synth = SynthConfig(n_categories=8, pairs_per_category=4, latent_dim=4, video_dim=6, music_dim=5,
                        seq_len_range=(3, 8), seed=9)
    return RunConfig(synth=synth, data=DataConfig(dir=str(tmp_path / name / "data")),
                     train=TrainConfig(batch_n=8, epochs=2, gs_t=4, lr=0.01),
                     experiment=ExperimentConfig(out_dir=str(tmp_path / name / "out")))


def test_criterion_9_determinism_and_io(tmp_path, verdict):
    digests = defaultdict(list)
    for name in ("a", "b"):
        cfg = _small_cfg(tmp_path, name)
        root = experiments.cmd_gen_data(cfg).parent
        for p in sorted(root.rglob("*")):
            if p.is_file():
                digests["data"].append((name, p.relative_to(root), p.read_bytes()))
        experiments.cmd_train(cfg)
        out = tmp_path / name / "out"
        experiments.cmd_sweep_gamma(cfg, [0.0, 3.0], [1])
        for csv_name in ("metrics.csv", "sweep_gamma.csv"):
            digests["csv"].append((name, csv_name, (out / csv_name).read_bytes()))

    def same(entries):
        a = [(k, v) for n, k, v in entries if n == "a"]
        b = [(k, v) for n, k, v in entries if n == "b"]
        return len(a) > 0 and a == b

    rng = np.random.default_rng(9)
    mats = [rng.standard_normal((5, 7)).astype(np.float32), np.array([[np.float32(1e-40), -0.0, 3.4e38]], np.float32),
            np.arange(4, dtype=np.float32)]
    bit_exact = True
    for i, mat in enumerate(mats):
        path = tmp_path / f"t{i}.iit"
        save_tensor(path, mat)
        back = load_tensor(path)
        bit_exact &= back.shape == mat.shape and back.astype(np.float32).tobytes() == mat.tobytes()
    ok = same(digests["data"]) and same(digests["csv"]) and bit_exact
    n_files = sum(1 for n, *_ in digests["data"] if n == "a")
    assert verdict(9, ok, f"{n_files} dataset files and 2 CSVs byte-identical across reruns; "
                          f"f32 round trip {'bit-exact' if bit_exact else 'MISMATCH'}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
