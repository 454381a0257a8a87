"""Experiment commands: data generation, training, evaluation and sweeps.

Each sweep trains one model per unit (a parameter value, variant and seed),
keeps only the final-epoch recall, and writes rows in sorted unit order.
Output is first written to ``<name>.partial`` and renamed when complete.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .config import RunConfig
from .data import Dataset, generate_synthetic, load_dataset, save_dataset, split_train_test
from .encoders import load_checkpoint, save_checkpoint
from .gradcheck import TOLERANCE, run_grad_checks
from .training import EpochMetrics, TrainConfig, evaluate, train

log = logging.getLogger(__name__)

VARIANTS = ("inter", "ii")


def _fmt(x: float) -> str:
    return f"{x:.6f}"


class CsvWriter:
    """Rows go to ``path.partial``; the final name appears only on :meth:`close`."""

    def __init__(self, path, header: str):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.partial = self.path.with_name(self.path.name + ".partial")
        self.fh = open(self.partial, "w", encoding="utf-8", newline="\n")
        self.fh.write(header + "\n")

    def row(self, *values) -> None:
        self.fh.write(",".join(str(v) for v in values) + "\n")
        self.fh.flush()

    def close(self) -> Path:
        self.fh.close()
        os.replace(self.partial, self.path)
        return self.path


def manifest_path(cfg: RunConfig) -> Path:
    return Path(cfg.data.dir) / "manifest.csv"


def get_dataset(cfg: RunConfig, require_files: bool = False) -> Dataset:
    """Load the generated dataset if present, otherwise synthesise in memory.

    Both routes give identical values: generated features are float32-exact.
    """
    path = manifest_path(cfg)
    if path.is_file():
        return load_dataset(path)
    if require_files:
        raise FileNotFoundError(f"no dataset at {path}; run gen-data first")
    return generate_synthetic(cfg.synth)


def splits(cfg: RunConfig, ds: Dataset) -> tuple[Dataset, Dataset]:
    return split_train_test(ds, cfg.data.test_pairs_per_category, cfg.data.split_seed)


def cmd_gen_data(cfg: RunConfig, out_dir=None) -> Path:
    ds = generate_synthetic(cfg.synth)
    manifest = save_dataset(ds, out_dir or cfg.data.dir)
    print(f"wrote {len(ds)} pairs to {manifest}")
    return manifest


def _train_one(cfg: RunConfig, train_cfg: TrainConfig, ds: Dataset | None = None):
    ds = ds if ds is not None else get_dataset(cfg)
    tr, te = splits(cfg, ds)
    video_cfg, music_cfg = cfg.encoders(ds.video_dim, ds.music_dim)
    return train(tr, te, video_cfg, music_cfg, train_cfg), te


def write_metrics(path, metrics: list[EpochMetrics]) -> Path:
    out = CsvWriter(path, EpochMetrics.CSV_HEADER)
    for m in metrics:
        out.row(m.epoch, _fmt(m.inter_loss), _fmt(m.intra_loss), _fmt(m.r1), _fmt(m.r10), _fmt(m.r25))
    return out.close()


def cmd_train(cfg: RunConfig, out_dir=None, seeds=None) -> list[Path]:
    """Train per seed; writes ``metrics.csv`` and ``checkpoint/`` (per-seed subdirs if several)."""
    ds = get_dataset(cfg, require_files=True)
    out = Path(out_dir or cfg.experiment.out_dir)
    seeds = list(seeds) if seeds else [cfg.train.seed]
    written = []
    for seed in seeds:
        target = out if len(seeds) == 1 else out / f"seed_{seed}"
        result, _ = _train_one(cfg, replace(cfg.train, seed=seed), ds)
        save_checkpoint(target / "checkpoint", {"video": result.video, "music": result.music},
                        {"n_t": result.n_t, "seed": seed})
        written.append(write_metrics(target / "metrics.csv", result.metrics))
        last = result.metrics[-1] if result.metrics else None
        if last:
            print(f"seed {seed}: R@1 {last.r1:.4f} R@10 {last.r10:.4f} R@25 {last.r25:.4f}")
    return written


def cmd_eval(cfg: RunConfig, out_dir=None) -> Path:
    """Evaluate ``checkpoint/`` under ``out_dir`` on the test split, both modes."""
    ds = get_dataset(cfg, require_files=True)
    out = Path(out_dir or cfg.experiment.out_dir)
    encs, _ = load_checkpoint(out / "checkpoint")
    _, te = splits(cfg, ds)
    writer = CsvWriter(out / "eval.csv", "mode,r1,r10,r25")
    for mode in ("pair", "category"):
        rk = evaluate((encs["video"], encs["music"]), te, replace(cfg.train, eval_mode=mode))
        writer.row(mode, _fmt(rk[1]), _fmt(rk[10]), _fmt(rk[25]))
        print(f"{mode}: R@1 {rk[1]:.4f} R@10 {rk[10]:.4f} R@25 {rk[25]:.4f}")
    return writer.close()


# -- sweeps -----------------------------------------------------------------


def _unit(args):
    cfg, train_cfg, ks = args
    result, te = _train_one(cfg, train_cfg)
    if ks == (1, 10, 25):
        last = result.metrics[-1]
        return last.r1, last.r10, last.r25
    rk = evaluate((result.video, result.music), te, train_cfg, ks)
    return tuple(rk[k] for k in ks)


def _run_units(cfg: RunConfig, units, path, header, ks=(1, 10, 25)) -> Path:
    """``units`` is a list of (row key tuple, TrainConfig); rows keep that order."""
    writer = CsvWriter(path, header)
    jobs = [(cfg, tc, ks) for _, tc in units]
    if cfg.experiment.workers > 1:
        with ProcessPoolExecutor(cfg.experiment.workers) as pool:
            results = pool.map(_unit, jobs)
            for (key, _), rk in zip(units, results):
                writer.row(*key, *map(_fmt, rk))
    else:
        for (key, _), job in zip(units, jobs):
            rk = _unit(job)
            log.info("%s -> %s", key, rk)
            writer.row(*key, *map(_fmt, rk))
    return writer.close()


def _gamma_cfg(train_cfg: TrainConfig, gamma2: float) -> TrainConfig:
    return replace(train_cfg, weights=replace(train_cfg.weights, gamma2=gamma2))


def cmd_sweep_gamma(cfg: RunConfig, gammas=None, seeds=None, out_dir=None) -> Path:
    gammas = sorted(gammas if gammas is not None else cfg.experiment.gamma2_list)
    seeds = sorted(seeds or cfg.experiment.seeds)
    if not gammas:
        raise ValueError("gamma2 list is empty")
    units = [((g, s), replace(_gamma_cfg(cfg.train, g), seed=s)) for g in gammas for s in seeds]
    path = Path(out_dir or cfg.experiment.out_dir) / "sweep_gamma.csv"
    return _run_units(cfg, units, path, "gamma2,seed,r1,r10,r25")


def _variant_cfg(train_cfg: TrainConfig, variant: str) -> TrainConfig:
    return _gamma_cfg(train_cfg, 0.0) if variant == "inter" else train_cfg


def cmd_sweep_batch(cfg: RunConfig, batches=None, seeds=None, out_dir=None) -> Path:
    batches = sorted(batches or cfg.experiment.batch_list)
    seeds = sorted(seeds or cfg.experiment.seeds)
    for n in batches:
        replace(cfg.train, batch_n=n).validate()
    units = [
        ((n, v, s), replace(_variant_cfg(cfg.train, v), batch_n=n, seed=s))
        for n in batches for v in VARIANTS for s in seeds
    ]
    path = Path(out_dir or cfg.experiment.out_dir) / "sweep_batch.csv"
    return _run_units(cfg, units, path, "batch_n,variant,seed,r1,r10,r25")


def cmd_noise_exp(cfg: RunConfig, seeds=None, out_dir=None) -> Path:
    """Category-retrieval runs on a split holding ``noise_test_pairs_per_category`` per class."""
    seeds = sorted(seeds or cfg.experiment.seeds)
    cfg = replace(cfg, data=replace(cfg.data, test_pairs_per_category=cfg.experiment.noise_test_pairs_per_category))
    base = replace(cfg.train, batch_n=cfg.experiment.noise_batch_n, eval_mode="category")
    for mode in cfg.experiment.noise_modes:
        replace(base, sampler_mode=mode).validate()
    units = [
        ((mode, v, s), replace(_variant_cfg(base, v), sampler_mode=mode, seed=s))
        for mode in cfg.experiment.noise_modes for v in VARIANTS for s in seeds
    ]
    path = Path(out_dir or cfg.experiment.out_dir) / "noise_exp.csv"
    return _run_units(cfg, units, path, "mode,variant,seed,r1,r5,r10", ks=(1, 5, 10))


def cmd_grad_check(seed: int = 0) -> bool:
    report = run_grad_checks(seed)
    width = max(len(name) for name, _ in report)
    ok = True
    print(f"{'check':<{width}}  max_rel_err  status")
    for name, err in report:
        passed = err < TOLERANCE
        ok &= passed
        print(f"{name:<{width}}  {err:.3e}    {'ok' if passed else 'FAIL'}")
    return ok
