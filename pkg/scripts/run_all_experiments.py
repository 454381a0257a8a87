"""Generate the synthetic dataset, run the three sweeps and print summaries.

    python3 scripts/run_all_experiments.py --config configs/default.ini --out runs/full
"""

import argparse
import time
from dataclasses import replace
from pathlib import Path

from iiloss import experiments
from iiloss.config import RunConfig, load_config

from summarize import summarize


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--out", default="runs/full")
    ap.add_argument("--workers", type=int, help="parallel training processes")
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else RunConfig()
    out = Path(args.out)
    cfg = replace(cfg, data=replace(cfg.data, dir=str(out / "data")),
                  experiment=replace(cfg.experiment, out_dir=str(out)))
    if args.workers:
        cfg = replace(cfg, experiment=replace(cfg.experiment, workers=args.workers))

    experiments.cmd_gen_data(cfg)
    for name, fn in (("sweep-gamma", experiments.cmd_sweep_gamma),
                     ("sweep-batch", experiments.cmd_sweep_batch),
                     ("noise-exp", experiments.cmd_noise_exp)):
        t0 = time.perf_counter()
        path = fn(cfg)
        print(f"\n{name}: {path} ({time.perf_counter() - t0:.0f}s)")
        summarize(path)


if __name__ == "__main__":
    main()
