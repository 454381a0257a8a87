"""Time a one-epoch training run on the default synthetic config."""

import time
from dataclasses import replace

from iiloss.config import RunConfig
from iiloss.experiments import _train_one

cfg = RunConfig()
t0 = time.perf_counter()
result, _ = _train_one(cfg, replace(cfg.train, epochs=1))
m = result.metrics[-1]
print(f"1 epoch: {time.perf_counter() - t0:.1f}s  R@1 {m.r1:.4f}  R@10 {m.r10:.4f}  R@25 {m.r25:.4f}")
