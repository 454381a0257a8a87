"""Mini-batch training with Adam and retrieval evaluation by recall@k."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, make_rng, sample_batch
from .encoders import EncoderConfig, encode_array, init_params, params_on_tape
from .losses import TEMP_INIT, LossWeights, clamp_temperature, ii_loss
from .numerics import Tape

log = logging.getLogger(__name__)

SAMPLER_MODES = ("uniform", "no_noise", "with_noise", "more_noise", "most_noise")
EVAL_KS = (1, 10, 25)


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_n: int = 36
    epochs: int = 30
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    temp_init: float = TEMP_INIT
    sampler_mode: str = "uniform"
    gs_t: int = 16
    sampling: str = "gs"
    fd_window: int = 30
    eval_mode: str = "pair"
    seed: int = 0

    def validate(self) -> None:
        if self.batch_n < 2:
            raise ValueError("batch_n must be >= 2")
        if self.sampler_mode not in SAMPLER_MODES:
            raise ValueError(f"unknown sampler_mode {self.sampler_mode!r}")
        if self.sampler_mode != "uniform" and self.batch_n % 12:
            raise ValueError(f"noise modes need batch_n divisible by 12, got {self.batch_n}")
        if self.sampling not in ("gs", "fd"):
            raise ValueError(f"unknown sampling {self.sampling!r}")
        if self.eval_mode not in ("pair", "category"):
            raise ValueError(f"unknown eval_mode {self.eval_mode!r}")
        if self.epochs < 0 or self.lr <= 0:
            raise ValueError("epochs must be >= 0 and lr > 0")
        self.weights.validate()

    @property
    def clip_len(self) -> int:
        return self.gs_t if self.sampling == "gs" else self.fd_window


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    inter_loss: float
    intra_loss: float
    r1: float
    r10: float
    r25: float

    CSV_HEADER = "epoch,inter_loss,intra_loss,r1,r10,r25"

    def csv_row(self) -> str:
        return f"{self.epoch},{self.inter_loss!r},{self.intra_loss!r},{self.r1!r},{self.r10!r},{self.r25!r}"


@dataclass
class TrainResult:
    video: tuple[EncoderConfig, dict[str, np.ndarray]]
    music: tuple[EncoderConfig, dict[str, np.ndarray]]
    n_t: float
    metrics: list[EpochMetrics]


# -- batching ---------------------------------------------------------------

# (categories as a fraction of N, pairs per category) for each noise level
_COMPOSITION = {
    "no_noise": [(1, 1)],
    "with_noise": [(3, 1), (3, 2)],
    "more_noise": [(2, 2)],
    "most_noise": [(4, 4)],
}


def batch_composition(mode: str, n: int) -> list[tuple[int, int]]:
    """``[(n_categories, pairs_each), ...]`` summing to ``n`` pairs."""
    if mode not in _COMPOSITION:
        raise ValueError(f"no fixed composition for mode {mode!r}")
    return [(n // div, each) for div, each in _COMPOSITION[mode]]


def make_batches(ds: Dataset, cfg: TrainConfig, epoch_seed) -> list[list[int]]:
    """Pair ids for every batch of one epoch.

    ``uniform`` shuffles the whole set and drops the ragged tail. Noise modes
    draw ``len(ds) // N`` batches, each with a fixed category composition;
    pairs are drawn without replacement inside a batch.
    """
    n = cfg.batch_n
    rng = make_rng(epoch_seed) if not isinstance(epoch_seed, np.random.Generator) else epoch_seed
    ids = ds.pair_ids
    if cfg.sampler_mode == "uniform":
        order = ids[rng.permutation(len(ids))]
        return [order[i : i + n].tolist() for i in range(0, len(order) - n + 1, n)]

    groups = {c: np.array([r.pair_id for r in recs]) for c, recs in sorted(ds.by_category().items())}
    comp = batch_composition(cfg.sampler_mode, n)
    need_cats = sum(c for c, _ in comp)
    cats = np.array(sorted(groups))
    for count, each in comp:
        eligible = sum(len(g) >= each for g in groups.values())
        if eligible < count or len(cats) < need_cats:
            raise ValueError(
                f"{cfg.sampler_mode} with N={n} needs {need_cats} categories "
                f"({count} with >= {each} pairs); dataset has {len(cats)}"
            )
    batches = []
    for _ in range(len(ds) // n):
        batch: list[int] = []
        used: set[int] = set()
        # largest groups first so the eligibility check above is sufficient
        for count, each in sorted(comp, key=lambda ce: -ce[1]):
            pool = [c for c in cats if c not in used and len(groups[c]) >= each]
            chosen = rng.choice(pool, size=count, replace=False)
            for c in chosen:
                used.add(int(c))
                batch.extend(rng.choice(groups[c], size=each, replace=False).tolist())
        batches.append(batch)
    return batches


# -- optimiser --------------------------------------------------------------


def adam_step(params, grads, state: AdamState, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
    """In-place bias-corrected Adam update; clamps ``n_t`` if present."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.sum(~np.isfinite(g)))
            raise NonFiniteGradient(f"{bad} non-finite gradient entries in {name!r} at step {state.step + 1}")
    state.step += 1
    b1, b2 = betas
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, g in grads.items():
        m = state.m.setdefault(name, np.zeros_like(params[name]))
        v = state.v.setdefault(name, np.zeros_like(params[name]))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] = params[name] - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    if "n_t" in params:
        params["n_t"] = np.array(clamp_temperature(float(params["n_t"])))
    return params, state


# -- evaluation -------------------------------------------------------------


def _normalize_rows(x):
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms <= 1e-12):
        raise ValueError("zero-norm embedding row")
    return x / norms


def rank_candidates(sim: np.ndarray, candidate_ids=None) -> np.ndarray:
    """Per query, candidate indices by descending similarity, ties by ascending id."""
    sim = np.asarray(sim, dtype=np.float64)
    ids = np.arange(sim.shape[1]) if candidate_ids is None else np.asarray(candidate_ids)
    # lexsort: last key is primary
    return np.stack([np.lexsort((ids, -row)) for row in sim])


def recall_from_similarity(sim, query_labels, corpus_labels, k: int, candidate_ids=None) -> float:
    """Fraction of queries with a same-label candidate in the top ``k``."""
    sim = np.asarray(sim, dtype=np.float64)
    if not 1 <= k <= sim.shape[1]:
        raise ValueError(f"k={k} outside 1..{sim.shape[1]}")
    ranked = rank_candidates(sim, candidate_ids)[:, :k]
    hits = np.asarray(corpus_labels)[ranked] == np.asarray(query_labels)[:, None]
    return float(np.mean(hits.any(axis=1)))


def recall_at_k(query_emb, corpus_emb, query_labels, corpus_labels, k: int, candidate_ids=None) -> float:
    """Cosine-ranked recall@k.

    Pair mode passes pair ids as labels (one true partner); category mode
    passes category labels (any same-category candidate counts).
    """
    sim = _normalize_rows(query_emb) @ _normalize_rows(corpus_emb).T
    return recall_from_similarity(sim, query_labels, corpus_labels, k, candidate_ids)


def encode_corpus(enc: tuple[EncoderConfig, dict[str, np.ndarray]], ds: Dataset, side: str,
                  sampling: str = "gs", t: int = 16) -> np.ndarray:
    cfg, params = enc
    return encode_array(cfg, params, sample_batch(ds.records, side, sampling, t))


def evaluate(result_or_encs, ds: Dataset, cfg: TrainConfig, ks=EVAL_KS) -> dict[int, float]:
    """Video-to-music recall@k on ``ds`` for each k (capped at the pool size)."""
    video, music = result_or_encs
    q = encode_corpus(video, ds, "video", cfg.sampling, cfg.clip_len)
    c = encode_corpus(music, ds, "music", cfg.sampling, cfg.clip_len)
    labels = ds.pair_ids if cfg.eval_mode == "pair" else ds.categories
    sim = _normalize_rows(q) @ _normalize_rows(c).T
    return {k: recall_from_similarity(sim, labels, labels, min(k, len(ds))) for k in ks}


# -- training loop ----------------------------------------------------------


def _seed_for(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def train(ds_train: Dataset, ds_test: Dataset, video_cfg: EncoderConfig, music_cfg: EncoderConfig,
          cfg: TrainConfig) -> TrainResult:
    """Train both encoders and the temperature; evaluate on ``ds_test`` each epoch.

    Encoder init seeds and per-epoch batch order derive from ``cfg.seed`` only,
    so runs differing only in loss weights see identical batches.
    """
    cfg.validate()
    video_cfg = replace(video_cfg, seed=_seed_for(cfg.seed, video_cfg.seed, 1))
    music_cfg = replace(music_cfg, seed=_seed_for(cfg.seed, music_cfg.seed, 2))
    params = {f"video.{k}": v for k, v in init_params(video_cfg).items()}
    params.update({f"music.{k}": v for k, v in init_params(music_cfg).items()})
    params["n_t"] = np.array(float(cfg.temp_init))
    state = AdamState()

    t = cfg.clip_len
    index = {r.pair_id: i for i, r in enumerate(ds_train.records)}
    v_all = sample_batch(ds_train.records, "video", cfg.sampling, t)
    m_all = sample_batch(ds_train.records, "music", cfg.sampling, t)

    def split(p):
        v = {k.split(".", 1)[1]: a for k, a in p.items() if k.startswith("video.")}
        m = {k.split(".", 1)[1]: a for k, a in p.items() if k.startswith("music.")}
        return (video_cfg, v), (music_cfg, m)

    metrics: list[EpochMetrics] = []
    w = cfg.weights
    for epoch in range(cfg.epochs):
        batches = make_batches(ds_train, cfg, _seed_for(cfg.seed, epoch, 7))
        inter_sum = intra_sum = 0.0
        for batch in batches:
            rows = np.array([index[p] for p in batch])
            tape = Tape()
            nodes = params_on_tape(tape, params)
            v_nodes = {k.split(".", 1)[1]: n for k, n in nodes.items() if k.startswith("video.")}
            m_nodes = {k.split(".", 1)[1]: n for k, n in nodes.items() if k.startswith("music.")}
            br = ii_loss(tape, v_all[rows], m_all[rows], (video_cfg, v_nodes), (music_cfg, m_nodes),
                         nodes["n_t"], w)
            total = br.total.item()
            if not np.isfinite(total):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            grads = tape.backward(br.total)
            adam_step(params, {k: grads[n.id] for k, n in nodes.items()}, state,
                      cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps)
            vals = br.values()
            inter_sum += vals["inter"]
            intra_sum += w.beta1 * vals["intra_v"] + w.beta2 * vals["intra_m"]
        nb = max(len(batches), 1)
        rk = evaluate(split(params), ds_test, cfg)
        metrics.append(EpochMetrics(epoch, inter_sum / nb, intra_sum / nb, rk[1], rk[10], rk[25]))
        log.debug("epoch %d inter %.4f intra %.4f R@1 %.4f", epoch, inter_sum / nb, intra_sum / nb, rk[1])

    video, music = split(params)
    return TrainResult(video, music, float(params["n_t"]), metrics)
