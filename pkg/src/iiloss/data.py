"""Feature sequences, sampling, tensor files, manifests and synthetic data."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"IITNSR01"
MAX_RANK = 3
# Guard against absurd headers before allocating.
MAX_ELEMENTS = 1 << 31


class TensorFileError(ValueError):
    pass


class BadMagic(TensorFileError):
    pass


class Truncated(TensorFileError):
    pass


class DimensionOverflow(TensorFileError):
    pass


class DatasetError(ValueError):
    pass


class DimMismatch(DatasetError):
    pass


class EmptyDataset(DatasetError):
    pass


class DuplicatePairId(DatasetError):
    pass


class Insufficient(DatasetError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    """Philox counter-based generator; every random draw in the package uses this."""
    return np.random.Generator(np.random.Philox(int(seed)))


def as_sequence(frames) -> np.ndarray:
    seq = np.asarray(frames, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] < 1 or seq.shape[1] < 1:
        raise ValueError(f"feature sequence must be L x E with L, E >= 1, got {seq.shape}")
    if not np.all(np.isfinite(seq)):
        raise ValueError("feature sequence contains non-finite values")
    return seq


@dataclass(frozen=True, eq=False)
class PairRecord:
    pair_id: int
    category: int
    video: np.ndarray
    music: np.ndarray


@dataclass(eq=False)
class Dataset:
    records: list[PairRecord]
    video_dim: int
    music_dim: int

    def __len__(self) -> int:
        return len(self.records)

    @classmethod
    def from_records(cls, records: list[PairRecord]) -> "Dataset":
        if not records:
            raise EmptyDataset("dataset has no records")
        vd = records[0].video.shape[1]
        md = records[0].music.shape[1]
        seen = set()
        for r in records:
            if r.pair_id in seen:
                raise DuplicatePairId(f"duplicate pair_id {r.pair_id}")
            seen.add(r.pair_id)
            if r.category < 0:
                raise DatasetError(f"negative category on pair {r.pair_id}")
            if r.video.shape[1] != vd:
                raise DimMismatch(f"pair {r.pair_id}: video dim {r.video.shape[1]} != {vd}")
            if r.music.shape[1] != md:
                raise DimMismatch(f"pair {r.pair_id}: music dim {r.music.shape[1]} != {md}")
        return cls(list(records), vd, md)

    @property
    def pair_ids(self) -> np.ndarray:
        return np.array([r.pair_id for r in self.records], dtype=np.int64)

    @property
    def categories(self) -> np.ndarray:
        return np.array([r.category for r in self.records], dtype=np.int64)

    def by_category(self) -> dict[int, list[PairRecord]]:
        groups: dict[int, list[PairRecord]] = {}
        for r in self.records:
            groups.setdefault(r.category, []).append(r)
        return groups


# -- sampling ---------------------------------------------------------------


def gs_sample(seq, t: int) -> np.ndarray:
    """Split evenly into ``t`` clips and average each clip.

    Clip i spans frames [floor(i*L/t), floor((i+1)*L/t)). When L < t some of
    those spans are empty and the clip falls back to a single frame.
    """
    seq = as_sequence(seq)
    if t < 1:
        raise ValueError("clip count must be >= 1")
    L = seq.shape[0]
    out = np.empty((t, seq.shape[1]))
    for i in range(t):
        lo = (i * L) // t
        hi = ((i + 1) * L) // t
        if hi > lo:
            out[i] = seq[lo:hi].mean(axis=0)
        else:
            out[i] = seq[min(lo, L - 1)]
    return out


def fd_sample(seq, w: int) -> np.ndarray:
    """Centered contiguous window of ``w`` frames, edge-padded if too short."""
    seq = as_sequence(seq)
    if w < 1:
        raise ValueError("window length must be >= 1")
    L = seq.shape[0]
    if L >= w:
        start = (L - w) // 2
        return seq[start : start + w].copy()
    pad = w - L
    return np.pad(seq, ((pad // 2, pad - pad // 2), (0, 0)), mode="edge")


def temporal_mean(seq) -> np.ndarray:
    return as_sequence(seq).mean(axis=0)


# -- tensor files -----------------------------------------------------------


def save_tensor(path, matrix) -> None:
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim == 0 or arr.ndim > MAX_RANK:
        raise ValueError(f"rank must be 1..{MAX_RANK}, got {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot save non-finite values")
    header = MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    payload = arr.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(header + payload)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise BadMagic(f"{path}: bad magic {raw[:8]!r}")
    if len(raw) < 12:
        raise Truncated(f"{path}: missing rank")
    (rank,) = struct.unpack_from("<I", raw, 8)
    if rank < 1 or rank > MAX_RANK:
        raise DimensionOverflow(f"{path}: rank {rank}")
    end = 12 + 4 * rank
    if len(raw) < end:
        raise Truncated(f"{path}: missing dims")
    dims = struct.unpack_from(f"<{rank}I", raw, 12)
    count = 1
    for d in dims:
        count *= d
        if d == 0 or count > MAX_ELEMENTS:
            raise DimensionOverflow(f"{path}: dims {dims}")
    payload = raw[end:]
    if len(payload) < 4 * count:
        raise Truncated(f"{path}: expected {count} floats, found {len(payload) // 4}")
    if len(payload) > 4 * count:
        raise TensorFileError(f"{path}: {len(payload) - 4 * count} trailing bytes")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float64)


# -- manifests --------------------------------------------------------------


def load_dataset(manifest) -> Dataset:
    """Read ``pair_id,category,video_path,music_path`` lines into a Dataset.

    Relative tensor paths resolve against the manifest's directory.
    """
    manifest = Path(manifest)
    base = manifest.parent
    records = []
    with open(manifest, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 4:
                raise DatasetError(f"{manifest}:{lineno}: expected 4 fields, got {len(parts)}")
            try:
                pair_id, category = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise DatasetError(f"{manifest}:{lineno}: {exc}") from None
            paths = [base / p for p in parts[2:]]
            for p in paths:
                if not p.is_file():
                    raise FileNotFoundError(f"{manifest}:{lineno}: missing tensor {p}")
            video, music = (load_tensor(p) for p in paths)
            records.append(PairRecord(pair_id, category, as_sequence(video), as_sequence(music)))
    return Dataset.from_records(records)


def save_dataset(ds: Dataset, out_dir) -> Path:
    """Write one tensor file per sequence plus ``manifest.csv``; returns the manifest path."""
    out_dir = Path(out_dir)
    tensors = out_dir / "tensors"
    tensors.mkdir(parents=True, exist_ok=True)
    lines = ["# pair_id,category,video_tensor_path,music_tensor_path"]
    for r in ds.records:
        vname = f"tensors/{r.pair_id:06d}_video.iit"
        mname = f"tensors/{r.pair_id:06d}_music.iit"
        save_tensor(out_dir / vname, r.video)
        save_tensor(out_dir / mname, r.music)
        lines.append(f"{r.pair_id},{r.category},{vname},{mname}")
    manifest = out_dir / "manifest.csv"
    tmp = manifest.with_suffix(".csv.partial")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    os.replace(tmp, manifest)
    return manifest


# -- synthetic data ---------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    n_categories: int = 64
    pairs_per_category: int = 40
    latent_dim: int = 16
    video_dim: int = 32
    music_dim: int = 24
    seq_len_range: tuple[int, int] = (20, 60)
    # tight clusters: same-category pairs are near-duplicates, i.e. likely false negatives
    cluster_spread: float = 0.05
    frame_noise: float = 0.8
    seed: int = 0

    def validate(self) -> None:
        lo, hi = self.seq_len_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad seq_len_range {self.seq_len_range}")
        for name in ("n_categories", "pairs_per_category", "latent_dim", "video_dim", "music_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.cluster_spread < 0 or self.frame_noise < 0:
            raise ValueError("noise scales must be >= 0")


def _orthonormal_projection(rng: np.random.Generator, latent_dim: int, out_dim: int) -> np.ndarray:
    # latent_dim x out_dim map; orthonormal rows when latent_dim <= out_dim, else columns
    g = rng.standard_normal((max(latent_dim, out_dim), min(latent_dim, out_dim)))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))
    return q.T if latent_dim <= out_dim else q


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Clustered paired features with ground-truth categories.

    Values are rounded to float32 so a save/load round trip reproduces the
    in-memory dataset exactly.
    """
    cfg.validate()
    rng = make_rng(cfg.seed)
    centers = rng.standard_normal((cfg.n_categories, cfg.latent_dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    proj_v = _orthonormal_projection(rng, cfg.latent_dim, cfg.video_dim)
    proj_m = _orthonormal_projection(rng, cfg.latent_dim, cfg.music_dim)
    lo, hi = cfg.seq_len_range

    records = []
    pair_id = 0
    for cat in range(cfg.n_categories):
        for _ in range(cfg.pairs_per_category):
            z = centers[cat] + cfg.cluster_spread * rng.standard_normal(cfg.latent_dim)
            seqs = []
            for proj, dim in ((proj_v, cfg.video_dim), (proj_m, cfg.music_dim)):
                length = int(rng.integers(lo, hi + 1))
                frames = z @ proj + cfg.frame_noise * rng.standard_normal((length, dim))
                seqs.append(frames.astype(np.float32).astype(np.float64))
            records.append(PairRecord(pair_id, cat, seqs[0], seqs[1]))
            pair_id += 1
    return Dataset.from_records(records)


def split_train_test(ds: Dataset, test_pairs_per_category: int, seed: int) -> tuple[Dataset, Dataset]:
    """Per-category random holdout. Record order is preserved in both halves."""
    if test_pairs_per_category < 0:
        raise ValueError("holdout count must be >= 0")
    if test_pairs_per_category == 0:
        return ds, Dataset([], ds.video_dim, ds.music_dim)
    rng = make_rng(seed)
    test_ids: set[int] = set()
    for cat, recs in sorted(ds.by_category().items()):
        if len(recs) <= test_pairs_per_category:
            raise Insufficient(
                f"category {cat} has {len(recs)} records, cannot hold out {test_pairs_per_category}"
            )
        picks = rng.choice(len(recs), size=test_pairs_per_category, replace=False)
        test_ids.update(recs[i].pair_id for i in picks)
    train = [r for r in ds.records if r.pair_id not in test_ids]
    test = [r for r in ds.records if r.pair_id in test_ids]
    return Dataset(train, ds.video_dim, ds.music_dim), Dataset(test, ds.video_dim, ds.music_dim)


def sample_batch(records: list[PairRecord], side: str, sampling: str, t: int) -> np.ndarray:
    """Stack sampled sequences of one modality into an (N, t, E) array."""
    fn = gs_sample if sampling == "gs" else fd_sample
    if sampling not in ("gs", "fd"):
        raise ValueError(f"unknown sampling {sampling!r}")
    return np.stack([fn(getattr(r, side), t) for r in records])
