"""INI-style run configuration.

Every section and key is optional; omitted values take the dataclass
defaults below. Unknown sections or keys raise :class:`ConfigError`.

::

    [synth]          SynthConfig fields; seq_len_min / seq_len_max for the range
    [data]           dir, test_pairs_per_category, split_seed
    [video_encoder]  kind, output_dim, hidden_dim, seed
    [music_encoder]  kind, output_dim, hidden_dim, seed
    [train]          TrainConfig fields (adam_beta1/adam_beta2/adam_eps for Adam)
    [weights]        alpha1 alpha2 beta1 beta2 gamma1 gamma2 delta1 delta2
    [experiment]     out_dir, seeds, gamma2_list, batch_list, noise_modes,
                     noise_batch_n, noise_test_pairs_per_category, workers
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .data import SynthConfig
from .encoders import EncoderConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    dir: str = "runs/data"
    test_pairs_per_category: int = 1
    split_seed: int = 0


@dataclass(frozen=True)
class EncoderSection:
    kind: str = "mlp"
    output_dim: int = 32
    hidden_dim: int = 256
    seed: int = 0

    def build(self, input_dim: int) -> EncoderConfig:
        return EncoderConfig(self.kind, input_dim, self.output_dim, self.hidden_dim, self.seed)


@dataclass(frozen=True)
class ExperimentConfig:
    out_dir: str = "runs/out"
    seeds: tuple[int, ...] = (1, 2, 3)
    gamma2_list: tuple[float, ...] = (0.0, 3.0, 6.0, 10.0)
    batch_list: tuple[int, ...] = (12, 36, 96)
    noise_modes: tuple[str, ...] = ("no_noise", "with_noise", "more_noise", "most_noise")
    noise_batch_n: int = 36
    # category retrieval needs several same-category candidates in the pool
    noise_test_pairs_per_category: int = 2
    workers: int = 1


@dataclass(frozen=True)
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    data: DataConfig = field(default_factory=DataConfig)
    video_encoder: EncoderSection = field(default_factory=EncoderSection)
    music_encoder: EncoderSection = field(default_factory=EncoderSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def encoders(self, video_dim: int, music_dim: int) -> tuple[EncoderConfig, EncoderConfig]:
        return self.video_encoder.build(video_dim), self.music_encoder.build(music_dim)

    def validate(self) -> None:
        try:
            self.synth.validate()
            self.train.validate()
            for enc in self.encoders(self.synth.video_dim, self.synth.music_dim):
                enc.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not self.experiment.seeds:
            raise ConfigError("experiment.seeds is empty")
        if self.experiment.workers < 1:
            raise ConfigError("experiment.workers must be >= 1")


def _convert(raw: str, template, where: str):
    try:
        if isinstance(template, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(template, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            elem = template[0] if template else str
            kind = type(elem) if not isinstance(elem, type) else elem
            return tuple(kind(s) for s in items)
        return type(template)(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(template).__name__}") from None


def _apply(obj, section: configparser.SectionProxy, name: str, aliases=None):
    aliases = aliases or {}
    known = {f.name for f in fields(obj)}
    updates = {}
    for key, raw in section.items():
        target = aliases.get(key, key)
        if target not in known:
            raise ConfigError(f"unknown key [{name}] {key}")
        updates[target] = _convert(raw, getattr(obj, target), f"[{name}] {key}")
    return replace(obj, **updates)


_TRAIN_ALIASES = {"adam_beta1": "beta1", "adam_beta2": "beta2", "adam_eps": "eps"}


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None

    cfg = RunConfig()
    sections = {}
    for name in parser.sections():
        sec = parser[name]
        if name == "synth":
            extra = {k: sec.pop(k) for k in ("seq_len_min", "seq_len_max") if k in sec}
            synth = _apply(cfg.synth, sec, name)
            lo, hi = synth.seq_len_range
            lo = int(_convert(extra.get("seq_len_min", str(lo)), 0, "[synth] seq_len_min"))
            hi = int(_convert(extra.get("seq_len_max", str(hi)), 0, "[synth] seq_len_max"))
            sections[name] = replace(synth, seq_len_range=(lo, hi))
        elif name == "data":
            sections[name] = _apply(cfg.data, sec, name)
        elif name in ("video_encoder", "music_encoder"):
            sections[name] = _apply(getattr(cfg, name), sec, name)
        elif name == "train":
            if "weights" in sec:
                raise ConfigError("unknown key [train] weights (use a [weights] section)")
            sections[name] = _apply(cfg.train, sec, name, _TRAIN_ALIASES)
        elif name == "weights":
            sections[name] = _apply(cfg.train.weights, sec, name)
        elif name == "experiment":
            sections[name] = _apply(cfg.experiment, sec, name)
        else:
            raise ConfigError(f"unknown section [{name}]")

    weights = sections.pop("weights", None)
    cfg = replace(cfg, **sections)
    if weights is not None:
        cfg = replace(cfg, train=replace(cfg.train, weights=weights))
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
