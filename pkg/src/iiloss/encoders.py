"""Sequence encoders mapping (N, T, E) sampled features to (N, D) embeddings.

Three kinds are available:

``meanpool_linear``
    temporal mean, then an affine map E -> D.
``mlp``
    temporal mean, affine E -> H, tanh, affine H -> D.
``attnpool``
    softmax attention over frames with a learned query, then an affine map
    E -> D. A zero query reduces it to ``meanpool_linear``.

Each kind has a tape path (:func:`encode`) used for training and a plain
numpy path (:func:`encode_array`) used for corpus embedding.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import load_tensor, make_rng, save_tensor
from .numerics import Node, ShapeError, Tape

KINDS = ("meanpool_linear", "mlp", "attnpool")


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = "meanpool_linear"
    input_dim: int = 32
    output_dim: int = 32
    hidden_dim: int = 256
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if min(self.input_dim, self.output_dim, self.hidden_dim) < 1:
            raise ValueError("encoder dims must be >= 1")


def _xavier(rng, fan_in, fan_out, shape):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: EncoderConfig) -> dict[str, np.ndarray]:
    cfg.validate()
    rng = make_rng(cfg.seed)
    E, H, D = cfg.input_dim, cfg.hidden_dim, cfg.output_dim
    if cfg.kind == "mlp":
        return {
            "w1": _xavier(rng, E, H, (E, H)),
            "b1": np.zeros(H),
            "w2": _xavier(rng, H, D, (H, D)),
            "b2": np.zeros(D),
        }
    params = {"w": _xavier(rng, E, D, (E, D)), "b": np.zeros(D)}
    if cfg.kind == "attnpool":
        params["q"] = _xavier(rng, E, 1, (E,))
    return params


def _check_batch(cfg: EncoderConfig, shape) -> None:
    if len(shape) != 3 or shape[2] != cfg.input_dim:
        raise ShapeError(f"batch shape {tuple(shape)} does not match input_dim {cfg.input_dim}")


def encode(cfg: EncoderConfig, params: dict[str, Node], batch: Node, tape: Tape) -> Node:
    _check_batch(cfg, batch.shape)
    if cfg.kind == "attnpool":
        scores = tape.scale(tape.frames_dot(batch, params["q"]), 1.0 / np.sqrt(cfg.input_dim))
        pooled = tape.weighted_frames(tape.softmax(scores), batch)
        return tape.add_bias(tape.matmul(pooled, params["w"]), params["b"])
    pooled = tape.mean_axis(batch, 1)
    if cfg.kind == "mlp":
        hidden = tape.tanh(tape.add_bias(tape.matmul(pooled, params["w1"]), params["b1"]))
        return tape.add_bias(tape.matmul(hidden, params["w2"]), params["b2"])
    return tape.add_bias(tape.matmul(pooled, params["w"]), params["b"])


def encode_array(cfg: EncoderConfig, params: dict[str, np.ndarray], batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    _check_batch(cfg, batch.shape)
    if cfg.kind == "attnpool":
        scores = batch @ params["q"] * (1.0 / np.sqrt(cfg.input_dim))
        scores = np.exp(scores - scores.max(axis=1, keepdims=True))
        weights = scores / scores.sum(axis=1, keepdims=True)
        pooled = np.einsum("nt,nte->ne", weights, batch)
        return pooled @ params["w"] + params["b"]
    pooled = batch.mean(axis=1)
    if cfg.kind == "mlp":
        hidden = np.tanh(pooled @ params["w1"] + params["b1"])
        return hidden @ params["w2"] + params["b2"]
    return pooled @ params["w"] + params["b"]


def params_on_tape(tape: Tape, params: dict[str, np.ndarray], requires_grad: bool = True) -> dict[str, Node]:
    return {k: tape.tensor(v, requires_grad=requires_grad) for k, v in params.items()}


# -- checkpoints ------------------------------------------------------------


def save_checkpoint(directory, encoders: dict[str, tuple[EncoderConfig, dict[str, np.ndarray]]],
                    extra: dict[str, float] | None = None) -> Path:
    """Write each parameter as a tensor file plus an ``index.txt``.

    ``encoders`` maps a prefix (``video``/``music``) to its config and params.
    Scalars in ``extra`` (e.g. the temperature) go into the index verbatim.
    Tensor files are float32, so reloaded parameters are rounded.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for prefix, (cfg, params) in sorted(encoders.items()):
        lines.append(
            f"config {prefix} kind={cfg.kind} input_dim={cfg.input_dim} "
            f"output_dim={cfg.output_dim} hidden_dim={cfg.hidden_dim} seed={cfg.seed}"
        )
        for name, value in sorted(params.items()):
            fname = f"{prefix}.{name}.iit"
            save_tensor(directory / fname, value)
            lines.append(f"param {prefix}.{name} {fname}")
    for key, value in sorted((extra or {}).items()):
        lines.append(f"scalar {key} {float(value)!r}")
    index = directory / "index.txt"
    index.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return index


def load_checkpoint(directory):
    """Inverse of :func:`save_checkpoint`: ``(encoders, scalars)``."""
    directory = Path(directory)
    configs: dict[str, EncoderConfig] = {}
    params: dict[str, dict[str, np.ndarray]] = {}
    scalars: dict[str, float] = {}
    for line in (directory / "index.txt").read_text(encoding="utf-8").splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "config":
            fields = dict(p.split("=", 1) for p in parts[2:])
            configs[parts[1]] = EncoderConfig(
                kind=fields["kind"],
                **{k: int(fields[k]) for k in ("input_dim", "output_dim", "hidden_dim", "seed")},
            )
        elif parts[0] == "param":
            prefix, name = parts[1].split(".", 1)
            params.setdefault(prefix, {})[name] = load_tensor(directory / parts[2])
        elif parts[0] == "scalar":
            scalars[parts[1]] = float(parts[2])
        else:
            raise ValueError(f"unrecognised index line: {line!r}")
    return {k: (configs[k], params.get(k, {})) for k in configs}, scalars
