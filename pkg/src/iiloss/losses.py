"""Inter-modal, intra-modal and combined inter-intra (II) losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import EncoderConfig, encode
from .numerics import EPS_NORM, DomainError, Node, Tape

# e^{n_t} is kept within [e^-1, 100]
TEMP_MIN = -1.0
TEMP_MAX = float(np.log(100.0))
TEMP_INIT = 0.07


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 0.5
    alpha2: float = 0.5
    beta1: float = 0.5
    beta2: float = 0.5
    gamma1: float = 1.0
    gamma2: float = 3.0
    # Only meaningful for the general row/column intra form; with symmetric
    # similarity matrices it collapses to the single-sum form used here.
    delta1: float = 0.5
    delta2: float = 0.5

    def validate(self) -> None:
        for name, value in self.__dict__.items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be >= 0, got {value}")


def clamp_temperature(n_t: float) -> float:
    return float(min(max(n_t, TEMP_MIN), TEMP_MAX))


@dataclass(eq=False)
class LossBreakdown:
    inter: Node
    intra_v: Node
    intra_m: Node
    total: Node

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k).item() for k in ("inter", "intra_v", "intra_m", "total")}


def inter_loss(tape: Tape, v_emb: Node, m_emb: Node, n_t: Node, w: LossWeights) -> Node:
    """Symmetric cross-entropy over the temperature-scaled cosine matrix.

    Rows are video queries, columns music queries; targets are the diagonal.
    """
    return inter_loss_from_similarity(tape, tape.cosine_sim_matrix(v_emb, m_emb), n_t, w)


def inter_loss_from_similarity(tape: Tape, sim: Node, n_t: Node, w: LossWeights) -> Node:
    logits = tape.scale(sim, tape.exp(n_t))
    diag = np.arange(sim.shape[0])
    rows = tape.row_log_softmax_ce(logits, diag)
    cols = tape.row_log_softmax_ce(tape.transpose(logits), diag)
    # row_log_softmax_ce already averages over N
    return tape.add(tape.scale(rows, w.alpha1), tape.scale(cols, w.alpha2))


def intra_sim_pre(mean_feats) -> np.ndarray:
    """Cosine matrix of pre-encoder temporal means; a constant, no gradient."""
    x = np.asarray(mean_feats, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms <= EPS_NORM):
        raise DomainError("zero-norm mean feature row")
    xn = x / norms
    return xn @ xn.T


def intra_sim_post(tape: Tape, emb: Node) -> Node:
    return tape.cosine_sim_matrix(emb, emb)


def intra_loss_modality(tape: Tape, s_pre, s_post: Node) -> Node:
    """(1/N) * sum_i (1 - cos(s_pre[i], s_post[i]))."""
    pre = s_pre if isinstance(s_pre, Node) else tape.constant(s_pre)
    if pre.shape != s_post.shape or len(pre.shape) != 2 or pre.shape[0] != pre.shape[1]:
        raise ValueError(f"intra loss needs equal square matrices, got {pre.shape} and {s_post.shape}")
    agreement = tape.mean(tape.row_cosine(pre, s_post))
    return tape.sub(tape.constant(1.0), agreement)


def combine(tape: Tape, inter: Node, intra_v: Node, intra_m: Node, w: LossWeights) -> Node:
    intra = tape.add(tape.scale(intra_v, w.beta1), tape.scale(intra_m, w.beta2))
    return tape.scale(tape.add(tape.scale(inter, w.gamma1), tape.scale(intra, w.gamma2)), 0.5)


def ii_loss(
    tape: Tape,
    video: np.ndarray,
    music: np.ndarray,
    video_enc: tuple[EncoderConfig, dict[str, Node]],
    music_enc: tuple[EncoderConfig, dict[str, Node]],
    n_t: Node,
    w: LossWeights,
) -> LossBreakdown:
    """Full II loss on one batch of sampled sequences, shape (N, T, E) per side.

    The pre-encoder similarity uses the temporal mean of the *sampled* batch.
    With ``gamma2 = 0`` this is the inter-only baseline (halved).
    """
    v_in, m_in = tape.constant(video), tape.constant(music)
    v_emb = encode(video_enc[0], video_enc[1], v_in, tape)
    m_emb = encode(music_enc[0], music_enc[1], m_in, tape)
    inter = inter_loss(tape, v_emb, m_emb, n_t, w)
    intra_v = intra_loss_modality(tape, intra_sim_pre(video.mean(axis=1)), intra_sim_post(tape, v_emb))
    intra_m = intra_loss_modality(tape, intra_sim_pre(music.mean(axis=1)), intra_sim_post(tape, m_emb))
    return LossBreakdown(inter, intra_v, intra_m, combine(tape, inter, intra_v, intra_m, w))
