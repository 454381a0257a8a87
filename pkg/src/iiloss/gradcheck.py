"""Gradient-check suite: every differentiable op plus the composed II loss."""

from __future__ import annotations

import numpy as np

from .encoders import EncoderConfig, init_params
from .losses import LossWeights, ii_loss
from .numerics import finite_diff_check

TOLERANCE = 1e-5
STEP = 1e-6


def _op_cases(rng):
    probe = rng.standard_normal((3, 4))
    yield "matmul", lambda t, p: t.sum(t.tanh(t.matmul(p["a"], p["b"]))), {
        "a": rng.standard_normal((3, 4)), "b": rng.standard_normal((4, 2))}
    yield "transpose", lambda t, p: t.sum(t.mul(t.transpose(p["a"]), t.constant(probe))), {
        "a": rng.standard_normal((4, 3))}
    yield "add", lambda t, p: t.sum(t.tanh(t.add(p["a"], p["b"]))), {
        "a": rng.standard_normal((2, 3)), "b": rng.standard_normal((2, 3))}
    yield "sub", lambda t, p: t.sum(t.tanh(t.sub(p["a"], p["b"]))), {
        "a": rng.standard_normal((2, 3)), "b": rng.standard_normal((2, 3))}
    yield "mul", lambda t, p: t.sum(t.mul(p["a"], p["b"])), {
        "a": rng.standard_normal((2, 3)), "b": rng.standard_normal((2, 3))}
    yield "scale", lambda t, p: t.sum(t.tanh(t.scale(p["a"], p["s"]))), {
        "a": rng.standard_normal((2, 3)), "s": np.array(0.7)}
    yield "exp", lambda t, p: t.sum(t.exp(p["a"])), {"a": rng.standard_normal((2, 3))}
    yield "log", lambda t, p: t.sum(t.log(p["a"])), {"a": rng.uniform(0.5, 2.0, (2, 3))}
    yield "tanh", lambda t, p: t.sum(t.tanh(p["a"])), {"a": rng.standard_normal((2, 3))}
    yield "add_bias", lambda t, p: t.sum(t.tanh(t.add_bias(p["a"], p["b"]))), {
        "a": rng.standard_normal((3, 4)), "b": rng.standard_normal(4)}
    yield "sum", lambda t, p: t.sum(p["a"]), {"a": rng.standard_normal((2, 3))}
    yield "mean", lambda t, p: t.mean(t.mul(p["a"], p["a"])), {"a": rng.standard_normal((2, 3))}
    yield "mean_axis", lambda t, p: t.sum(t.tanh(t.mean_axis(p["a"], 1))), {
        "a": rng.standard_normal((2, 3, 4))}
    yield "row_l2_normalize", lambda t, p: t.sum(t.mul(t.row_l2_normalize(p["a"]), t.constant(probe))), {
        "a": rng.standard_normal((3, 4))}
    yield "cosine_sim_matrix", lambda t, p: t.sum(t.tanh(t.cosine_sim_matrix(p["a"], p["b"]))), {
        "a": rng.standard_normal((3, 4)), "b": rng.standard_normal((3, 4))}
    yield "softmax", lambda t, p: t.sum(t.mul(t.softmax(p["a"]), t.constant(probe))), {
        "a": rng.standard_normal((3, 4))}
    yield "row_log_softmax_ce", lambda t, p: t.row_log_softmax_ce(p["a"], [1, 2, 0]), {
        "a": rng.standard_normal((3, 3))}
    pooled_probe = rng.standard_normal((2, 4))
    yield "attention_pool", (
        lambda t, p: t.sum(t.mul(t.weighted_frames(t.softmax(t.frames_dot(p["x"], p["q"])), p["x"]),
                                 t.constant(pooled_probe)))
    ), {"x": rng.standard_normal((2, 3, 4)), "q": rng.standard_normal(4)}


def _ii_case(rng, n, kinds):
    video = rng.standard_normal((n, 4, 5))
    music = rng.standard_normal((n, 4, 3))
    cfgs = (EncoderConfig(kinds[0], 5, 4, 6, seed=n), EncoderConfig(kinds[1], 3, 4, 6, seed=n + 1))
    params = {f"v.{k}": v for k, v in init_params(cfgs[0]).items()}
    params.update({f"m.{k}": v for k, v in init_params(cfgs[1]).items()})
    params["n_t"] = np.array(0.07)

    def build(tape, leaves):
        v = {k[2:]: x for k, x in leaves.items() if k.startswith("v.")}
        m = {k[2:]: x for k, x in leaves.items() if k.startswith("m.")}
        return ii_loss(tape, video, music, (cfgs[0], v), (cfgs[1], m), leaves["n_t"], LossWeights()).total

    return build, params


def run_grad_checks(seed: int = 0) -> list[tuple[str, float]]:
    """``[(name, max relative error), ...]`` for each op and the II loss."""
    rng = np.random.default_rng(seed)
    report = [(name, finite_diff_check(build, params, STEP)) for name, build, params in _op_cases(rng)]
    for kinds in (("meanpool_linear", "meanpool_linear"), ("mlp", "mlp"), ("attnpool", "mlp")):
        for n in (2, 4, 8):
            build, params = _ii_case(rng, n, kinds)
            report.append((f"ii_loss[{kinds[0]}/{kinds[1]},N={n}]", finite_diff_check(build, params, STEP)))
    return report
