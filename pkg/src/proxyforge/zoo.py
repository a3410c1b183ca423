"""Handcrafted zero-cost proxies and the published searched expressions.

Weight-based scores are taken over transformer-block weights (attention and
FFN matrices) and summed across blocks; embeddings and the output head are
left out so the scores line up with the per-block operands of the DSL.
"""

from __future__ import annotations

import logging
import math
from typing import Callable

import numpy as np

from . import tensor as T
from .arch import ATTENTION_WEIGHTS, BLOCK_WEIGHTS, Model, cross_entropy, embed_tokens, forward
from .dsl import evaluate, parse
from .stats import NetworkStatistics
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)

SEARCHED = {
    "lpzero_flexibert": "H:f08,f04|g01|A:f10,f13,f01",
    "lpzero_gpt2": "G:f16,f03|g01|W:f17,f03,f01",
    "lpzero_llama": "W:f12,f04|g01|W:f13,f06",
}
NOTES = {
    "lpzero_flexibert": "softmax of the scalar Frobenius norm is identically 1, so the "
                        "activation branch contributes log(1) = 0 and only the head term ranks",
}

Scorer = Callable[[Model, NetworkStatistics], float]
_REGISTRY: dict[str, Scorer] = {}


def proxy(name: str):
    def register(fn: Scorer) -> Scorer:
        _REGISTRY[name] = fn
        return fn
    return register


def proxy_ids() -> list[str]:
    return list(_REGISTRY)


# -- helpers ---------------------------------------------------------------------


def synflow_scores(fwd: Callable[[list[Tensor], Tensor], Tensor], weights: list[np.ndarray],
                   input_shape: tuple[int, ...]) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Data-free saliency pass.

    Weights are replaced by their absolute values, the input is all ones and the
    objective is the sum of outputs. Returns ``(|theta|, dR/dtheta)`` per weight.
    """
    absw = [np.abs(w) for w in weights]
    with Tape() as tape:
        leaves = [tape.watch(w) for w in absw]
        out = T.sum_all(fwd(leaves, Tensor(np.ones(input_shape))))
        grads = tape.gradient(out, leaves)
    return absw, grads


def _transformer_synflow(model: Model) -> tuple[list[np.ndarray], list[np.ndarray]]:
    spec = model.spec
    absw, grads = synflow_scores(lambda ps, x: forward(spec, ps, x).logits,
                                 model.parameters(), (1, spec.seq_len, spec.d_model))
    idx = [i for sl in model.block_slices() for i in range(sl.start, sl.stop)]
    return [absw[i] for i in idx], [grads[i] for i in idx]


def _attention_pairs(stats: NetworkStatistics):
    names = list(BLOCK_WEIGHTS)
    for ws, gs in zip(stats.weights, stats.grads):
        for n in ATTENTION_WEIGHTS:
            k = names.index(n)
            yield ws[k], gs[k]


def _all_pairs(stats: NetworkStatistics):
    for ws, gs in zip(stats.weights, stats.grads):
        yield from zip(ws, gs)


def _nuclear(m: np.ndarray) -> float:
    return float(np.linalg.svd(m, compute_uv=False).sum())


def _signed_root(x: np.ndarray, k: float) -> np.ndarray:
    return np.sign(x) * np.abs(x) ** k


# -- handcrafted proxies ----------------------------------------------------------------


@proxy("activation_distance")
def activation_distance(model, stats):
    codes = np.concatenate([s.reshape(s.shape[0], -1) for s in stats.act_signs], axis=1)
    c = codes.astype(np.float64)
    # N_A minus Hamming distance between binary codes
    k = c @ c.T + (1.0 - c) @ (1.0 - c).T
    sign, logdet = np.linalg.slogdet(k + 1e-6 * np.eye(len(k)))
    return logdet if sign > 0 else math.nan


@proxy("synaptic_saliency")
def synaptic_saliency(model, stats):
    return sum(float(np.sum(g * w)) for w, g in _all_pairs(stats))


@proxy("jacobian_cosine")
def jacobian_cosine(model, stats):
    j = stats.jacobian
    n = len(j)
    jn = j / np.linalg.norm(j, axis=1, keepdims=True)
    c = jn @ jn.T
    np.fill_diagonal(c, 0.0)
    return 1.0 - float(np.sum(_signed_root(c, 1.0 / 20.0))) / (n * n - n)


@proxy("synaptic_diversity")
def synaptic_diversity(model, stats):
    return sum(_nuclear(g) * _nuclear(w) for w, g in _attention_pairs(stats))


@proxy("attention_confidence")
def attention_confidence(model, stats):
    return sum(float(h.max(axis=-1).mean()) for h in stats.heads)


@proxy("softmax_confidence")
def softmax_confidence(model, stats):
    return float(stats.softmax.max(axis=-1).mean())


@proxy("attention_importance")
def attention_importance(model, stats):
    total = 0.0
    for h, dh in zip(stats.heads, stats.head_grads):
        per_sample = np.abs(np.sum(h * dh, axis=(2, 3)))   # heads x N
        total += float(per_sample.mean(axis=1).sum())
    return total


@proxy("snip")
def snip(model, stats):
    return sum(float(np.sum(np.abs(g * w))) for w, g in _all_pairs(stats))


@proxy("grasp")
def grasp(model, stats):
    if stats.batch is None:
        raise ValueError("grasp needs the probe batch stored with the statistics")
    params = model.parameters()
    idx = [i for sl in model.block_slices() for i in range(sl.start, sl.stop)]
    theta = [params[i] for i in idx]
    g = np.concatenate([gi.reshape(-1) for _, gi in _all_pairs(stats)])
    batch = stats.batch

    def loss_fn(leaves):
        full = [Tensor(p) for p in params]
        for i, leaf in zip(idx, leaves):
            full[i] = leaf
        return cross_entropy(forward(model.spec, full, embed_tokens(full, batch.tokens)).logits,
                             batch.targets)

    hg = T.hvp(loss_fn, theta, g).data
    flat = np.concatenate([t.reshape(-1) for t in theta])
    return float(-np.sum(hg * flat))


@proxy("fisher")
def fisher(model, stats):
    total = 0.0
    for a, da in zip(stats.acts, stats.act_grads):
        per_channel = np.sum(a * da, axis=1)                  # N x d_ffn
        total += float(0.5 * np.mean(per_channel ** 2, axis=0).sum())
    return total


@proxy("logsynflow")
def logsynflow(model, stats):
    absw, grads = _transformer_synflow(model)
    total = 0.0
    for w, g in zip(absw, grads):
        # weights the data-free pass cannot reach (e.g. query/key under a
        # constant input) have an exactly zero gradient and score 0
        live = g != 0
        total += float(np.sum(w[live] * np.abs(np.log(np.abs(g[live])))))
    return total


@proxy("synflow")
def synflow(model, stats):
    absw, grads = _transformer_synflow(model)
    return sum(float(np.sum(g * w)) for w, g in zip(absw, grads))


@proxy("gradnorm")
def gradnorm(model, stats):
    return sum(math.sqrt(float(np.sum(g * g))) for g in stats._flat_g)


@proxy("n_params")
def n_params(model, stats):
    return float(model.num_parameters())


def _searched(name: str) -> Scorer:
    expr = parse(SEARCHED[name])

    def score(model, stats):
        v = evaluate(expr, stats)
        return math.nan if v is None else v

    score.__name__ = name
    return score


for _name in SEARCHED:
    proxy(_name)(_searched(_name))


# -- public API --------------------------------------------------------------------


def score(proxy_id: str, model: Model, stats: NetworkStatistics) -> float | None:
    """Scalar score of ``proxy_id``, or ``None`` when the proxy is undefined here."""
    try:
        fn = _REGISTRY[proxy_id]
    except KeyError:
        raise KeyError(f"unknown proxy {proxy_id!r}; known: {', '.join(_REGISTRY)}") from None
    with np.errstate(all="ignore"):
        value = float(fn(model, stats))
    return value if math.isfinite(value) else None


def score_all(model: Model, stats: NetworkStatistics) -> dict[str, float | None]:
    out = {}
    for pid in _REGISTRY:
        try:
            out[pid] = score(pid, model, stats)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("proxy %s failed on %s: %s", pid, model.spec.label(), exc)
            out[pid] = None
    return out
