"""One forward/backward pass per architecture, reduced to the proxy operands.

Operand kinds:

    A  post-ReLU FFN activations of a block      N x seq x d_ffn
    J  Jacobian of summed logits w.r.t. input    N x (seq * d_model)
    G  gradients of a block's weights            flat vector
    H  post-softmax attention of a block         heads x N x seq x seq
    W  weights of a block                        flat vector
    S  output token distribution                 N x seq x vocab
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .arch import Batch, Model, cross_entropy, traced_forward
from .tensor import Tape

KINDS = ("A", "J", "G", "H", "W", "S")
GLOBAL_KINDS = frozenset({"J", "S"})
LOSS_KINDS = ("cross_entropy", "sum")


class CaptureError(RuntimeError):
    """The probe loss was not finite; the architecture cannot be scored."""


@dataclass
class NetworkStatistics:
    n_blocks: int
    weights: list[list[np.ndarray]]
    grads: list[list[np.ndarray]]
    acts: list[np.ndarray]
    act_grads: list[np.ndarray]
    act_signs: list[np.ndarray]
    heads: list[np.ndarray]
    head_grads: list[np.ndarray]
    softmax: np.ndarray
    jacobian: np.ndarray
    loss: float
    batch: Batch | None = None

    def __post_init__(self):
        self._flat_w = [_flat(ws) for ws in self.weights]
        self._flat_g = [_flat(gs) for gs in self.grads]


def _flat(arrays) -> np.ndarray:
    out = np.concatenate([a.reshape(-1) for a in arrays])
    out.flags.writeable = False
    return out


def capture(model: Model, batch: Batch, loss_kind: str = "cross_entropy") -> NetworkStatistics:
    """Trace one forward pass and read every operand family off the tape.

    The gradient families (G, dA, dH) come from the loss sweep; J comes from a
    second reverse sweep over the same tape rooted at the summed logits.
    """
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {loss_kind!r}; expected one of {LOSS_KINDS}")
    with Tape() as tape:
        params, trace = traced_forward(model, tape, batch)
        if loss_kind == "cross_entropy":
            loss = cross_entropy(trace.logits, batch.targets)
        else:
            loss = T.sum_all(trace.logits)
        total = T.sum_all(trace.logits)
        probs = T.softmax_lastaxis(trace.logits).data
    if not np.isfinite(loss.data):
        raise CaptureError(f"non-finite probe loss for {model.spec.label()}")
    grads = tape.backward(loss)
    jac = tape.backward(total)[trace.inputs.node]

    def g(t):
        return grads.get(t.node, np.zeros(t.shape))

    weights, wgrads = [], []
    for sl in model.block_slices():
        weights.append([p.data for p in params[sl]])
        wgrads.append([g(p) for p in params[sl]])
    return NetworkStatistics(
        n_blocks=model.spec.n_layers,
        weights=weights,
        grads=wgrads,
        acts=[b.act.data for b in trace.blocks],
        act_grads=[g(b.act) for b in trace.blocks],
        act_signs=[b.act_pre.data > 0 for b in trace.blocks],
        heads=[b.heads.data for b in trace.blocks],
        head_grads=[g(b.heads) for b in trace.blocks],
        softmax=probs,
        jacobian=jac.reshape(jac.shape[0], -1),
        loss=float(loss.data),
        batch=batch,
    )


def operand(stats: NetworkStatistics, kind: str, block: int = 0) -> np.ndarray:
    """The tensor of ``kind`` for ``block`` (J and S ignore the block)."""
    if kind == "S":
        return stats.softmax
    if kind == "J":
        return stats.jacobian
    if kind not in KINDS:
        raise ValueError(f"unknown operand kind {kind!r}; expected one of {KINDS}")
    if not 0 <= block < stats.n_blocks:
        raise IndexError(f"block {block} out of range for {stats.n_blocks} blocks")
    if kind == "A":
        return stats.acts[block]
    if kind == "H":
        return stats.heads[block]
    if kind == "W":
        return stats._flat_w[block]
    return stats._flat_g[block]
