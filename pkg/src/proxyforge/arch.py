"""Toy transformer architecture space, initialization and forward pass."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tape, Tensor

CHOICES = {
    "n_layers": (1, 2, 3, 4),
    "d_model": (8, 16, 32),
    "n_heads": (1, 2, 4),
    "d_ffn": (16, 32, 64),
}
BLOCK_WEIGHTS = ("wq", "wk", "wv", "wo", "w1", "w2")
ATTENTION_WEIGHTS = ("wq", "wk", "wv", "wo")


@dataclass(frozen=True, order=True)
class ArchSpec:
    n_layers: int
    d_model: int
    n_heads: int
    d_ffn: int
    vocab_size: int = 16
    seq_len: int = 12

    def is_valid(self) -> bool:
        return (all(getattr(self, k) in v for k, v in CHOICES.items())
                and self.d_model % self.n_heads == 0
                and self.vocab_size >= 2 and self.seq_len >= 1)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ArchSpec":
        fields = ("n_layers", "d_model", "n_heads", "d_ffn", "vocab_size", "seq_len")
        missing = [f for f in fields if f not in obj]
        if missing:
            raise ValueError(f"ArchSpec JSON missing fields: {missing}")
        spec = cls(**{f: int(obj[f]) for f in fields})
        if not spec.is_valid():
            raise ValueError(f"invalid architecture: {spec}")
        return spec

    def block_param_count(self) -> int:
        d, f = self.d_model, self.d_ffn
        return 4 * d * d + 2 * d * f

    def param_count(self) -> int:
        d = self.d_model
        return (self.vocab_size * d + self.seq_len * d
                + self.n_layers * self.block_param_count() + d * self.vocab_size)

    def label(self) -> str:
        return f"L{self.n_layers}-d{self.d_model}-h{self.n_heads}-f{self.d_ffn}"


def enumerate_specs(vocab_size: int = 16, seq_len: int = 12) -> list[ArchSpec]:
    """Every valid spec, lexicographic in (n_layers, d_model, n_heads, d_ffn)."""
    out = []
    for combo in itertools.product(*CHOICES.values()):
        spec = ArchSpec(*combo, vocab_size=vocab_size, seq_len=seq_len)
        if spec.is_valid():
            out.append(spec)
    return out


def grid_index(spec: ArchSpec) -> int:
    return enumerate_specs(spec.vocab_size, spec.seq_len).index(spec)


def sample(seed: int, vocab_size: int = 16, seq_len: int = 12) -> ArchSpec:
    rng = np.random.default_rng(seed)
    while True:
        spec = ArchSpec(*(int(rng.choice(v)) for v in CHOICES.values()),
                        vocab_size=vocab_size, seq_len=seq_len)
        if spec.is_valid():
            return spec


@dataclass
class Block:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray

    def weights(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in BLOCK_WEIGHTS]


@dataclass
class Model:
    spec: ArchSpec
    embed: np.ndarray
    pos: np.ndarray
    blocks: list[Block]
    head: np.ndarray

    def parameters(self) -> list[np.ndarray]:
        """All weights in canonical order: embed, pos, per-block weights, head."""
        out = [self.embed, self.pos]
        for b in self.blocks:
            out.extend(b.weights())
        out.append(self.head)
        return out

    def block_slices(self) -> list[slice]:
        """Positions of each block's weights inside :meth:`parameters`."""
        k = len(BLOCK_WEIGHTS)
        return [slice(2 + i * k, 2 + (i + 1) * k) for i in range(len(self.blocks))]

    def with_parameters(self, params: list[np.ndarray]) -> "Model":
        k = len(BLOCK_WEIGHTS)
        blocks = [Block(*params[2 + i * k:2 + (i + 1) * k]) for i in range(len(self.blocks))]
        return Model(self.spec, params[0], params[1], blocks, params[-1])

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def build(spec: ArchSpec, seed: int) -> Model:
    """Instantiate ``spec`` with scaled-uniform weights drawn from ``seed``."""
    if not spec.is_valid():
        raise ValueError(f"invalid architecture: {spec}")
    rng = np.random.default_rng(seed)
    d, f, v = spec.d_model, spec.d_ffn, spec.vocab_size
    embed = _uniform(rng, v, d)
    pos = _uniform(rng, spec.seq_len, d)
    blocks = [Block(_uniform(rng, d, d), _uniform(rng, d, d), _uniform(rng, d, d),
                    _uniform(rng, d, d), _uniform(rng, d, f), _uniform(rng, f, d))
              for _ in range(spec.n_layers)]
    head = _uniform(rng, d, v)
    return Model(spec, embed, pos, blocks, head)


@dataclass
class Batch:
    """Token windows ``tokens`` (N x seq_len) and the next token ``targets`` (N)."""

    tokens: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class BlockTrace:
    heads: Tensor        # post-softmax attention, heads x N x seq x seq
    act_pre: Tensor      # FFN pre-activation, N x seq x d_ffn
    act: Tensor          # FFN post-ReLU activation


@dataclass
class ForwardTrace:
    inputs: Tensor       # embedded input, N x seq x d_model
    blocks: list[BlockTrace] = field(default_factory=list)
    logits: Tensor | None = None


def embed_tokens(params: list[Tensor], tokens: np.ndarray) -> Tensor:
    n, seq = tokens.shape
    positions = np.broadcast_to(np.arange(seq), (n, seq))
    return T.add(T.take_rows(params[0], tokens), T.take_rows(params[1], positions))


def forward(spec: ArchSpec, params: list[Tensor], inputs: Tensor) -> ForwardTrace:
    """Run the transformer on an already-embedded input (N x seq x d_model)."""
    n, seq, d = inputs.shape
    h = spec.n_heads
    dh = d // h
    trace = ForwardTrace(inputs=inputs)
    x = inputs
    k = len(BLOCK_WEIGHTS)
    for i in range(spec.n_layers):
        wq, wk, wv, wo, w1, w2 = params[2 + i * k:2 + (i + 1) * k]

        def split(t):
            return T.transpose(T.reshape(t, (n, seq, h, dh)), (2, 0, 1, 3))

        q, kk, v = split(T.matmul(x, wq)), split(T.matmul(x, wk)), split(T.matmul(x, wv))
        scores = T.mul(T.matmul(q, T.transpose(kk, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        att = T.softmax_lastaxis(scores)
        ctx = T.reshape(T.transpose(T.matmul(att, v), (1, 2, 0, 3)), (n, seq, d))
        x = T.add(x, T.matmul(ctx, wo))
        a_pre = T.matmul(x, w1)
        a = T.relu(a_pre)
        x = T.add(x, T.matmul(a, w2))
        trace.blocks.append(BlockTrace(att, a_pre, a))
    trace.logits = T.matmul(x, params[-1])
    return trace


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean next-token cross-entropy read off the last position."""
    seq = logits.shape[1]
    last = T.slice_axis(T.log_softmax_lastaxis(logits), 1, seq - 1)
    return T.neg(T.mean_all(T.pick_last(last, targets)))


def traced_forward(model: Model, tape: Tape, batch: Batch) -> tuple[list[Tensor], ForwardTrace]:
    params = [tape.watch(p) for p in model.parameters()]
    x = embed_tokens(params, batch.tokens)
    return params, forward(model.spec, params, x)


def logits(model: Model, tokens: np.ndarray) -> np.ndarray:
    params = [Tensor(p) for p in model.parameters()]
    return forward(model.spec, params, embed_tokens(params, tokens)).logits.data


def loss_and_grads(model: Model, batch: Batch) -> tuple[float, list[np.ndarray]]:
    with Tape() as tape:
        params, trace = traced_forward(model, tape, batch)
        loss = cross_entropy(trace.logits, batch.targets)
        grads = tape.gradient(loss, params)
    return float(loss.data), grads


def input_jacobian(fn, inputs: np.ndarray) -> np.ndarray:
    """Per-sample gradient of ``sum(fn(x))`` w.r.t. ``x``, flattened to N x D.

    Samples must not interact inside ``fn`` for rows to be per-sample.
    """
    with Tape() as tape:
        x = tape.watch(np.asarray(inputs, dtype=np.float64))
        out = T.sum_all(fn(x))
        (g,) = tape.gradient(out, [x])
    return g.reshape(g.shape[0], -1)


def grad_wrt_input(model: Model, batch: Batch) -> np.ndarray:
    """Jacobian rows of the summed logits w.r.t. the embedded input (N x seq*d)."""
    params = [Tensor(p) for p in model.parameters()]
    x0 = embed_tokens(params, batch.tokens).data
    return input_jacobian(lambda x: forward(model.spec, params, x).logits, x0)
