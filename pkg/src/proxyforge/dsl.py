"""Two-branch symbolic expressions over network statistics.

An expression picks two operand kinds, pushes each through a short chain of
unary primitives and joins the results with one binary primitive. Its text
form is ``<KIND>:<f..>,<f..>|<g..>|<KIND>:<f..>,...``, for example
``H:f08,f04|g01|A:f10,f13,f01``.

Evaluation never raises for bad math: NaN/Inf, kind or shape violations and a
fully pruned expression all make :func:`evaluate` return ``None``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .stats import GLOBAL_KINDS, KINDS, NetworkStatistics, operand

UNARY_IDS = tuple(f"f{i:02d}" for i in range(1, 21))
BINARY_IDS = ("g01", "g02", "g03", "g04")
PRUNE = "f20"
IDENTITY = "f19"

UNARY_NAMES = {
    "f01": "log", "f02": "abs_log", "f03": "abs", "f04": "square", "f05": "exp",
    "f06": "sqrt", "f07": "relu", "f08": "reciprocal", "f09": "neg", "f10": "norm_fro",
    "f11": "norm_sum", "f12": "norm_l1", "f13": "softmax", "f14": "sigmoid",
    "f15": "log_softmax", "f16": "min_max", "f17": "average", "f18": "std",
    "f19": "identity", "f20": "prune",
}
BINARY_NAMES = {"g01": "add", "g02": "sub", "g03": "mul", "g04": "div"}


class InvalidExpression(ValueError):
    """An operation was applied outside its domain (kind or shape)."""


class ParseError(ValueError):
    def __init__(self, message: str, text: str, position: int):
        super().__init__(f"{message} at position {position}: {text!r}")
        self.text = text
        self.position = position


class _Empty:
    """Value of a pruned branch."""

    def __repr__(self):
        return "EMPTY"


EMPTY = _Empty()


# -- primitives ----------------------------------------------------------------


def _softmax(x):
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _log_softmax(x):
    s = x - x.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def _min_max(x):
    lo, hi = x.min(), x.max()
    return (x - lo) / (hi - lo)


_ANY, _TENSOR, _ROWWISE = "any", "tensor", "rowwise"

# op id -> (admitted input kinds, function)
_UNARY: dict[str, tuple[str, Callable[[np.ndarray], np.ndarray]]] = {
    "f01": (_ANY, np.log),
    "f02": (_ANY, lambda x: np.abs(np.log(x))),
    "f03": (_ANY, np.abs),
    "f04": (_ANY, np.square),
    "f05": (_ANY, np.exp),
    "f06": (_ANY, np.sqrt),
    "f07": (_ANY, lambda x: np.maximum(x, 0.0)),
    "f08": (_ANY, lambda x: 1.0 / x),
    "f09": (_ANY, np.negative),
    "f10": (_TENSOR, lambda x: np.sqrt(np.sum(x * x))),
    "f11": (_TENSOR, lambda x: np.sum(x) / x.size),
    "f12": (_TENSOR, lambda x: np.sum(np.abs(x))),
    "f13": (_ROWWISE, _softmax),
    "f14": (_ROWWISE, lambda x: 1.0 / (1.0 + np.exp(-x))),
    "f15": (_ROWWISE, _log_softmax),
    "f16": (_TENSOR, _min_max),
    "f17": (_TENSOR, lambda x: np.sum(x) / len(x.reshape(-1))),
    "f18": (_TENSOR, lambda x: np.sqrt(np.mean(np.square(x - np.mean(x))))),
    "f19": (_ANY, lambda x: x),
}


def kind_of(v) -> str:
    if v is EMPTY:
        return "empty"
    return ("scalar", "vector")[v.ndim] if v.ndim < 2 else "matrix"


def eval_unary(op: str, v):
    """Apply unary primitive ``op``; raises :class:`InvalidExpression` on a kind mismatch.

    Reductions (f10-f12, f17, f18) and min-max scaling need a vector or matrix.
    Softmax, sigmoid and log-softmax also accept a scalar, treated as a
    one-element vector (so softmax of a scalar is exactly 1).
    """
    if op == PRUNE or v is EMPTY:
        return EMPTY
    try:
        admits, fn = _UNARY[op]
    except KeyError:
        raise InvalidExpression(f"unknown unary op {op!r}") from None
    x = np.asarray(v, dtype=np.float64)
    if admits == _TENSOR and x.ndim == 0:
        raise InvalidExpression(f"{op} ({UNARY_NAMES[op]}) needs a vector or matrix")
    with np.errstate(all="ignore"):
        if admits == _ROWWISE and x.ndim == 0:
            return np.asarray(fn(x.reshape(1))[0])
        return np.asarray(fn(x))


def eval_binary(op: str, a, b):
    """Combine two branch values; a pruned side yields the other side unchanged."""
    if a is EMPTY and b is EMPTY:
        raise InvalidExpression("both branches pruned")
    if a is EMPTY:
        return b
    if b is EMPTY:
        return a
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise InvalidExpression(f"shape mismatch {a.shape} vs {b.shape}")
    with np.errstate(all="ignore"):
        if op == "g01":
            return a + b
        if op == "g02":
            return a - b
        if op == "g03":
            return a * b
        if op == "g04":
            return a / b
    raise InvalidExpression(f"unknown binary op {op!r}")


# -- genotype ------------------------------------------------------------------


@dataclass(frozen=True)
class Branch:
    kind: str
    ops: tuple[str, ...]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown operand kind {self.kind!r}")
        if not self.ops:
            raise ValueError("a branch needs at least one unary op")
        bad = [o for o in self.ops if o not in UNARY_IDS]
        if bad:
            raise ValueError(f"unknown unary ops {bad}")

    @property
    def pruned(self) -> bool:
        return PRUNE in self.ops

    def __str__(self):
        return f"{self.kind}:{','.join(self.ops)}"


@dataclass(frozen=True)
class SymbolicExpression:
    left: Branch
    right: Branch
    binary: str

    def __post_init__(self):
        if self.binary not in BINARY_IDS:
            raise ValueError(f"unknown binary op {self.binary!r}")

    @property
    def distinct_operands(self) -> bool:
        """Whether the two branches read different operand kinds (search-space rule)."""
        return self.left.kind != self.right.kind

    def __str__(self):
        return serialize(self)


def serialize(expr: SymbolicExpression) -> str:
    return f"{expr.left}|{expr.binary}|{expr.right}"


def _parse_branch(text: str, part: str, offset: int) -> Branch:
    if len(part) < 2 or part[1] != ":":
        raise ParseError("expected '<KIND>:'", text, offset + min(1, len(part)))
    if part[0] not in KINDS:
        raise ParseError(f"unknown operand kind {part[0]!r}", text, offset)
    ops, pos = [], offset + 2
    for tok in part[2:].split(","):
        if tok not in UNARY_IDS:
            raise ParseError(f"unknown unary op {tok!r}", text, pos)
        ops.append(tok)
        pos += len(tok) + 1
    return Branch(part[0], tuple(ops))


def parse(text: str) -> SymbolicExpression:
    """Inverse of :func:`serialize`.

    Both branches may read the same operand kind here; the search operators
    keep the kinds distinct, but some published proxies pair two weight sets.
    """
    parts = text.split("|")
    if len(parts) != 3:
        pos = len(text) if len(parts) < 3 else sum(len(p) + 1 for p in parts[:3]) - 1
        raise ParseError(f"expected 3 '|'-separated fields, got {len(parts)}", text, pos)
    left_s, bin_s, right_s = parts
    left = _parse_branch(text, left_s, 0)
    bin_pos = len(left_s) + 1
    if bin_s not in BINARY_IDS:
        raise ParseError(f"unknown binary op {bin_s!r}", text, bin_pos)
    right = _parse_branch(text, right_s, bin_pos + len(bin_s) + 1)
    return SymbolicExpression(left, right, bin_s)


# -- evaluation ----------------------------------------------------------------


def eval_branch(branch: Branch, value: np.ndarray):
    v = value
    for op in branch.ops:
        v = eval_unary(op, v)
        if v is EMPTY:
            return EMPTY
        if not np.all(np.isfinite(v)):
            raise InvalidExpression(f"non-finite value after {op}")
    return v


def combine_block(binary: str, lv, rv) -> float:
    """Join two branch values and reduce a non-scalar result by summation."""
    out = eval_binary(binary, lv, rv)
    total = float(np.sum(out))
    if not math.isfinite(total) or not np.all(np.isfinite(out)):
        raise InvalidExpression("non-finite block result")
    return total


def evaluate(expr: SymbolicExpression, stats: NetworkStatistics) -> float | None:
    """Score of ``expr`` summed over blocks, or ``None`` when invalid."""
    if expr.left.pruned and expr.right.pruned:
        return None
    try:
        cached: dict[str, object] = {}

        def branch_value(branch: Branch, block: int):
            if branch.kind in GLOBAL_KINDS:
                if branch.kind not in cached:
                    cached[branch.kind] = eval_branch(branch, operand(stats, branch.kind))
                return cached[branch.kind]
            return eval_branch(branch, operand(stats, branch.kind, block))

        total = 0.0
        for i in range(stats.n_blocks):
            lv = EMPTY if expr.left.pruned else branch_value(expr.left, i)
            rv = EMPTY if expr.right.pruned else branch_value(expr.right, i)
            total += combine_block(expr.binary, lv, rv)
    except InvalidExpression:
        return None
    return total if math.isfinite(total) else None


# -- search space --------------------------------------------------------------


def space_size(unary_depth: int = 1) -> int:
    """Kind pairs (unordered) x unary chains on both branches x binary ops."""
    if unary_depth < 1:
        raise ValueError("unary_depth must be >= 1")
    return math.comb(len(KINDS), 2) * len(UNARY_IDS) ** (2 * unary_depth) * len(BINARY_IDS)


def random_branch(rng: np.random.Generator, kind: str, unary_depth: int) -> Branch:
    return Branch(kind, tuple(UNARY_IDS[i] for i in rng.integers(0, len(UNARY_IDS), unary_depth)))


def random_expr(rng: np.random.Generator, unary_depth: int = 1) -> SymbolicExpression:
    """Uniform draw over genotypes with two distinct operand kinds."""
    if unary_depth < 1:
        raise ValueError("unary_depth must be >= 1")
    i, j = rng.choice(len(KINDS), size=2, replace=False)
    left = random_branch(rng, KINDS[i], unary_depth)
    right = random_branch(rng, KINDS[j], unary_depth)
    return SymbolicExpression(left, right, BINARY_IDS[rng.integers(len(BINARY_IDS))])


def enumerate_space(unary_depth: int = 1) -> Iterator[SymbolicExpression]:
    """Every genotype once, kind pairs taken in canonical order (left before right)."""
    chains = list(itertools.product(UNARY_IDS, repeat=unary_depth))
    for ka, kb in itertools.combinations(KINDS, 2):
        for ca in chains:
            for cb in chains:
                for g in BINARY_IDS:
                    yield SymbolicExpression(Branch(ka, ca), Branch(kb, cb), g)
