"""Synthetic next-token task: token streams from a fixed second-order Markov chain."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arch import Batch


@dataclass(frozen=True)
class MarkovTask:
    vocab_size: int = 16
    seq_len: int = 12
    seed: int = 0
    concentration: float = 0.2

    def transitions(self) -> np.ndarray:
        """``P[a, b, c]``: probability of token c after the pair (a, b)."""
        rng = np.random.default_rng([self.seed, 0x4D41524B])
        v = self.vocab_size
        return rng.dirichlet(np.full(v, self.concentration), size=(v, v))

    def sample(self, n: int, seed: int) -> Batch:
        """``n`` windows of ``seq_len`` tokens plus the token that follows each."""
        p = self.transitions()
        cdf = np.cumsum(p, axis=-1)
        cdf[..., -1] = 1.0
        rng = np.random.default_rng(seed)
        length = self.seq_len + 1
        seqs = np.empty((n, length), dtype=np.int64)
        seqs[:, :2] = rng.integers(0, self.vocab_size, size=(n, 2))
        u = rng.random((n, length))
        for t in range(2, length):
            rows = cdf[seqs[:, t - 2], seqs[:, t - 1]]
            seqs[:, t] = (u[:, t, None] > rows).sum(axis=1)
        return Batch(tokens=seqs[:, :-1].copy(), targets=seqs[:, -1].copy())

    def to_json(self) -> dict:
        return {"vocab_size": self.vocab_size, "seq_len": self.seq_len, "seed": self.seed,
                "order": 2, "concentration": self.concentration}

    @classmethod
    def from_json(cls, obj: dict) -> "MarkovTask":
        return cls(int(obj["vocab_size"]), int(obj["seq_len"]), int(obj["seed"]),
                   float(obj["concentration"]))
