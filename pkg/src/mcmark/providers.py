"""Next-token distribution providers.

A provider is any object with a ``vocab_size`` attribute that maps the full
token history (prompt plus generated tokens) to a probability vector. It must
be deterministic in its inputs and safe to call from several threads.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from .core import InvalidParameterError, as_distribution

__all__ = ["DistributionProvider", "SyntheticLM", "StaticProvider", "BigramProvider"]


@runtime_checkable
class DistributionProvider(Protocol):
    vocab_size: int

    def __call__(self, context: Sequence[int]) -> np.ndarray: ...


VARIANTS = ("dirichlet-iid", "zipf-markov")


@dataclass(frozen=True)
class SyntheticLM:
    """Seeded stand-in for a language model.

    ``dirichlet-iid`` draws a fresh symmetric Dirichlet(``concentration``)
    vector for every distinct history. ``zipf-markov`` is an order-``order``
    Markov chain whose transition rows are Zipf(``exponent``) laws over a
    seed- and state-dependent ranking of the vocabulary. Rows are built on
    demand, which is equivalent to a fixed table without storing N**order rows.

    Defaults put the median per-step entropy near 3 bits: the Dirichlet
    concentration defaults to ``4 / vocab_size`` and the Zipf exponent to 1.8.
    """

    variant: str = "dirichlet-iid"
    vocab_size: int = 1000
    concentration: Optional[float] = None
    exponent: float = 1.8
    order: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidParameterError(f"unknown synthetic variant {self.variant!r}; expected one of {VARIANTS}")
        if self.vocab_size < 2:
            raise InvalidParameterError("vocab_size must be >= 2")
        if self.concentration is None:
            object.__setattr__(self, "concentration", 4.0 / self.vocab_size)
        if self.concentration <= 0 or self.exponent <= 0:
            raise InvalidParameterError("concentration and exponent must be positive")
        if self.order < 1:
            raise InvalidParameterError("order must be >= 1")

    def _rng(self, state: np.ndarray) -> np.random.Generator:
        h = hashlib.blake2b(digest_size=16)
        h.update(self.variant.encode())
        h.update(int(self.seed).to_bytes(8, "little", signed=True))
        h.update(np.ascontiguousarray(state, dtype="<i8").tobytes())
        return np.random.Generator(np.random.PCG64(int.from_bytes(h.digest(), "little")))

    def __call__(self, context: Sequence[int]) -> np.ndarray:
        ctx = np.asarray(context, dtype=np.int64).reshape(-1)
        if self.variant == "dirichlet-iid":
            rng = self._rng(ctx)
            p = rng.dirichlet(np.full(self.vocab_size, self.concentration))
            # tiny concentrations can underflow every gamma draw to zero
            if not np.isfinite(p).all() or p.sum() <= 0:
                p = np.zeros(self.vocab_size)
                p[rng.integers(self.vocab_size)] = 1.0
            return p / p.sum()
        state = ctx[max(0, ctx.size - self.order):]
        rng = self._rng(state)
        return self._zipf_weights()[rng.permutation(self.vocab_size)]

    def _zipf_weights(self) -> np.ndarray:
        w = np.arange(1, self.vocab_size + 1, dtype=np.float64) ** -self.exponent
        return w / w.sum()


class StaticProvider:
    """Returns the same distribution for every context."""

    def __init__(self, probs):
        self.probs = as_distribution(probs, normalize=True)
        self.probs.setflags(write=False)
        self.vocab_size = self.probs.size

    def __call__(self, context):
        return self.probs


class BigramProvider:
    """First-order table: row ``k`` is the distribution after token ``k``.

    The empty history uses the average row.
    """

    def __init__(self, table):
        t = np.asarray(table, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise InvalidParameterError(f"bigram table must be square, got shape {t.shape}")
        if np.any(t < 0) or np.any(t.sum(axis=1) <= 0):
            raise InvalidParameterError("bigram rows must be non-negative with positive mass")
        self.table = t / t.sum(axis=1, keepdims=True)
        self.table.setflags(write=False)
        self.start = self.table.mean(axis=0)
        self.vocab_size = t.shape[1]

    def __call__(self, context):
        if len(context) == 0:
            return self.start
        return self.table[int(context[-1])]
