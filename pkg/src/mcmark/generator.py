"""Watermarked and plain sampling against a distribution provider."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .channels import channel_distribution, channel_matrix_row, segment_mass
from .core import (
    Partition,
    TokenSequence,
    WatermarkError,
    WatermarkParams,
    as_distribution,
    select_channel,
)
from .providers import DistributionProvider

__all__ = [
    "GenerationRecord",
    "sample_token",
    "sample_from_channel",
    "watermarked_next_token",
    "generate_sequence",
    "unwatermarked_sequence",
]


@dataclass(frozen=True)
class GenerationRecord:
    tokens: TokenSequence
    channels: np.ndarray
    hits: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        if not (len(self.tokens) == self.channels.size == self.hits.size):
            raise WatermarkError("generation record fields have mismatched lengths")

    @property
    def hit_count(self) -> int:
        return int(self.hits.sum())


def sample_token(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw over ascending token ids using one uniform."""
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    return min(int(np.searchsorted(cdf, u, side="right")), probs.size - 1)


def sample_from_channel(dist, part: Partition, i: int, rng: np.random.Generator) -> int:
    """Draw one token from channel ``i`` of ``dist``."""
    mass = segment_mass(dist, part)
    if not 0 <= i < part.l:
        raise WatermarkError(f"channel index {i} out of range [0, {part.l})")
    # only row i is needed; a one-row matrix keeps channel_distribution's indexing
    q = channel_distribution(dist, part, channel_matrix_row(mass, i)[None, :], 0, mass=mass)
    return sample_token(q, rng)


def _check_part(provider, params: WatermarkParams, part: Partition) -> None:
    if part.l != params.l:
        raise WatermarkError(f"partition has {part.l} segments but params.l = {params.l}")
    if part.vocab_size != provider.vocab_size:
        raise WatermarkError(
            f"partition covers {part.vocab_size} tokens but provider vocabulary is {provider.vocab_size}"
        )


def watermarked_next_token(
    provider: DistributionProvider,
    params: WatermarkParams,
    part: Partition,
    context: Sequence[int],
    rng: np.random.Generator,
) -> tuple[int, int]:
    """Sample one watermarked token; returns ``(token, channel)``."""
    p = as_distribution(provider(context))
    if p.size != part.vocab_size:
        raise WatermarkError(f"provider returned {p.size} probabilities, expected {part.vocab_size}")
    i = select_channel(params, context)
    return sample_from_channel(p, part, i, rng), i


def generate_sequence(
    provider: DistributionProvider,
    params: WatermarkParams,
    part: Partition,
    prompt=(),
    T: int = 200,
    rng=None,
) -> GenerationRecord:
    """Generate ``T`` watermarked tokens after ``prompt``.

    ``rng`` may be a seed or a ``numpy.random.Generator``; an integer seed is
    stored on the record.
    """
    if T < 0:
        raise WatermarkError(f"T must be >= 0, got {T}")
    _check_part(provider, params, part)
    seed = int(rng) if isinstance(rng, (int, np.integer)) else None
    gen = np.random.default_rng(rng)
    prompt = TokenSequence(tokens=prompt).tokens
    history = list(int(t) for t in prompt)
    channels = np.empty(T, dtype=np.int64)
    hits = np.empty(T, dtype=bool)
    for t in range(T):
        tok, i = watermarked_next_token(provider, params, part, history, gen)
        history.append(tok)
        channels[t] = i
        hits[t] = part.assignment[tok] == i
    seq = TokenSequence(tokens=history[len(prompt):], prompt=prompt)
    return GenerationRecord(tokens=seq, channels=channels, hits=hits, seed=seed)


def unwatermarked_sequence(provider: DistributionProvider, prompt=(), T: int = 200, rng=None) -> TokenSequence:
    """Plain ancestral sampling from ``provider``."""
    if T < 0:
        raise WatermarkError(f"T must be >= 0, got {T}")
    gen = np.random.default_rng(rng)
    prompt = TokenSequence(tokens=prompt).tokens
    history = [int(t) for t in prompt]
    for _ in range(T):
        history.append(sample_token(as_distribution(provider(history)), gen))
    return TokenSequence(tokens=history[len(prompt):], prompt=prompt)
