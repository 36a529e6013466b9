"""Model-free detection: count segment hits and compute an exact binomial p-value."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .core import Partition, TokenSequence, WatermarkError, WatermarkParams, select_channel

__all__ = [
    "DetectionReport",
    "score_sequence",
    "log_binomial_tail_pvalue",
    "binomial_tail_pvalue",
    "detect",
]


@dataclass(frozen=True)
class DetectionReport:
    T: int
    phi: int
    p_value: float
    log10_p_value: float
    hits: np.ndarray
    watermarked: bool

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "phi": self.phi,
            "p_value": self.p_value,
            "log10_p_value": self.log10_p_value,
            "watermarked": self.watermarked,
            "hits": self.hits.astype(int).tolist(),
        }


def score_sequence(tokens, params: WatermarkParams, part: Partition) -> tuple[int, np.ndarray]:
    """Recompute each position's channel and flag tokens inside its segment.

    Prompt tokens serve only as context. Returns ``(phi, hits)``.
    """
    seq = tokens if isinstance(tokens, TokenSequence) else TokenSequence(tokens=tokens)
    if part.l != params.l:
        raise WatermarkError(f"partition has {part.l} segments but params.l = {params.l}")
    seq.validate(part.vocab_size)
    full = seq.full
    start = seq.prompt.size
    n = params.n
    hits = np.empty(len(seq), dtype=bool)
    for t in range(len(seq)):
        pos = start + t
        i = select_channel(params, full[max(0, pos - n):pos])
        hits[t] = part.assignment[full[pos]] == i
    return int(hits.sum()), hits


def _log_pmf(i: np.ndarray, T: int, log_p: float, log_q: float) -> np.ndarray:
    return gammaln(T + 1) - gammaln(i + 1) - gammaln(T - i + 1) + i * log_p + (T - i) * log_q


def log_binomial_tail_pvalue(phi: int, T: int, l: int) -> float:
    """Natural log of ``P(Bin(T, 1/l) >= phi)``.

    Above the mean the upper tail is summed directly with log-sum-exp; at or
    below it the complement of the lower tail is used instead.
    """
    phi, T = int(phi), int(T)
    if T < 0 or phi < 0 or phi > T:
        raise WatermarkError(f"need 0 <= phi <= T, got phi={phi}, T={T}")
    if l < 2:
        raise WatermarkError(f"l must be >= 2, got {l}")
    if phi == 0:
        return 0.0
    log_p = -math.log(l)
    log_q = math.log1p(-1.0 / l)
    if phi > T / l:
        i = np.arange(phi, T + 1, dtype=np.float64)
        return float(logsumexp(_log_pmf(i, T, log_p, log_q)))
    i = np.arange(0, phi, dtype=np.float64)
    lower = float(np.exp(logsumexp(_log_pmf(i, T, log_p, log_q))))
    return math.log1p(-min(lower, 1.0))


def binomial_tail_pvalue(phi: int, T: int, l: int) -> float:
    """Exact ``P(Bin(T, 1/l) >= phi)``, the theoretical false positive rate."""
    return math.exp(log_binomial_tail_pvalue(phi, T, l))


def detect(tokens, params: WatermarkParams, part: Partition) -> DetectionReport:
    phi, hits = score_sequence(tokens, params, part)
    T = hits.size
    log_p = log_binomial_tail_pvalue(phi, T, params.l)
    p = math.exp(log_p)
    return DetectionReport(
        T=T,
        phi=phi,
        p_value=p,
        log10_p_value=log_p / math.log(10),
        hits=hits,
        watermarked=p <= params.p0,
    )
