"""Optimal multi-channel reweighting of a next-token distribution.

Given segment masses ``m`` over ``l`` vocabulary segments, channel ``i`` puts
mass ``min(1, l*m[i])`` on its own segment and spreads the shortfall over the
overweight segments, so that the uniform mixture of all channels reproduces
the original distribution exactly.
"""

from __future__ import annotations

import numpy as np

from .core import DistributionError, Partition, WatermarkError, as_distribution

__all__ = [
    "segment_mass",
    "build_channel_matrix",
    "channel_matrix_row",
    "channel_distribution",
    "all_channel_distributions",
    "diagonal_objective",
]

_DRIFT_TOL = 1e-12


def segment_mass(dist, part: Partition) -> np.ndarray:
    """Total probability of each segment, accumulated in ascending token id."""
    p = as_distribution(dist)
    if p.size != part.vocab_size:
        raise WatermarkError(
            f"distribution has {p.size} entries but partition covers {part.vocab_size} tokens"
        )
    return np.bincount(part.assignment, weights=p, minlength=part.l)


def _check_mass(mass) -> np.ndarray:
    m = np.asarray(mass, dtype=np.float64)
    if m.ndim != 1 or m.size < 2:
        raise WatermarkError(f"segment masses must be a vector of length >= 2, got shape {m.shape}")
    return as_distribution(m)


def build_channel_matrix(mass) -> np.ndarray:
    """l x l matrix whose entry (i, j) is the mass channel i puts on segment j.

    Rows sum to one, column j sums to ``l * mass[j]`` and the diagonal is
    ``min(1, l * mass[i])``, which maximises the trace under those
    constraints. When every mass equals ``1/l`` the result is the identity.
    """
    m = _check_mass(mass)
    l = m.size
    scaled = l * m
    deficit = np.maximum(1.0 - scaled, 0.0)
    surplus = np.maximum(scaled - 1.0, 0.0)
    denom = deficit.sum()
    if denom > 0.0:
        matrix = np.outer(deficit, surplus) / denom
    else:
        # every mass is exactly 1/l: the off-diagonal formula is 0/0
        matrix = np.zeros((l, l))
    # deficit[i] * surplus[i] == 0, so overwriting the diagonal loses nothing
    np.fill_diagonal(matrix, np.minimum(1.0, scaled))
    return matrix


def channel_matrix_row(mass, i: int) -> np.ndarray:
    """Row ``i`` of :func:`build_channel_matrix` in O(l), bit-identical to it."""
    m = _check_mass(mass)
    l = m.size
    if not 0 <= i < l:
        raise WatermarkError(f"channel index {i} out of range [0, {l})")
    scaled = l * m
    deficit_i = max(1.0 - scaled[i], 0.0)
    surplus = np.maximum(scaled - 1.0, 0.0)
    denom = np.maximum(1.0 - scaled, 0.0).sum()
    row = deficit_i * surplus / denom if denom > 0.0 else np.zeros(l)
    row[i] = min(1.0, scaled[i])
    return row


def diagonal_objective(mass) -> float:
    """Upper bound ``sum_i min(1, l*mass[i])`` on the channel-matrix trace."""
    m = _check_mass(mass)
    return float(np.minimum(1.0, m.size * m).sum())


def _scale_factors(matrix_row: np.ndarray, mass: np.ndarray) -> np.ndarray:
    factors = np.zeros_like(mass)
    nz = mass > 0
    factors[nz] = matrix_row[nz] / mass[nz]
    return factors


def _tidy(q: np.ndarray) -> np.ndarray:
    np.maximum(q, 0.0, out=q)
    total = q.sum()
    if total <= 0:
        raise DistributionError("channel distribution has no mass")
    if abs(total - 1.0) > _DRIFT_TOL:
        q /= total
    return q


def channel_distribution(dist, part: Partition, matrix, i: int, *, mass=None) -> np.ndarray:
    """Token distribution of channel ``i``.

    Each token in segment j is scaled by ``matrix[i, j] / mass[j]``; tokens of
    a zero-mass segment get probability zero.
    """
    p = as_distribution(dist)
    if not 0 <= i < part.l:
        raise WatermarkError(f"channel index {i} out of range [0, {part.l})")
    m = segment_mass(p, part) if mass is None else np.asarray(mass, dtype=np.float64)
    row = np.asarray(matrix, dtype=np.float64)[i]
    factors = _scale_factors(row, m)
    return _tidy(p * factors[part.assignment])


def all_channel_distributions(dist, part: Partition) -> np.ndarray:
    """All ``l`` channel distributions stacked as an (l, N) array."""
    p = as_distribution(dist)
    m = segment_mass(p, part)
    matrix = build_channel_matrix(m)
    inv = np.zeros_like(m)
    inv[m > 0] = 1.0 / m[m > 0]
    factors = matrix * inv[None, :]
    out = p[None, :] * factors[:, part.assignment]
    np.maximum(out, 0.0, out=out)
    totals = out.sum(axis=1, keepdims=True)
    drift = np.abs(totals - 1.0) > _DRIFT_TOL
    return np.where(drift, out / totals, out)
