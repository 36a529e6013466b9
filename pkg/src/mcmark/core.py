"""Shared types, keyed pseudorandom primitives and vocabulary partitioning."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

__all__ = [
    "WatermarkError",
    "InvalidParameterError",
    "DistributionError",
    "WatermarkParams",
    "Partition",
    "TokenSequence",
    "as_distribution",
    "prf_uniform",
    "derive_partition",
    "select_channel",
    "context_window",
]

DIST_ATOL = 1e-9
MIN_KEY_BYTES = 16
# blake2b accepts keys up to 64 bytes; longer keys are pre-hashed.
_BLAKE_MAX_KEY = 64

TAG_PARTITION = b"part"
TAG_CHANNEL = b"chan"


class WatermarkError(ValueError):
    """Base class for contract violations raised by this package."""


class InvalidParameterError(WatermarkError):
    pass


class DistributionError(WatermarkError):
    pass


def as_distribution(probs, *, normalize: bool = False, atol: float = DIST_ATOL) -> np.ndarray:
    """Validate a probability vector and return it as a float64 array.

    With ``normalize=True`` the vector only has to be non-negative with a
    positive finite sum; it is rescaled to sum to one. Otherwise entries must
    already sum to one within ``atol``.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise DistributionError(f"expected a non-empty 1-D probability vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise DistributionError("probability vector contains non-finite entries")
    if np.any(p < 0):
        raise DistributionError("probability vector contains negative entries")
    total = p.sum()
    if normalize:
        if total <= 0:
            raise DistributionError("probability vector has zero total mass")
        return p / total
    if abs(total - 1.0) > atol:
        raise DistributionError(f"probabilities sum to {total!r}, not 1")
    return p


@dataclass(frozen=True)
class WatermarkParams:
    """Secret key and knobs shared by generator and detector.

    Parameters
    ----------
    secret_key : bytes
        At least 16 bytes.
    l : int
        Number of distribution channels (and vocabulary segments).
    n : int
        Width of the preceding n-gram hashed into the watermark key.
    p0 : float
        Detection threshold on the p-value.
    """

    secret_key: bytes
    l: int = 20
    n: int = 2
    p0: float = 0.01

    def __post_init__(self):
        if not isinstance(self.secret_key, (bytes, bytearray)):
            raise InvalidParameterError("secret_key must be bytes")
        if len(self.secret_key) < MIN_KEY_BYTES:
            raise InvalidParameterError(f"secret_key must be at least {MIN_KEY_BYTES} bytes")
        object.__setattr__(self, "secret_key", bytes(self.secret_key))
        if int(self.l) != self.l or self.l < 2:
            raise InvalidParameterError(f"l must be an integer >= 2, got {self.l!r}")
        if int(self.n) != self.n or self.n < 1:
            raise InvalidParameterError(f"n must be an integer >= 1, got {self.n!r}")
        if not 0.0 < self.p0 < 1.0:
            raise InvalidParameterError(f"p0 must lie in (0, 1), got {self.p0!r}")

    @classmethod
    def from_hex(cls, key_hex: str, **kwargs) -> "WatermarkParams":
        try:
            key = bytes.fromhex(key_hex.strip())
        except ValueError as exc:
            raise InvalidParameterError(f"secret key is not valid hex: {exc}") from None
        return cls(secret_key=key, **kwargs)

    def check_vocab(self, vocab_size: int) -> None:
        if self.l > vocab_size:
            raise InvalidParameterError(f"l={self.l} exceeds vocabulary size {vocab_size}")


@dataclass(frozen=True, eq=False)
class Partition:
    """Assignment of every token id to one of ``l`` segments."""

    l: int
    assignment: np.ndarray
    segment_sizes: np.ndarray

    def __post_init__(self):
        self.assignment.setflags(write=False)
        self.segment_sizes.setflags(write=False)

    @property
    def vocab_size(self) -> int:
        return self.assignment.size

    def segment(self, j: int) -> np.ndarray:
        """Token ids of segment ``j`` in ascending order."""
        return np.flatnonzero(self.assignment == j)

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return self.l == other.l and np.array_equal(self.assignment, other.assignment)

    def __hash__(self):
        return hash((self.l, self.assignment.tobytes()))


@dataclass(frozen=True)
class TokenSequence:
    """Generated token ids plus the prompt they were conditioned on.

    Only ``tokens`` is scored by the detector; the prompt is context.
    """

    tokens: np.ndarray
    prompt: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        object.__setattr__(self, "tokens", _as_ids(self.tokens))
        object.__setattr__(self, "prompt", _as_ids(self.prompt))

    def __len__(self):
        return self.tokens.size

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([self.prompt, self.tokens])

    def validate(self, vocab_size: int) -> None:
        for name, ids in (("prompt", self.prompt), ("tokens", self.tokens)):
            if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
                raise InvalidParameterError(f"{name} contain ids outside [0, {vocab_size})")


def _as_ids(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.int64).reshape(-1)
    a.setflags(write=False)
    return a


def _mac_key(secret_key: bytes) -> bytes:
    if len(secret_key) > _BLAKE_MAX_KEY:
        return hashlib.blake2b(secret_key, digest_size=_BLAKE_MAX_KEY).digest()
    return secret_key


def _prf_digest(secret_key: bytes, domain_tag: bytes, payload: bytes) -> bytes:
    # length-prefixed tag keeps (tag, payload) pairs unambiguous
    msg = len(domain_tag).to_bytes(2, "little") + domain_tag + payload
    return hashlib.blake2b(msg, key=_mac_key(secret_key), digest_size=32).digest()


def prf_uniform(secret_key: bytes, domain_tag: bytes, payload: bytes, modulus: int) -> int:
    """Keyed pseudorandom integer in ``[0, modulus)``.

    A 256-bit keyed BLAKE2b output is reduced modulo ``modulus``, so the
    reduction bias is below ``modulus / 2**256``.
    """
    if modulus < 1:
        raise WatermarkError(f"modulus must be >= 1, got {modulus}")
    digest = _prf_digest(secret_key, domain_tag, payload)
    return int.from_bytes(digest, "little") % modulus


@lru_cache(maxsize=64)
def _keyed_permutation(secret_key: bytes, vocab_size: int) -> np.ndarray:
    prefix = vocab_size.to_bytes(8, "little")
    ranks = [
        _prf_digest(secret_key, TAG_PARTITION, prefix + tok.to_bytes(8, "little"))
        for tok in range(vocab_size)
    ]
    # ties between 256-bit digests are not a practical concern; break by id anyway
    order = sorted(range(vocab_size), key=lambda tok: (ranks[tok], tok))
    return np.asarray(order, dtype=np.int64)


@lru_cache(maxsize=64)
def _cached_partition(secret_key: bytes, vocab_size: int, l: int) -> Partition:
    perm = _keyed_permutation(secret_key, vocab_size)
    base, extra = divmod(vocab_size, l)
    sizes = np.full(l, base, dtype=np.int64)
    sizes[:extra] += 1
    block_of_rank = np.repeat(np.arange(l, dtype=np.int64), sizes)
    assignment = np.empty(vocab_size, dtype=np.int64)
    assignment[perm] = block_of_rank
    return Partition(l=l, assignment=assignment, segment_sizes=sizes)


def derive_partition(secret_key: bytes, vocab_size: int, l: int) -> Partition:
    """Split ``vocab_size`` token ids into ``l`` near-equal keyed segments.

    Token ids are ordered by a keyed hash and the ordering is cut into ``l``
    contiguous blocks; the first ``vocab_size % l`` blocks get one extra
    token. The result does not depend on the generation position.
    """
    if int(l) != l or l < 2:
        raise InvalidParameterError(f"l must be an integer >= 2, got {l!r}")
    if l > vocab_size:
        raise InvalidParameterError(f"l={l} exceeds vocabulary size {vocab_size}")
    return _cached_partition(bytes(secret_key), int(vocab_size), int(l))


def context_window(history: Sequence[int], n: int) -> np.ndarray:
    """Last ``min(n, len(history))`` token ids of ``history``."""
    h = np.asarray(history, dtype=np.int64).reshape(-1)
    return h[max(0, h.size - n):]


def _context_payload(context) -> bytes:
    ids = np.asarray(context, dtype="<i8").reshape(-1)
    return ids.size.to_bytes(4, "little") + ids.tobytes()


def select_channel(params: WatermarkParams, context: Sequence[int]) -> int:
    """Channel index for the step following ``context``.

    ``context`` is the preceding n-gram; shorter contexts (including empty)
    are hashed with their length so they never collide with full n-grams.
    """
    ctx = context_window(context, params.n)
    return prf_uniform(params.secret_key, TAG_CHANNEL, _context_payload(ctx), params.l)
