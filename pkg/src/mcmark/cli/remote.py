"""HTTP client for a remote next-token distribution service.

Wire format: POST ``{"context": [ids], "vocab_size": N}``; the response body is
``{"probs": [...]}`` or ``{"logprobs": [...]}`` with exactly one key present.
"""

from __future__ import annotations

import json
import logging
import time
import urllib.error
import urllib.request

import numpy as np

log = logging.getLogger(__name__)

__all__ = ["ProviderError", "HttpProvider", "parse_distribution_response"]


class ProviderError(RuntimeError):
    """The provider could not be reached or answered with something unusable."""


def parse_distribution_response(body: bytes, vocab_size: int) -> np.ndarray:
    try:
        payload = json.loads(body)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ProviderError(f"response is not JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise ProviderError("response must be a JSON object")
    present = [k for k in ("probs", "logprobs") if k in payload]
    if len(present) != 1:
        raise ProviderError('response must contain exactly one of "probs" or "logprobs"')
    key = present[0]
    try:
        values = np.asarray(payload[key], dtype=np.float64)
    except (TypeError, ValueError):
        raise ProviderError(f'"{key}" must be a list of numbers') from None
    if values.shape != (vocab_size,):
        raise ProviderError(f'"{key}" has shape {values.shape}, expected ({vocab_size},)')
    if key == "logprobs":
        if np.any(np.isnan(values)) or np.any(values == np.inf) or not np.any(np.isfinite(values)):
            raise ProviderError("logprobs must be finite or -inf, with at least one finite entry")
        p = np.exp(values - values[np.isfinite(values)].max())
    else:
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ProviderError("probs must be finite and non-negative")
        if abs(values.sum() - 1.0) > 1e-6:
            raise ProviderError(f"probs sum to {values.sum()!r}")
        p = values
    return p / p.sum()


class HttpProvider:
    """Distribution provider backed by an HTTP endpoint.

    Connection failures, timeouts and 5xx answers are retried up to
    ``retries`` times with exponential backoff; anything else fails at once.
    """

    def __init__(self, url: str, vocab_size: int, *, timeout: float = 10.0, retries: int = 3, backoff: float = 0.1):
        self.url = url
        self.vocab_size = int(vocab_size)
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff

    def __call__(self, context):
        data = json.dumps({"context": [int(t) for t in context], "vocab_size": self.vocab_size}).encode()
        last = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            req = urllib.request.Request(
                self.url, data=data, headers={"Content-Type": "application/json"}, method="POST"
            )
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    body = resp.read()
            except urllib.error.HTTPError as exc:
                if exc.code < 500:
                    raise ProviderError(f"provider answered HTTP {exc.code}") from None
                last = f"HTTP {exc.code}"
            except (urllib.error.URLError, OSError) as exc:
                last = f"transport error: {getattr(exc, 'reason', exc)}"
            else:
                return parse_distribution_response(body, self.vocab_size)
            log.warning("provider request failed (%s), attempt %d", last, attempt + 1)
        raise ProviderError(f"provider failed after {self.retries + 1} attempts: {last}")

    def __repr__(self):
        return f"HttpProvider({self.url!r}, vocab_size={self.vocab_size})"
