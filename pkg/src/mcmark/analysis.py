"""True-negative-rate comparisons, the token replacement attack and l sweeps."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import integrate

from .core import TokenSequence, WatermarkError, WatermarkParams, as_distribution, derive_partition
from .detector import detect
from .generator import generate_sequence

__all__ = [
    "etn_mcmark",
    "etn_dipmark",
    "etn_sta",
    "expected_etn_uniform",
    "closed_form_etn_moments",
    "replacement_count",
    "token_replacement_attack",
    "nested_replacement_attacks",
    "SweepResult",
    "tradeoff_sweep",
    "DEFAULT_L_VALUES",
]

DEFAULT_L_VALUES = (2, 3, 4, 5, 10, 20, 50, 100, 200, 500, 1000, 2000)


# -- expected true-negative rates -------------------------------------------------

def etn_mcmark(mass) -> float:
    """Probability a watermarked token misses its selected segment."""
    m = as_distribution(mass)
    return float(np.maximum(0.0, 1.0 / m.size - m).sum())


def _check_unit(name, x):
    if not 0.0 <= x <= 1.0:
        raise WatermarkError(f"{name} must lie in [0, 1], got {x!r}")


def etn_dipmark(p_red: float, alpha: float) -> float:
    _check_unit("p_red", p_red)
    if not 0.0 <= alpha <= 0.5:
        raise WatermarkError(f"alpha must lie in [0, 0.5], got {alpha!r}")
    return max(p_red - alpha, 0.0) + max(p_red - (1.0 - alpha), 0.0)


def etn_sta(p_red: float) -> float:
    _check_unit("p_red", p_red)
    return p_red * p_red


def _etn_function(method: str, alpha: Optional[float]):
    if method == "mcmark2":
        return (lambda p: abs(0.5 - p)), [0.5]
    if method == "sta":
        return etn_sta, []
    if method == "dipmark":
        if alpha is None:
            raise WatermarkError("dipmark needs alpha")
        return (lambda p: etn_dipmark(p, alpha)), sorted({alpha, 1.0 - alpha})
    raise WatermarkError(f"unknown method {method!r}")


def expected_etn_uniform(method: str, alpha: Optional[float] = None) -> tuple[float, float]:
    """Mean and variance of a method's E_TN when the red-list mass is Uniform[0, 1].

    Computed by adaptive quadrature with breakpoints at the hinge locations.
    ``method`` is one of ``"mcmark2"``, ``"sta"`` or ``"dipmark"``.
    """
    f, points = _etn_function(method, alpha)
    points = [x for x in points if 0.0 < x < 1.0] or None
    opts = dict(points=points, epsabs=1e-13, epsrel=1e-12, limit=200)
    m1, _ = integrate.quad(f, 0.0, 1.0, **opts)
    m2, _ = integrate.quad(lambda p: f(p) ** 2, 0.0, 1.0, **opts)
    return m1, m2 - m1 * m1


def closed_form_etn_moments(method: str, alpha: Optional[float] = None) -> tuple[float, float]:
    """Analytic counterparts of :func:`expected_etn_uniform`."""
    if method == "mcmark2":
        return 1 / 4, 1 / 48
    if method == "sta":
        return 1 / 3, 4 / 45
    if method == "dipmark":
        if alpha is None:
            raise WatermarkError("dipmark needs alpha")
        d = (alpha - 0.5) ** 2
        return d + 1 / 4, 5 / 48 - d * ((alpha + 1 / 6) ** 2 + 1 / 18)
    raise WatermarkError(f"unknown method {method!r}")


# -- token replacement attack -------------------------------------------------------

def replacement_count(epsilon: float, T: int) -> int:
    """Number of replaced positions, ``epsilon * T`` rounded half up."""
    if not 0.0 <= epsilon <= 1.0:
        raise WatermarkError(f"epsilon must lie in [0, 1], got {epsilon!r}")
    return min(T, int(math.floor(epsilon * T + 0.5)))


def _split(tokens) -> TokenSequence:
    return tokens if isinstance(tokens, TokenSequence) else TokenSequence(tokens=tokens)


def nested_replacement_attacks(tokens, epsilons: Sequence[float], vocab_size: int, rng=None):
    """Attack one sequence at several strengths with shared randomness.

    One random ordering of positions and one replacement per position are
    drawn; strength ``eps`` replaces the first ``replacement_count(eps, T)``
    positions of that ordering. Each output on its own follows the law of
    :func:`token_replacement_attack`, and stronger attacks replace a superset
    of the positions of weaker ones.

    Returns a list of ``(attacked TokenSequence, replaced positions)``.
    """
    seq = _split(tokens)
    T = len(seq)
    gen = np.random.default_rng(rng)
    counts = [replacement_count(e, T) for e in epsilons]
    if vocab_size < 2:
        if any(counts):
            warnings.warn("vocabulary has a single token; replacement attack is a no-op", RuntimeWarning)
        return [(seq, np.zeros(0, dtype=np.int64)) for _ in epsilons]
    order = gen.permutation(T)
    # orig + offset (mod N) with offset uniform on 1..N-1 is uniform over V minus orig
    offsets = gen.integers(1, vocab_size, size=T)
    out = []
    for k in counts:
        pos = np.sort(order[:k])
        new = seq.tokens.copy()
        new[pos] = (new[pos] + offsets[pos]) % vocab_size
        out.append((TokenSequence(tokens=new, prompt=seq.prompt), pos))
    return out


def token_replacement_attack(tokens, epsilon: float, vocab_size: int, rng=None, *, return_positions: bool = False):
    """Replace ``round(epsilon * T)`` random generated tokens with other token ids.

    Positions are chosen uniformly without replacement and each replacement
    is uniform over the vocabulary minus the original token. The prompt is
    left untouched.
    """
    (attacked, pos), = nested_replacement_attacks(tokens, [epsilon], vocab_size, rng)
    return (attacked, pos) if return_positions else attacked


# -- robustness / detectability sweep ----------------------------------------------

@dataclass
class SweepResult:
    """Per-(l, epsilon) detection summaries.

    Medians are taken over ``log10`` p-values so that tiny p-values never
    underflow; ``median_p_value`` is ``10 ** median_log10_p``.
    """

    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    log10_p_values: dict = field(default_factory=dict, repr=False)

    def row(self, l: int, epsilon: float) -> dict:
        for r in self.rows:
            if r["l"] == l and r["epsilon"] == epsilon:
                return r
        raise KeyError((l, epsilon))

    def series(self, epsilon: float, key: str = "median_log10_p") -> tuple[list, list]:
        """``(l values, key values)`` for one attack strength, sorted by l."""
        rows = sorted((r for r in self.rows if r["epsilon"] == epsilon), key=lambda r: r["l"])
        return [r["l"] for r in rows], [r[key] for r in rows]

    def to_jsonl(self) -> str:
        lines = [json.dumps({**r, "metadata": self.metadata}, sort_keys=True) for r in self.rows]
        return "".join(line + "\n" for line in lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        if self.rows:
            writer = csv.DictWriter(buf, fieldnames=list(self.rows[0]), lineterminator="\n")
            writer.writeheader()
            writer.writerows(self.rows)
        return buf.getvalue()


def _cell_rng(seed: int, *parts: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *parts]))


def tradeoff_sweep(
    l_values: Iterable[int],
    provider,
    params: WatermarkParams,
    T: int = 200,
    epsilons: Sequence[float] = (0.0, 0.05, 0.1, 0.2),
    trials: int = 500,
    seed: int = 0,
    fpr: float = 1e-3,
    prompt_len: int = 2,
    progress=None,
) -> SweepResult:
    """Median p-value and TPR at a theoretical FPR as functions of ``l``.

    For every ``l`` each trial generates one watermarked sequence and attacks
    it at every strength in ``epsilons`` using shared randomness (see
    :func:`nested_replacement_attacks`). ``params`` supplies the key, ``n``
    and ``p0``; its ``l`` is overridden. Values of ``l`` above the vocabulary
    size are dropped. Every (l, trial) cell derives its own random stream from
    ``seed``, so results do not depend on evaluation order.
    """
    if trials < 1:
        raise WatermarkError("trials must be >= 1")
    N = provider.vocab_size
    ls = sorted({int(l) for l in l_values if 2 <= int(l) <= N})
    eps = sorted({float(e) for e in epsilons} | {0.0})
    result = SweepResult(
        metadata={
            "provider": _describe(provider),
            "vocab_size": N,
            "n": params.n,
            "T": T,
            "trials": trials,
            "seed": seed,
            "fpr": fpr,
            "prompt_len": prompt_len,
        }
    )
    for li, l in enumerate(ls):
        p = dataclasses.replace(params, l=l)
        part = derive_partition(p.secret_key, N, l)
        logs = np.empty((len(eps), trials))
        phis = np.empty((len(eps), trials))
        for trial in range(trials):
            gen_rng = _cell_rng(seed, li, trial, 0)
            prompt = gen_rng.integers(0, N, size=prompt_len)
            rec = generate_sequence(provider, p, part, prompt=prompt, T=T, rng=gen_rng)
            attacked = nested_replacement_attacks(rec.tokens, eps, N, _cell_rng(seed, li, trial, 1))
            for ei, (seq, _) in enumerate(attacked):
                rep = detect(seq, p, part)
                logs[ei, trial] = rep.log10_p_value
                phis[ei, trial] = rep.phi
        for ei, e in enumerate(eps):
            med = float(np.median(logs[ei]))
            result.rows.append(
                {
                    "l": l,
                    "epsilon": e,
                    "median_log10_p": med,
                    "median_p_value": 10.0 ** med,
                    "tpr": float(np.mean(logs[ei] <= math.log10(fpr))),
                    "mean_hit_rate": float(phis[ei].mean() / T) if T else 0.0,
                    "trials": trials,
                }
            )
            result.log10_p_values[(l, e)] = logs[ei].copy()
        if progress is not None:
            progress(l)
    return result


def _describe(provider) -> dict:
    if dataclasses.is_dataclass(provider):
        return {"type": type(provider).__name__, **dataclasses.asdict(provider)}
    return {"type": type(provider).__name__}
