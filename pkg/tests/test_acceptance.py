"""Exit criteria for the package, one test per criterion.

Every criterion prints a PASS/FAIL line in the pytest terminal summary.
Seeds are fixed; tolerances are the stated ones.
"""

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats
from scipy.optimize import linprog

from mcmark.analysis import (
    closed_form_etn_moments,
    expected_etn_uniform,
    token_replacement_attack,
    tradeoff_sweep,
)
from mcmark.channels import build_channel_matrix, channel_distribution, diagonal_objective, segment_mass
from mcmark.core import WatermarkParams, derive_partition
from mcmark.detector import binomial_tail_pvalue, detect, log_binomial_tail_pvalue, score_sequence
from mcmark.generator import generate_sequence, unwatermarked_sequence
from mcmark.providers import SyntheticLM

KEY = bytes.fromhex("6d636d61726b2d616363657074616e63652d6b6579")


def _entropy_bits(p):
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


# 1 ---------------------------------------------------------------------------------

def test_c01_exact_unbiasedness(criterion):
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(1000):
        l = int(rng.integers(2, 65))
        N = int(rng.integers(l, 8 * l + 1))
        key = rng.bytes(16)
        conc = float(rng.choice([0.01, 0.1, 1.0, 10.0]))
        p = rng.dirichlet(np.full(N, conc))
        p = p / p.sum()
        part = derive_partition(key, N, l)
        mass = segment_mass(p, part)
        matrix = build_channel_matrix(mass)
        mix = sum(channel_distribution(p, part, matrix, i, mass=mass) for i in range(l)) / l
        worst = max(worst, float(np.abs(mix - p).max()))
    ok = worst <= 1e-12
    criterion("C1 exact unbiasedness", ok, f"max |mixture - dist| over 1000 triples = {worst:.2e} (tol 1e-12)")
    assert ok


# 2 ---------------------------------------------------------------------------------

def _lp_optimum(mass):
    l = len(mass)
    A_eq, b_eq = [], []
    for i in range(l):
        row = np.zeros((l, l))
        row[i, :] = 1
        A_eq.append(row.ravel())
        b_eq.append(1.0)
    for j in range(l):
        col = np.zeros((l, l))
        col[:, j] = 1
        A_eq.append(col.ravel())
        b_eq.append(l * mass[j])
    res = linprog(-np.eye(l).ravel(), A_eq=np.array(A_eq), b_eq=b_eq, bounds=(0, 1), method="highs")
    assert res.status == 0
    return -res.fun


def test_c02_channel_matrix_optimality(criterion):
    rng = np.random.default_rng(202)
    worst_constraint = worst_objective = 0.0
    for _ in range(200):
        l = int(rng.integers(2, 7))
        mass = rng.dirichlet(np.full(l, float(rng.choice([0.2, 1.0, 5.0]))))
        mass = mass / mass.sum()
        m = build_channel_matrix(mass)
        viol = max(
            float(np.abs(m.sum(axis=1) - 1).max()),
            float(np.abs(m.sum(axis=0) - l * mass).max()),
            float(max(0.0, -m.min(), m.max() - 1)),
        )
        worst_constraint = max(worst_constraint, viol)
        worst_objective = max(worst_objective, abs(np.trace(m) - _lp_optimum(mass)))
        assert np.trace(m) == pytest.approx(diagonal_objective(mass), abs=1e-12)
    ok = worst_constraint <= 1e-10 and worst_objective <= 1e-8
    criterion(
        "C2 channel matrix feasibility/optimality",
        ok,
        f"max constraint violation {worst_constraint:.2e} (tol 1e-10), max |trace - LP optimum| {worst_objective:.2e} (tol 1e-8)",
    )
    assert ok


# 3 ---------------------------------------------------------------------------------

def test_c03_binary_closed_form(criterion):
    m = build_channel_matrix([0.3, 0.7])
    err = float(np.abs(m - np.array([[0.6, 0.4], [0.0, 1.0]])).max())
    ok = err <= 1e-15
    criterion("C3 binary example", ok, f"matrix {m.tolist()}, max error {err:.1e} (tol 1e-15)")
    assert ok


# 4 ---------------------------------------------------------------------------------

def _exact_tails(T, l):
    terms = [math.comb(T, i) * (l - 1) ** (T - i) for i in range(T + 1)]
    tails = list(itertools.accumulate(reversed(terms)))[::-1]
    den = l**T
    return [Fraction(t, den) for t in tails]


def _log_fraction(f: Fraction) -> float:
    return math.log(f.numerator) - math.log(f.denominator)


def test_c04_pvalue_exactness(criterion):
    worst = worst_log = 0.0
    for l in (2, 5, 20, 100):
        for T in range(1, 201):
            tails = _exact_tails(T, l)
            for phi in range(T + 1):
                exact = float(tails[phi])
                if exact >= 1e-300:
                    got = binomial_tail_pvalue(phi, T, l)
                    worst = max(worst, abs(got - exact) / exact)
                else:
                    # below float range: relative error of the value is the log error
                    err = abs(log_binomial_tail_pvalue(phi, T, l) - _log_fraction(tails[phi]))
                    worst_log = max(worst_log, err)
    # 20**-231 is about 3e-301
    tiny_exact = float(Fraction(1, 20**231))
    tiny = binomial_tail_pvalue(231, 231, 20)
    tiny_rel = abs(tiny - tiny_exact) / tiny_exact
    ok = worst <= 1e-9 and worst_log <= 1e-9 and tiny > 0 and tiny_rel <= 1e-9
    criterion(
        "C4 exact binomial tail",
        ok,
        f"max relative error on grid {worst:.2e} (tol 1e-9), {worst_log:.1e} in log space below 1e-300; "
        f"P(Bin(231,1/20)>=231) = {tiny:.4e}, rel err {tiny_rel:.1e}",
    )
    assert ok


# 5 ---------------------------------------------------------------------------------

def test_c05_guaranteed_fpr(criterion):
    N, T, l, trials = 1000, 200, 20, 10_000
    params = WatermarkParams(KEY, l=l)
    part = derive_partition(KEY, N, l)
    prov = SyntheticLM(vocab_size=N, seed=505)
    rng = np.random.default_rng(505)
    pvals = np.empty(trials)
    for k in range(trials):
        prompt = rng.integers(0, N, size=2)
        seq = unwatermarked_sequence(prov, prompt, T, rng)
        pvals[k] = detect(seq, params, part).p_value
    rate_01 = float(np.mean(pvals <= 0.01))
    rate_001 = float(np.mean(pvals <= 0.001))
    size_01 = max(stats.binom.sf(k - 1, T, 1 / l) for k in range(T + 1) if stats.binom.sf(k - 1, T, 1 / l) <= 0.01)
    ok = 0.006 <= rate_01 <= 0.014 and 0.0003 <= rate_001 <= 0.0023
    criterion(
        "C5 guaranteed FPR",
        ok,
        f"positive rate {rate_01:.4f} at p0=0.01 (target [0.006, 0.014]; exact attainable size {size_01:.6f}), "
        f"{rate_001:.4f} at p0=0.001 (target [0.0003, 0.0023])",
    )
    assert ok


# 6 ---------------------------------------------------------------------------------

def test_c06_detection_power(criterion):
    N, T, l, trials = 1000, 200, 20, 1000
    params = WatermarkParams(KEY, l=l, p0=0.01)
    part = derive_partition(KEY, N, l)
    prov = SyntheticLM(vocab_size=N, seed=606)
    rng = np.random.default_rng(606)
    entropy = np.median([_entropy_bits(prov(rng.integers(0, N, size=3))) for _ in range(500)])
    logs, decisions = [], []
    for k in range(trials):
        prompt = rng.integers(0, N, size=2)
        rec = generate_sequence(prov, params, part, prompt=prompt, T=T, rng=rng)
        rep = detect(rec.tokens, params, part)
        logs.append(rep.log10_p_value)
        decisions.append(rep.watermarked)
    tpr = float(np.mean(decisions))
    med = float(np.median(logs))
    ok = tpr >= 0.95 and med <= -10
    criterion(
        "C6 detection power",
        ok,
        f"median step entropy {entropy:.2f} bits; TPR {tpr:.3f} at FPR 1% (need >= 0.95); "
        f"median p-value 1e{med:.1f} (need <= 1e-10)",
    )
    assert ok


# 7 ---------------------------------------------------------------------------------

def test_c07_expected_tn_rates(criterion):
    errs = []
    for method, alpha in [("mcmark2", None), ("sta", None)] + [("dipmark", a) for a in (0.3, 0.4, 0.5)]:
        mean, var = expected_etn_uniform(method, alpha)
        cmean, cvar = closed_form_etn_moments(method, alpha)
        errs.append(abs(mean - cmean))
        if method != "dipmark":
            errs.append(abs(var - cvar))
    mc, mc_var = expected_etn_uniform("mcmark2")
    sta, sta_var = expected_etn_uniform("sta")
    anchors = [abs(mc - 1 / 4), abs(mc_var - 1 / 48), abs(sta - 1 / 3), abs(sta_var - 4 / 45)]
    ordering = all(mc <= expected_etn_uniform("dipmark", a)[0] for a in (0.3, 0.4, 0.5)) and mc < sta
    worst = max(errs + anchors)
    ok = worst <= 1e-8 and ordering
    criterion(
        "C7 expected true-negative rates",
        ok,
        f"max |quadrature - closed form| {worst:.1e} (tol 1e-8); mcmark2 {mc:.6f}/{mc_var:.6f}, "
        f"sta {sta:.6f}/{sta_var:.6f}; ordering holds: {ordering}",
    )
    assert ok


# 8 ---------------------------------------------------------------------------------

def test_c08_tradeoff_shape(criterion):
    N = 2000
    prov = SyntheticLM(vocab_size=N, seed=808)
    params = WatermarkParams(KEY)
    l_values = [2, 5, 20, 200, 2000]
    eps = [0.0, 0.05, 0.1, 0.2]
    res = tradeoff_sweep(l_values, prov, params, T=200, epsilons=eps, trials=500, seed=808, fpr=1e-3)
    clean = [res.row(l, 0.0)["median_log10_p"] for l in l_values]
    k = int(np.argmin(clean))
    valley = 0 < k < len(l_values) - 1 and all(a > b for a, b in zip(clean[:k], clean[1 : k + 1])) and all(
        a < b for a, b in zip(clean[k:], clean[k + 1 :])
    )
    strict = {}
    for l in l_values:
        series = [res.row(l, e)["median_log10_p"] for e in eps]
        strict[l] = all(a < b for a, b in zip(series, series[1:]))
    table = "; ".join(
        f"l={l}: " + "/".join(f"{res.row(l, e)['median_log10_p']:.1f}" for e in eps) for l in l_values
    )
    ok = valley and all(strict.values())
    criterion(
        "C8 trade-off shape",
        ok,
        f"median log10 p (eps 0/0.05/0.1/0.2) {table}; valley at l={l_values[k]}: {valley}; "
        f"strict eps ordering: {all(strict.values())}",
    )
    assert ok


# 9 ---------------------------------------------------------------------------------

def test_c09_attack_retention(criterion):
    N, T, l, trials = 1000, 200, 20, 500
    params = WatermarkParams(KEY, l=l)
    part = derive_partition(KEY, N, l)
    prov = SyntheticLM(vocab_size=N, seed=909)
    rng = np.random.default_rng(909)
    hits = replaced = 0
    for _ in range(trials):
        rec = generate_sequence(prov, params, part, prompt=rng.integers(0, N, size=2), T=T, rng=rng)
        attacked, pos = token_replacement_attack(rec.tokens, 0.2, N, rng, return_positions=True)
        _, h = score_sequence(attacked, params, part)
        hits += int(h[pos].sum())
        replaced += pos.size
    lo, hi = stats.binom.interval(0.999, replaced, 1 / l)
    ok = lo <= hits <= hi
    criterion(
        "C9 attack retention",
        ok,
        f"{hits}/{replaced} replaced positions hit = {hits / replaced:.4f}; 99.9% CI of 1/l: [{lo / replaced:.4f}, {hi / replaced:.4f}]",
    )
    assert ok


# 10 --------------------------------------------------------------------------------

def test_c10_roundtrip_identity(criterion):
    rng = np.random.default_rng(1010)
    mismatches = 0
    for _ in range(100):
        key = rng.bytes(int(rng.integers(16, 40)))
        N = int(rng.integers(2, 3000))
        l = int(rng.integers(2, min(N, 200) + 1))
        n = int(rng.integers(1, 5))
        variant = str(rng.choice(["dirichlet-iid", "zipf-markov"]))
        prov = SyntheticLM(variant, vocab_size=N, order=int(rng.integers(1, 3)), seed=int(rng.integers(1 << 31)))
        params = WatermarkParams(key, l=l, n=n)
        part = derive_partition(key, N, l)
        prompt = rng.integers(0, N, size=int(rng.integers(0, 6)))
        rec = generate_sequence(prov, params, part, prompt=prompt, T=int(rng.integers(0, 120)), rng=rng)
        phi, hits = score_sequence(rec.tokens, params, part)
        if not (np.array_equal(hits, rec.hits) and phi == rec.hit_count):
            mismatches += 1
    ok = mismatches == 0
    criterion("C10 round-trip identity", ok, f"{mismatches} mismatching configs out of 100")
    assert ok
