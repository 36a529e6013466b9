import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from mcmark.core import (
    DistributionError,
    InvalidParameterError,
    TokenSequence,
    WatermarkError,
    WatermarkParams,
    as_distribution,
    context_window,
    derive_partition,
    prf_uniform,
    select_channel,
)

KEY = bytes.fromhex("000102030405060708090a0b0c0d0e0f")


def keys(count, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.bytes(16) for _ in range(count)]


def test_prf_deterministic():
    assert prf_uniform(KEY, b"chan", b"payload", 20) == prf_uniform(KEY, b"chan", b"payload", 20)


def test_prf_single_residue():
    assert prf_uniform(KEY, b"chan", b"anything", 1) == 0


def test_prf_rejects_zero_modulus():
    with pytest.raises(WatermarkError):
        prf_uniform(KEY, b"chan", b"x", 0)


def test_prf_domain_tags_are_separate_streams():
    a = [prf_uniform(KEY, b"chan", i.to_bytes(4, "little"), 1 << 30) for i in range(200)]
    b = [prf_uniform(KEY, b"part", i.to_bytes(4, "little"), 1 << 30) for i in range(200)]
    assert sum(x == y for x, y in zip(a, b)) == 0


def test_prf_uniform_chi_square():
    counts = np.zeros(20, dtype=np.int64)
    for i in range(10**6):
        counts[prf_uniform(KEY, b"chan", i.to_bytes(8, "little"), 20)] += 1
    _, pval = stats.chisquare(counts)
    assert pval > 0.001


def test_partition_divisible():
    part = derive_partition(KEY, 10, 5)
    assert sorted(np.bincount(part.assignment).tolist()) == [2] * 5
    assert part.segment_sizes.tolist() == [2] * 5


def test_partition_remainder():
    part = derive_partition(KEY, 10, 3)
    assert sorted(np.bincount(part.assignment, minlength=3).tolist()) == [3, 3, 4]
    assert part.segment_sizes.tolist() == [4, 3, 3]
    assert np.array_equal(np.bincount(part.assignment, minlength=3), part.segment_sizes)


@pytest.mark.parametrize("l", [1, 0, 11])
def test_partition_bad_l(l):
    with pytest.raises(InvalidParameterError):
        derive_partition(KEY, 10, l)


def test_partition_deterministic_and_frozen():
    a = derive_partition(KEY, 500, 7)
    b = derive_partition(bytes(KEY), 500, 7)
    assert a == b
    with pytest.raises(ValueError):
        a.assignment[0] = 3


def test_partition_large_vocab_key_agreement():
    N, l = 32000, 20
    parts = [derive_partition(k, N, l) for k in keys(10)]
    for p in parts:
        assert np.bincount(p.assignment).tolist() == [1600] * 20
    # two independent keys agree on a token with probability 1/l
    agree = [int((parts[i].assignment == parts[i + 1].assignment).sum()) for i in range(0, 10, 2)]
    sigma = np.sqrt(N * (1 / l) * (1 - 1 / l))
    for a in agree:
        assert abs(a - N / l) <= 3 * sigma


@given(st.integers(2, 300), st.data())
@settings(max_examples=60, deadline=None)
def test_partition_sizes_balanced(N, data):
    l = data.draw(st.integers(2, N))
    part = derive_partition(KEY, N, l)
    sizes = np.bincount(part.assignment, minlength=l)
    assert sizes.sum() == N
    assert sizes.max() - sizes.min() <= 1
    assert sizes.min() >= 1


def test_null_hit_probability_is_exactly_one_over_l():
    # for any token, exactly one of the l segments contains it
    part = derive_partition(KEY, 103, 10)
    for x in range(103):
        assert sum(part.assignment[x] == i for i in range(10)) == 1


def test_select_channel_deterministic():
    params = WatermarkParams(KEY)
    assert select_channel(params, [5, 9]) == select_channel(params, [5, 9])
    # the window keeps only the last n tokens
    assert select_channel(params, [1, 2, 3, 5, 9]) == select_channel(params, [5, 9])


def test_select_channel_empty_context_is_key_only():
    a = WatermarkParams(KEY)
    assert select_channel(a, []) == select_channel(a, np.zeros(0, dtype=int))
    others = {select_channel(WatermarkParams(k), []) for k in keys(40)}
    assert len(others) > 1


def test_select_channel_short_context_tagged_by_length():
    params = WatermarkParams(KEY, l=1000)
    assert select_channel(params, [7]) != select_channel(params, [0, 7])


def test_select_channel_one_token_change_agreement():
    params = WatermarkParams(KEY, l=20)
    rng = np.random.default_rng(1)
    trials = 20000
    agree = 0
    for _ in range(trials):
        a, b = rng.integers(0, 32000, size=2)
        c = (b + 1 + rng.integers(0, 31999)) % 32000
        agree += select_channel(params, [a, b]) == select_channel(params, [a, c])
    sigma = np.sqrt(trials * 0.05 * 0.95)
    assert abs(agree - trials * 0.05) <= 3 * sigma


def test_select_channel_marginal_uniformity():
    l = 20
    params = WatermarkParams(KEY, l=l)
    rng = np.random.default_rng(2)
    trials = 10**5
    ctx = rng.integers(0, 50000, size=(trials, 2))
    counts = np.bincount([select_channel(params, c) for c in ctx], minlength=l)
    lo, hi = stats.binom.interval(0.999, trials, 1 / l)
    assert np.all((counts >= lo) & (counts <= hi))


def test_params_defaults_and_validation():
    p = WatermarkParams(KEY)
    assert (p.l, p.n, p.p0) == (20, 2, 0.01)
    with pytest.raises(InvalidParameterError):
        WatermarkParams(b"short")
    with pytest.raises(InvalidParameterError):
        WatermarkParams(KEY, l=1)
    with pytest.raises(InvalidParameterError):
        WatermarkParams(KEY, n=0)
    with pytest.raises(InvalidParameterError):
        WatermarkParams(KEY, p0=1.0)
    with pytest.raises(InvalidParameterError):
        WatermarkParams.from_hex("zz" * 16)
    assert WatermarkParams.from_hex(KEY.hex()).secret_key == KEY
    with pytest.raises(InvalidParameterError):
        p.check_vocab(10)


def test_long_keys_accepted():
    params = WatermarkParams(bytes(100))
    assert 0 <= select_channel(params, [1, 2]) < 20
    assert derive_partition(bytes(100), 50, 5).l == 5


def test_as_distribution():
    np.testing.assert_allclose(as_distribution([1, 3], normalize=True), [0.25, 0.75])
    with pytest.raises(DistributionError):
        as_distribution([0.5, 0.6])
    with pytest.raises(DistributionError):
        as_distribution([-0.1, 1.1])
    with pytest.raises(DistributionError):
        as_distribution([np.nan, 1.0])
    with pytest.raises(DistributionError):
        as_distribution([0, 0], normalize=True)


def test_token_sequence():
    seq = TokenSequence(tokens=[3, 4], prompt=[1])
    assert len(seq) == 2
    assert seq.full.tolist() == [1, 3, 4]
    with pytest.raises(InvalidParameterError):
        TokenSequence(tokens=[10]).validate(10)
    assert context_window([1, 2, 3], 2).tolist() == [2, 3]
    assert context_window([3], 2).tolist() == [3]
