import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridvc import entropy
from hybridvc.entropy import ContextBank, EntropyError, FreqModel, RangeDecoder, TruncatedPayload


def oracle_rate(alphabet, symbols, inc=32, cap=1 << 15, adaptive=True):
    """Plain-Python ideal code length with the same adaptation rule."""
    counts = [1] * alphabet
    bits = 0.0
    for s in symbols:
        bits -= math.log2(counts[s] / sum(counts))
        if adaptive:
            counts[s] += inc
            if sum(counts) > cap:
                counts = [max(1, c // 2) for c in counts]
    return bits, counts


def roundtrip(alphabet, syms, **kw):
    payload = entropy.encode(FreqModel(alphabet, **kw), syms)
    return payload, entropy.decode(FreqModel(alphabet, **kw), payload, len(syms))


@pytest.mark.parametrize("alphabet", [2, 16, 256])
@pytest.mark.parametrize("n", [0, 1, 2, 17, 1000, 20000])
def test_roundtrip_uniform_random(alphabet, n):
    syms = np.random.default_rng(alphabet * 7 + n).integers(0, alphabet, n)
    _, out = roundtrip(alphabet, syms)
    assert np.array_equal(out, syms)


@given(
    alphabet=st.sampled_from([2, 3, 16, 100, 256]),
    data=st.data(),
    skew=st.floats(0.0, 6.0),
    inc=st.sampled_from([1, 8, 32]),
    cap=st.sampled_from([1 << 10, 1 << 15]),
)
def test_roundtrip_property(alphabet, data, skew, inc, cap):
    n = data.draw(st.integers(0, 3000))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
    p = np.exp(-skew * np.arange(alphabet) / alphabet)
    syms = rng.choice(alphabet, size=n, p=p / p.sum())
    _, out = roundtrip(alphabet, syms, increment=inc, cap=max(cap, alphabet))
    assert np.array_equal(out, syms)


def test_empty_sequence_is_flush_only():
    payload, out = roundtrip(16, [])
    assert len(payload) <= 2
    assert len(out) == 0


def test_count_zero_returns_empty_for_any_payload():
    assert len(entropy.decode(FreqModel(4), b"\xff\x13garbage", 0)) == 0


def test_symbol_out_of_range():
    with pytest.raises(EntropyError):
        entropy.encode(FreqModel(4), [0, 4])
    with pytest.raises(EntropyError):
        entropy.measure_rate(FreqModel(4), [-1])


def test_fair_bits_near_entropy():
    syms = np.random.default_rng(0).integers(0, 2, 10**6)
    payload = entropy.encode(FreqModel(2), syms)
    assert len(payload) <= 1.01 * 125_000


def test_skewed_source_below_point_one_bit():
    rng = np.random.default_rng(1)
    syms = (rng.random(200_000) < 0.01).astype(np.int64)
    warm = 2000
    m = FreqModel(2)
    entropy.measure_rate(m, syms[:warm])
    assert entropy.measure_rate(m, syms[warm:]) / (len(syms) - warm) < 0.1
    payload = entropy.encode(FreqModel(2), syms)
    assert 8 * len(payload) / len(syms) < 0.1


@pytest.mark.parametrize("alphabet,p", [(2, [0.7, 0.3]), (16, None), (4, [0.5, 0.25, 0.125, 0.125])])
def test_stationary_source_within_two_percent_of_entropy(alphabet, p):
    rng = np.random.default_rng(5)
    p = np.full(alphabet, 1 / alphabet) if p is None else np.asarray(p)
    syms = rng.choice(alphabet, size=100_000, p=p)
    h = -np.sum(p * np.log2(p)) * len(syms)
    assert 8 * len(entropy.encode(FreqModel(alphabet), syms)) <= 1.02 * h


def test_truncated_payload_is_detected():
    syms = np.random.default_rng(3).integers(0, 16, 1000)
    payload = entropy.encode(FreqModel(16), syms)
    try:
        out = entropy.decode(FreqModel(16), payload[:-1], len(syms))
    except EntropyError:
        return
    assert not np.array_equal(out, syms)


def test_reading_far_past_the_end_raises():
    syms = np.random.default_rng(3).integers(0, 256, 500)
    payload = entropy.encode(FreqModel(256), syms)
    with pytest.raises(TruncatedPayload, match="truncated payload"):
        entropy.decode(FreqModel(256), payload[: len(payload) // 2], len(syms))


def test_measure_static_uniform_is_eight_bits():
    m = FreqModel(256, adaptive=False)
    assert entropy.measure_rate(m, np.arange(256)) == 256 * 8.0


def test_measure_single_symbol_fresh_model():
    assert entropy.measure_rate(FreqModel(2), [1]) == 1.0


@pytest.mark.parametrize("alphabet", [2, 5, 16, 256])
def test_measure_matches_oracle_and_updates_model(alphabet):
    syms = np.random.default_rng(alphabet).integers(0, alphabet, 4000)
    m = FreqModel(alphabet, cap=1 << 11)
    bits = entropy.measure_rate(m, syms)
    want_bits, want_counts = oracle_rate(alphabet, syms, cap=1 << 11)
    assert bits == pytest.approx(want_bits, rel=1e-12)
    assert m.counts.tolist() == want_counts
    assert m.total == sum(want_counts) <= m.cap


@given(alphabet=st.sampled_from([2, 16, 256]), n=st.integers(1, 10_000), seed=st.integers(0, 2**31))
def test_measure_within_sixteen_bits_of_payload(alphabet, n, seed):
    syms = np.random.default_rng(seed).integers(0, alphabet, n)
    bits = entropy.measure_rate(FreqModel(alphabet), syms)
    assert abs(bits - 8 * len(entropy.encode(FreqModel(alphabet), syms))) <= 16


def test_encoder_and_decoder_model_states_agree():
    rng = np.random.default_rng(11)
    sizes = [2, 7, 256]
    ctx = rng.integers(0, 3, 5000)
    syms = np.array([rng.integers(0, sizes[c]) for c in ctx])
    enc_bank = ContextBank(sizes)
    payload = enc_bank.encode(ctx, syms)
    dec_bank = ContextBank(sizes)
    dec = RangeDecoder(payload, dec_bank)
    half = len(ctx) // 2
    first = dec.run(ctx[:half])
    prefix = ContextBank(sizes)
    prefix.measure(ctx[:half], syms[:half])
    assert np.array_equal(first, syms[:half])
    assert dec_bank.state_equal(prefix)
    assert np.array_equal(dec.run(ctx[half:]), syms[half:])
    assert dec_bank.state_equal(enc_bank)


def test_model_invariants_hold_under_adaptation():
    m = FreqModel(3, increment=32, cap=200)
    entropy.measure_rate(m, [0] * 50 + [2] * 3)
    assert (m.counts >= 1).all()
    assert m.total == m.counts.sum() <= 200


def test_bank_clone_is_independent():
    b = ContextBank([4, 4])
    c = b.clone()
    c.measure([0, 0], [1, 1])
    assert not b.state_equal(c)
    assert b.counts[0].tolist()[:4] == [1, 1, 1, 1]
