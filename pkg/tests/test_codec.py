"""Probability tables and range coder: high-precision oracles, exactness
invariants, round trips, and rate accounting."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lalic import codec
from lalic.errors import CorruptionError, ShapeError


def phi_highprec(x: float) -> float:
    """Standard normal CDF through mpmath at 50 digits."""
    import mpmath

    mpmath.mp.dps = 50
    return float(0.5 * (1 + mpmath.erf(mpmath.mpf(x) / mpmath.sqrt(2))))


def pmf_oracle(s: int, mu: float, sigma: float) -> float:
    hi = phi_highprec((s + 0.5 - mu) / sigma)
    lo = phi_highprec((s - 0.5 - mu) / sigma)
    if s == codec.ALPHABET_MIN:
        lo = 0.0
    if s == codec.ALPHABET_MAX:
        hi = 1.0
    return hi - lo


class TestRounding:
    def test_ties_away_from_zero(self):
        x = np.array([0.5, 1.5, 2.5, -0.5, -1.5, -2.5])
        np.testing.assert_array_equal(codec.round_half_away(x), [1, 2, 3, -1, -2, -3])

    def test_differs_from_bankers(self):
        # np.round would give 2 here
        assert codec.round_half_away(np.array([2.5]))[0] == 3.0

    def test_plain_cases(self):
        x = np.array([0.4999, -0.4999, 1.2, -3.7, 0.0])
        np.testing.assert_array_equal(codec.round_half_away(x), [0, 0, 1, -4, 0])


class TestGaussianPmf:
    def test_center_symbol_standard_normal(self):
        p = codec.gaussian_pmf(np.array([0.0]), np.array([1.0]))[0, -codec.ALPHABET_MIN]
        assert abs(p - pmf_oracle(0, 0.0, 1.0)) <= 1e-12
        assert abs(p - 0.3829) <= 1e-3

    @pytest.mark.parametrize("mu,sigma", [(0.0, 1.0), (3.7, 0.3), (-8.0, 17.5), (120.0, 2.0)])
    def test_against_highprec_oracle(self, mu, sigma):
        p = codec.gaussian_pmf(np.array([mu]), np.array([sigma]))[0]
        for s in (-127, -10, -1, 0, 1, 9, 100, 128):
            assert abs(p[s - codec.ALPHABET_MIN] - pmf_oracle(s, mu, sigma)) <= 1e-9

    def test_rows_sum_to_one(self, rng):
        mu = rng.uniform(-20, 20, 64)
        sigma = np.exp(rng.uniform(np.log(0.04), np.log(256.0), 64))
        p = codec.gaussian_pmf(mu, sigma)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)

    def test_mirror_symmetry(self):
        p1 = codec.gaussian_pmf(np.array([2.25]), np.array([3.5]))[0]
        p2 = codec.gaussian_pmf(np.array([-2.25]), np.array([3.5]))[0]
        # interior mass at s mirrors to -s; tails swap roles
        for s in range(-100, 101):
            assert abs(p1[s - codec.ALPHABET_MIN] - p2[-s - codec.ALPHABET_MIN]) <= 1e-12

    def test_tails_absorbed(self):
        p = codec.gaussian_pmf(np.array([-200.0]), np.array([0.5]))[0]
        assert p[0] > 0.999  # everything collapses into the lowest symbol
        assert p.sum() == pytest.approx(1.0, abs=1e-12)

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises(ShapeError):
            codec.gaussian_pmf(np.array([0.0]), np.array([0.0]))


class TestBuildCdf:
    def test_total_exact_and_strictly_increasing(self, rng):
        mu = rng.uniform(-8, 8, 1000)
        sigma = np.exp(rng.uniform(np.log(0.04), np.log(256.0), 1000))
        cdf = codec.build_cdf(mu, sigma)
        assert cdf.dtype == np.uint32
        assert (cdf[:, 0] == 0).all()
        assert (cdf[:, -1] == codec.CDF_TOTAL).all()
        assert (np.diff(cdf.astype(np.int64), axis=1) >= 1).all()

    def test_spike_distribution_keeps_all_symbols_codable(self):
        cdf = codec.build_cdf(np.array([0.0]), np.array([codec.SIGMA_MIN]))
        freq = np.diff(cdf[0].astype(np.int64))
        assert freq.min() >= 1
        assert freq[-codec.ALPHABET_MIN] >= 65000  # nearly everything at 0

    def test_largest_remainder_against_slow_oracle(self, rng):
        # re-derive the quantization with plain python loops
        mu = float(rng.uniform(-4, 4))
        sigma = float(np.exp(rng.uniform(np.log(0.1), np.log(32.0))))
        p = codec.gaussian_pmf(np.array([mu]), np.array([sigma]))[0]
        budget = codec.CDF_TOTAL - codec.ALPHABET_SIZE
        t = [pi * budget for pi in p]
        base = [math.floor(ti) for ti in t]
        rem = [ti - bi for ti, bi in zip(t, base)]
        short = budget - sum(base)
        order = sorted(range(len(rem)), key=lambda i: (-rem[i], i))
        freq = [1 + b for b in base]
        for i in order[:short]:
            freq[i] += 1
        want = np.concatenate([[0], np.cumsum(freq)])
        got = codec.build_cdf(np.array([mu]), np.array([sigma]))[0]
        np.testing.assert_array_equal(got, want)

    def test_deterministic(self, rng):
        mu = rng.uniform(-8, 8, 50)
        sigma = np.exp(rng.uniform(np.log(0.04), np.log(256.0), 50))
        a = codec.build_cdf(mu, sigma)
        b = codec.build_cdf(mu, sigma)
        assert np.array_equal(a, b)

    def test_f32_inputs_match_f64_path(self, rng):
        # tables must be identical no matter which float width produced mu/sigma
        mu64 = rng.uniform(-4, 4, 20)
        sig64 = np.exp(rng.uniform(np.log(0.04), np.log(256.0), 20))
        mu32 = mu64.astype(np.float32)
        sig32 = sig64.astype(np.float32)
        a = codec.build_cdf(mu32, sig32)
        b = codec.build_cdf(mu32.astype(np.float64), sig32.astype(np.float64))
        assert np.array_equal(a, b)


class TestEstimateRate:
    def test_single_standard_normal_symbol(self):
        cdf = codec.build_cdf(np.array([0.0]), np.array([1.0]))
        est = codec.estimate_rate(np.array([0]), cdf, np.array([0]))
        assert abs(est - 1.385) <= 0.01

    def test_spike_symbol_nearly_free(self):
        cdf = codec.build_cdf(np.array([0.0]), np.array([codec.SIGMA_MIN]))
        est = codec.estimate_rate(np.array([0]), cdf, np.array([0]))
        assert est <= 0.01

    def test_additive_over_concatenation(self, rng):
        cdf = codec.build_cdf(rng.uniform(-2, 2, 8), np.full(8, 1.5))
        sym = rng.integers(-3, 4, 30)
        idx = rng.integers(0, 8, 30)
        whole = codec.estimate_rate(sym, cdf, idx)
        parts = codec.estimate_rate(sym[:11], cdf, idx[:11]) + codec.estimate_rate(
            sym[11:], cdf, idx[11:]
        )
        assert abs(whole - parts) <= 1e-9

    def test_doubling_doubles(self, rng):
        cdf = codec.build_cdf(np.array([0.3]), np.array([2.0]))
        sym = rng.integers(-5, 6, 40)
        one = codec.estimate_rate(sym, cdf, np.zeros(40, int))
        two = codec.estimate_rate(np.tile(sym, 2), cdf, np.zeros(80, int))
        assert two == pytest.approx(2 * one, rel=1e-12)

    def test_empty_is_zero(self):
        cdf = codec.build_cdf(np.array([0.0]), np.array([1.0]))
        assert codec.estimate_rate(np.array([], dtype=int), cdf, np.array([], dtype=int)) == 0.0


class TestRangeCoder:
    def test_round_trip_full_model_range(self):
        rng = np.random.default_rng(99)
        n = 100_000
        mu = rng.uniform(-8, 8, n)
        sigma = np.exp(rng.uniform(np.log(0.04), np.log(256.0), n))
        cdfs = codec.build_cdf(mu, sigma)
        sym = np.clip(np.round(rng.normal(mu, sigma)), -127, 128).astype(np.int64)
        idx = np.arange(n)
        blob = codec.encode_symbols(sym, cdfs, idx)
        back = codec.decode_symbols(blob, cdfs, idx)
        assert np.array_equal(back, sym)

    def test_rate_consistency_large_stream(self):
        rng = np.random.default_rng(4)
        n = 100_000
        mu = rng.uniform(-8, 8, n)
        sigma = np.exp(rng.uniform(np.log(0.04), np.log(256.0), n))
        cdfs = codec.build_cdf(mu, sigma)
        sym = np.clip(np.round(rng.normal(mu, sigma)), -127, 128).astype(np.int64)
        idx = np.arange(n)
        est = codec.estimate_rate(sym, cdfs, idx)
        actual = 8 * len(codec.encode_symbols(sym, cdfs, idx))
        assert est <= actual <= 1.01 * est + 64

    def test_empty_stream_is_flush_only(self):
        cdfs = codec.build_cdf(np.array([0.0]), np.array([1.0]))
        blob = codec.encode_symbols(np.array([], dtype=int), cdfs, np.array([], dtype=int))
        assert len(blob) == 5
        assert blob[0] == 0
        out = codec.decode_symbols(blob, cdfs, np.array([], dtype=int))
        assert out.size == 0

    def test_deterministic_bytes(self, rng):
        cdfs = codec.build_cdf(np.array([0.0, 1.0]), np.array([1.0, 2.0]))
        sym = rng.integers(-4, 5, 500)
        idx = rng.integers(0, 2, 500)
        assert codec.encode_symbols(sym, cdfs, idx) == codec.encode_symbols(sym, cdfs, idx)

    def test_alphabet_extremes_code_correctly(self):
        cdfs = codec.build_cdf(np.array([0.0]), np.array([256.0]))
        sym = np.array([-127, 128, -127, 0, 128], dtype=np.int64)
        idx = np.zeros(5, dtype=int)
        blob = codec.encode_symbols(sym, cdfs, idx)
        assert np.array_equal(codec.decode_symbols(blob, cdfs, idx), sym)

    def test_out_of_alphabet_rejected(self):
        cdfs = codec.build_cdf(np.array([0.0]), np.array([1.0]))
        with pytest.raises(ShapeError):
            codec.encode_symbols(np.array([129]), cdfs, np.array([0]))

    def test_truncated_stream_detected(self, rng):
        cdfs = codec.build_cdf(np.array([0.0]), np.array([1.0]))
        sym = rng.integers(-3, 4, 4000)
        idx = np.zeros(4000, dtype=int)
        blob = codec.encode_symbols(sym, cdfs, idx)
        with pytest.raises(CorruptionError):
            codec.decode_symbols(blob[: len(blob) // 2], cdfs, idx)

    def test_trailing_garbage_detected(self, rng):
        cdfs = codec.build_cdf(np.array([0.0]), np.array([1.0]))
        sym = rng.integers(-3, 4, 100)
        idx = np.zeros(100, dtype=int)
        blob = codec.encode_symbols(sym, cdfs, idx)
        with pytest.raises(CorruptionError, match="unconsumed"):
            codec.decode_symbols(blob + b"\x00\x01", cdfs, idx)

    def test_decoder_consumes_exactly_encoder_output(self, rng):
        for trial in range(5):
            n = int(rng.integers(1, 400))
            mu = rng.uniform(-8, 8, n)
            sigma = np.exp(rng.uniform(np.log(0.04), np.log(256.0), n))
            cdfs = codec.build_cdf(mu, sigma)
            sym = np.clip(np.round(rng.normal(mu, sigma)), -127, 128).astype(np.int64)
            idx = np.arange(n)
            blob = codec.encode_symbols(sym, cdfs, idx)
            # decode_symbols raises unless consumption is exact
            codec.decode_symbols(blob, cdfs, idx)

    @given(
        seed=st.integers(0, 2**31 - 1),
        n=st.integers(1, 300),
        spread=st.sampled_from([0.04, 0.8, 12.0, 256.0]),
    )
    @settings(max_examples=40, deadline=None)
    def test_round_trip_random(self, seed, n, spread):
        rng = np.random.default_rng(seed)
        mu = rng.uniform(-20, 20, n)
        sigma = np.full(n, spread)
        cdfs = codec.build_cdf(mu, sigma)
        sym = np.clip(np.round(rng.normal(mu, np.minimum(sigma, 30))), -127, 128).astype(np.int64)
        idx = np.arange(n)
        blob = codec.encode_symbols(sym, cdfs, idx)
        assert np.array_equal(codec.decode_symbols(blob, cdfs, idx), sym)


class TestHyperCoding:
    def test_round_trip(self, rng):
        prior = codec.FactorizedPrior(
            mu=rng.uniform(-2, 2, 12), sigma=np.exp(rng.uniform(-1, 2, 12))
        )
        z = rng.integers(-9, 10, (12, 4, 4)).astype(np.float32)
        blob, bits = codec.encode_hyper(z, prior)
        back = codec.decode_hyper(blob, prior, (12, 4, 4))
        np.testing.assert_array_equal(back, z.astype(np.int64))
        assert bits > 0

    def test_rate_consistent(self, rng):
        prior = codec.FactorizedPrior(mu=np.zeros(6), sigma=np.full(6, 3.0))
        z = rng.integers(-8, 9, (6, 16, 16)).astype(np.float32)
        blob, bits = codec.encode_hyper(z, prior)
        assert bits <= 8 * len(blob) <= 1.01 * bits + 64

    def test_prior_from_store_clamps_sigma(self, tiny_store):
        prior = codec.prior_from_store(tiny_store)
        assert prior.mu.shape == (12,)
        assert np.all(prior.sigma >= codec.SIGMA_MIN)
        assert np.all(prior.sigma <= codec.SIGMA_MAX)
