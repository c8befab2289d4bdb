"""Lossless entropy coding against discretized Gaussian models.

Three layers live here:

* quantized probability tables: per-symbol Gaussian interval masses over the
  fixed alphabet [-127, 128], scaled to 16-bit cumulative frequency rows
  that always sum to exactly 65536 with every symbol kept codable;
* a byte-oriented range coder (64-bit low register, 32-bit range) whose
  decoder consumes exactly the bytes the encoder produced;
* helpers that code whole symbol arrays and report ideal code lengths.

Carries never rewrite emitted output: the encoder holds back one cache byte
plus a run of 0xFF bytes and resolves them when the next non-propagating
byte appears.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import CorruptionError, ShapeError

ALPHABET_MIN = -127
ALPHABET_MAX = 128
ALPHABET_SIZE = ALPHABET_MAX - ALPHABET_MIN + 1  # 256
CDF_BITS = 16
CDF_TOTAL = 1 << CDF_BITS  # 65536
_FREQ_BUDGET = CDF_TOTAL - ALPHABET_SIZE  # fractional budget above the +1 floor

SIGMA_MIN = 0.04
SIGMA_MAX = 256.0

_TOP = 1 << 24
_BOT = 0xFF000000
_MASK32 = 0xFFFFFFFF


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest with ties away from zero (not banker's rounding)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def gaussian_pmf(mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Interval masses of N(mu, sigma) over the alphabet, tails absorbed.

    Args:
        mu, sigma: arrays of shape ``(n,)``.

    Returns:
        float64 array ``(n, 256)`` whose rows sum to 1 exactly up to float
        addition error.
    """
    mu64 = np.asarray(mu, dtype=np.float64).reshape(-1, 1)
    sig64 = np.asarray(sigma, dtype=np.float64).reshape(-1, 1)
    if np.any(sig64 <= 0):
        raise ShapeError("gaussian_pmf: sigma must be positive")
    s = np.arange(ALPHABET_MIN, ALPHABET_MAX + 1, dtype=np.float64)
    hi = ndtr((s + 0.5 - mu64) / sig64)
    lo = ndtr((s - 0.5 - mu64) / sig64)
    p = hi - lo
    p[:, 0] = hi[:, 0]  # absorb the lower tail into the first symbol
    p[:, -1] = 1.0 - lo[:, -1]  # and the upper tail into the last
    return p


def build_cdf(mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Quantized cumulative frequency rows for a batch of Gaussians.

    Every row is a uint32 vector of length 257 running from 0 to exactly
    65536, strictly increasing (so every symbol has frequency >= 1).
    Fractional masses are scaled by 65280, floored, and the shortfall is
    given to the largest remainders, earliest symbol first on ties.
    """
    p = gaussian_pmf(mu, sigma)
    t = p * float(_FREQ_BUDGET)
    base = np.floor(t).astype(np.int64)
    rem = t - base
    short = _FREQ_BUDGET - base.sum(axis=1)
    # stable argsort on negated remainders: ties break toward lower symbols
    order = np.argsort(-rem, axis=1, kind="stable")
    n, a = p.shape
    bump = np.zeros((n, a), dtype=np.int64)
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.broadcast_to(np.arange(a), (n, a)).copy(), axis=1)
    bump[ranks < short[:, None]] = 1
    freq = 1 + base + bump
    cdf = np.zeros((n, a + 1), dtype=np.uint32)
    cdf[:, 1:] = np.cumsum(freq, axis=1)
    return cdf


def estimate_rate(symbols: np.ndarray, cdfs: np.ndarray, index: np.ndarray) -> float:
    """Ideal code length in bits under the quantized tables.

    Args:
        symbols: integer symbols in the alphabet, shape ``(n,)``.
        cdfs: uint32 rows from :func:`build_cdf`, shape ``(m, 257)``.
        index: row selector per symbol, shape ``(n,)``.
    """
    sym = np.asarray(symbols, dtype=np.int64)
    if sym.size == 0:
        return 0.0
    if np.any(sym < ALPHABET_MIN) or np.any(sym > ALPHABET_MAX):
        raise ShapeError("estimate_rate: symbol outside the alphabet")
    idx = np.asarray(index, dtype=np.int64)
    col = sym - ALPHABET_MIN
    freq = cdfs[idx, col + 1].astype(np.int64) - cdfs[idx, col].astype(np.int64)
    return float(sym.size * CDF_BITS - np.log2(freq).sum())


# ---------------------------------------------------------------------------
# range coder core


class RangeEncoder:
    """Byte-wise range coder with deferred carry resolution.

    The low register keeps 33 live bits between renormalizations.  One cache
    byte plus a run of 0xFF bytes are held back until a byte arrives that a
    carry cannot propagate through, so emitted output is never rewritten.
    The stream always starts with one dummy zero byte and a flush appends
    five renormalizations, hence ``len(output) == renormalizations + 5``.
    """

    def __init__(self) -> None:
        self._low = 0
        self._range = _MASK32
        self._cache = 0
        self._cache_size = 1  # counts the cache byte plus the pending 0xFF run
        self._out = bytearray()

    def encode(self, cum_freq: int, freq: int) -> None:
        r = self._range >> CDF_BITS
        self._low += cum_freq * r
        self._range = freq * r
        while self._range < _TOP:
            self._shift_low()
            self._range = (self._range << 8) & _MASK32

    def _shift_low(self) -> None:
        low = self._low
        if low < _BOT or low > _MASK32:
            carry = low >> 32
            first = self._cache
            while self._cache_size:
                self._out.append((first + carry) & 0xFF)
                first = 0xFF
                self._cache_size -= 1
            self._cache = (low >> 24) & 0xFF
        self._cache_size += 1
        self._low = (low << 8) & _MASK32

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self._out)


class RangeDecoder:
    """Mirror of :class:`RangeEncoder`; tracks exactly consumed bytes."""

    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0
        self._range = _MASK32
        if self._next_byte() != 0:
            raise CorruptionError("symbol stream does not start with a zero byte")
        code = 0
        for _ in range(4):
            code = (code << 8) | self._next_byte()
        self._code = code

    def _next_byte(self) -> int:
        if self._pos >= len(self._data):
            raise CorruptionError("range decoder ran out of bytes")
        b = self._data[self._pos]
        self._pos += 1
        return b

    def decode_freq(self) -> int:
        """Current scaled cumulative value in [0, 65536)."""
        r = self._range >> CDF_BITS
        dv = self._code // r
        if dv >= CDF_TOTAL:
            raise CorruptionError("corrupt range coder state")
        return dv

    def decode_update(self, cum_freq: int, freq: int) -> None:
        r = self._range >> CDF_BITS
        self._code -= cum_freq * r
        self._range = freq * r
        while self._range < _TOP:
            self._code = ((self._code << 8) | self._next_byte()) & _MASK32
            self._range = (self._range << 8) & _MASK32

    @property
    def consumed(self) -> int:
        return self._pos


# ---------------------------------------------------------------------------
# array codecs


def encode_symbols(symbols: np.ndarray, cdfs: np.ndarray, index: np.ndarray) -> bytes:
    """Encode integer symbols against per-symbol cumulative frequency rows.

    ``index[i]`` selects the row of ``cdfs`` that models ``symbols[i]``.
    An empty input still produces the 5-byte coder flush.
    """
    sym = np.asarray(symbols, dtype=np.int64).ravel()
    idx = np.asarray(index, dtype=np.int64).ravel()
    if sym.shape != idx.shape:
        raise ShapeError(f"encode_symbols: {sym.shape} symbols vs {idx.shape} indices")
    if sym.size and (sym.min() < ALPHABET_MIN or sym.max() > ALPHABET_MAX):
        raise ShapeError("encode_symbols: symbol outside the alphabet")
    col = sym - ALPHABET_MIN
    cum = cdfs[idx, col]
    freq = cdfs[idx, col + 1] - cum
    enc = RangeEncoder()
    for c, f in zip(cum.tolist(), freq.tolist()):
        enc.encode(c, f)
    return enc.finish()


def decode_symbols(
    data: bytes, cdfs: np.ndarray, index: np.ndarray, expect_all_consumed: bool = True
) -> np.ndarray:
    """Decode ``len(index)`` symbols; the inverse of :func:`encode_symbols`.

    Raises ``CorruptionError`` if the stream is truncated or, when
    ``expect_all_consumed``, if decoding finishes without using every byte.
    """
    idx = np.asarray(index, dtype=np.int64).ravel()
    dec = RangeDecoder(data)
    out = np.empty(idx.size, dtype=np.int64)
    rows = np.asarray(cdfs)
    for i, row_id in enumerate(idx.tolist()):
        row = rows[row_id]
        dv = dec.decode_freq()
        col = int(np.searchsorted(row, dv, side="right")) - 1
        dec.decode_update(int(row[col]), int(row[col + 1] - row[col]))
        out[i] = col + ALPHABET_MIN
    if expect_all_consumed and dec.consumed != len(data):
        raise CorruptionError(
            f"symbol stream has {len(data) - dec.consumed} unconsumed bytes"
        )
    return out


# ---------------------------------------------------------------------------
# factorized hyper prior


@dataclass(frozen=True)
class FactorizedPrior:
    """Per-channel Gaussian model for the quantized hyper latent."""

    mu: np.ndarray  # (N,)
    sigma: np.ndarray  # (N,), already clamped to [SIGMA_MIN, SIGMA_MAX]


def prior_from_store(store) -> FactorizedPrior:
    mu = store["prior.mu"].astype(np.float64)
    with np.errstate(over="ignore"):
        sigma = np.clip(np.exp(store["prior.ls"].astype(np.float64)), SIGMA_MIN, SIGMA_MAX)
    return FactorizedPrior(mu=mu, sigma=sigma)


def encode_hyper(z_hat: np.ndarray, prior: FactorizedPrior) -> tuple[bytes, float]:
    """Code a quantized hyper latent channel-major; returns (bytes, ideal bits)."""
    n = z_hat.shape[0]
    if prior.mu.shape != (n,):
        raise ShapeError(f"encode_hyper: prior width {prior.mu.shape} vs latent {n}")
    sym = np.clip(z_hat.reshape(n, -1).astype(np.int64), ALPHABET_MIN, ALPHABET_MAX)
    cdfs = build_cdf(prior.mu, prior.sigma)
    index = np.repeat(np.arange(n), sym.shape[1])
    flat = sym.ravel()
    return encode_symbols(flat, cdfs, index), estimate_rate(flat, cdfs, index)


def decode_hyper(data: bytes, prior: FactorizedPrior, shape: tuple[int, int, int]) -> np.ndarray:
    """Inverse of :func:`encode_hyper` for a known hyper latent shape."""
    n, h, w = shape
    if prior.mu.shape != (n,):
        raise ShapeError(f"decode_hyper: prior width {prior.mu.shape} vs latent {n}")
    cdfs = build_cdf(prior.mu, prior.sigma)
    index = np.repeat(np.arange(n), h * w)
    sym = decode_symbols(data, cdfs, index)
    return sym.reshape(n, h, w)
