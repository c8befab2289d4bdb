"""Linear-attention kernels.

Two attention mechanisms over ``(T, C)`` sequences:

* ``aft_reference``: position-independent key-value pooling.  Every token
  receives the same per-channel softmax average of values, so the whole
  sequence collapses to one pooled vector.
* bidirectional WKV: relative-position attention with a per-channel decay
  that is normalized by sequence length, plus a learned bonus for the
  current token.  ``biwkv_reference`` evaluates the defining double sum in
  O(T^2 * C); ``biwkv_scan`` produces the same numbers from one forward and
  one backward recurrence in O(T * C), carrying log-domain shifted state so
  arbitrarily large keys or decays cannot overflow.

``biwkv_backward`` returns analytic gradients for the scan inputs, checked
against central differences in the test suite.

All kernels compute internally in float64 and cast to the input dtype on the
way out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ShapeError

# attention cost model: multiply-accumulates per token per channel, so a
# mechanism's op count over a whole sequence is coeff * T * C
OP_COUNT_COEFFS = {
    "aft": 7,
    "aft-shift": 57,
    "biwkv-shift": 79,
    "window-attention": 128,
    "selective-scan": 144,
    "selective-scan-2d": 576,
}


def op_count(mechanism: str, seq_len: int, width: int) -> int:
    """Modelled multiply-accumulate count for one attention application.

    Args:
        mechanism: one of ``OP_COUNT_COEFFS``.
        seq_len: number of tokens T.
        width: channel count C.
    """
    try:
        coeff = OP_COUNT_COEFFS[mechanism]
    except KeyError:
        known = ", ".join(sorted(OP_COUNT_COEFFS))
        raise ValueError(f"unknown attention mechanism {mechanism!r} (known: {known})") from None
    if seq_len < 1 or width < 1:
        raise ValueError("op_count: seq_len and width must be positive")
    return coeff * seq_len * width


@dataclass(frozen=True)
class WkvParams:
    """Per-channel decay and current-token bonus of the WKV kernel."""

    decay: np.ndarray  # (C,)
    bonus: np.ndarray  # (C,)

    def check(self, width: int) -> None:
        if self.decay.shape != (width,) or self.bonus.shape != (width,):
            raise ShapeError(
                f"WkvParams: decay {self.decay.shape} / bonus {self.bonus.shape} "
                f"do not match width {width}"
            )


def _check_kv(k: np.ndarray, v: np.ndarray) -> tuple[int, int]:
    if k.ndim != 2 or v.ndim != 2:
        raise ShapeError(f"expected (T, C) key/value, got {k.shape} and {v.shape}")
    if k.shape != v.shape:
        raise ShapeError(f"key shape {k.shape} != value shape {v.shape}")
    if k.shape[0] < 1:
        raise ShapeError("empty sequence")
    return k.shape


def aft_reference(k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Position-independent attention: per-channel softmax pooling of values.

    Every output token equals ``sum_i exp(k_i) * v_i / sum_i exp(k_i)``
    computed per channel with a max shift for stability.
    """
    _check_kv(k, v)
    k64 = k.astype(np.float64)
    v64 = v.astype(np.float64)
    m = k64.max(axis=0)
    e = np.exp(k64 - m)
    pooled = (e * v64).sum(axis=0) / e.sum(axis=0)
    out = np.empty_like(k)
    out[:] = pooled
    return out


def biwkv_reference(k: np.ndarray, v: np.ndarray, params: WkvParams) -> np.ndarray:
    """Direct O(T^2) evaluation of bidirectional WKV attention.

    For token t the output is a weighted value average where token i != t
    contributes weight ``exp(-(|t - i| - 1) * w / T + k_i)`` and the token
    itself contributes ``exp(u + k_t)``.  Immediate neighbours are therefore
    undecayed and the decay strength is independent of sequence length.
    """
    t_len, c = _check_kv(k, v)
    params.check(c)
    k64 = k.astype(np.float64)
    v64 = v.astype(np.float64)
    d = params.decay.astype(np.float64) / t_len
    u = params.bonus.astype(np.float64)

    pos = np.arange(t_len)
    dist = np.abs(pos[:, None] - pos[None, :]) - 1.0
    expo = -dist[:, :, None] * d + k64[None, :, :]  # (T, T, C)
    expo[pos, pos, :] = u + k64
    m = expo.max(axis=1, keepdims=True)
    p = np.exp(expo - m)
    num = np.einsum("tic,ic->tc", p, v64)
    den = p.sum(axis=1)
    return (num / den).astype(k.dtype, copy=False)


@njit(cache=True)
def _biwkv_scan_f64(k, v, w, u, out):  # pragma: no cover - exercised via wrapper
    t_len, c = k.shape
    d = np.empty(c)
    for j in range(c):
        d[j] = w[j] / t_len

    # forward prefix state per channel, stored log-shifted as (m, a, b) with
    # true numerator a * exp(m) and denominator b * exp(m)
    fm = np.empty((t_len, c))
    fa = np.empty((t_len, c))
    fb = np.empty((t_len, c))
    m = np.full(c, -np.inf)
    a = np.zeros(c)
    b = np.zeros(c)
    for t in range(t_len):
        for j in range(c):
            fm[t, j] = m[j]
            fa[t, j] = a[j]
            fb[t, j] = b[j]
        for j in range(c):
            md = m[j] - d[j]
            q = k[t, j]
            mn = md if md > q else q
            ea = np.exp(md - mn)
            eq = np.exp(q - mn)
            a[j] = ea * a[j] + eq * v[t, j]
            b[j] = ea * b[j] + eq
            m[j] = mn

    # backward suffix state, combined with the stored prefix and the bonus
    # term at each position
    for j in range(c):
        m[j] = -np.inf
        a[j] = 0.0
        b[j] = 0.0
    for t in range(t_len - 1, -1, -1):
        for j in range(c):
            qs = u[j] + k[t, j]
            mx = fm[t, j]
            if m[j] > mx:
                mx = m[j]
            if qs > mx:
                mx = qs
            ef = np.exp(fm[t, j] - mx)
            eb = np.exp(m[j] - mx)
            es = np.exp(qs - mx)
            num = ef * fa[t, j] + eb * a[j] + es * v[t, j]
            den = ef * fb[t, j] + eb * b[j] + es
            out[t, j] = num / den
        for j in range(c):
            md = m[j] - d[j]
            q = k[t, j]
            mn = md if md > q else q
            ea = np.exp(md - mn)
            eq = np.exp(q - mn)
            a[j] = ea * a[j] + eq * v[t, j]
            b[j] = ea * b[j] + eq
            m[j] = mn


def biwkv_scan(k: np.ndarray, v: np.ndarray, params: WkvParams) -> np.ndarray:
    """Linear-time bidirectional WKV, numerically equal to the reference.

    One forward and one backward sweep maintain per-channel prefix/suffix
    sums in log-shifted form; the two halves and the bonus term are merged
    under a common max at every position, so no exponential ever sees a
    positive argument.
    """
    t_len, c = _check_kv(k, v)
    params.check(c)
    out = np.empty((t_len, c), dtype=np.float64)
    _biwkv_scan_f64(
        np.ascontiguousarray(k, dtype=np.float64),
        np.ascontiguousarray(v, dtype=np.float64),
        np.ascontiguousarray(params.decay, dtype=np.float64),
        np.ascontiguousarray(params.bonus, dtype=np.float64),
        out,
    )
    return out.astype(k.dtype, copy=False)


def biwkv_backward(
    k: np.ndarray,
    v: np.ndarray,
    params: WkvParams,
    grad_out: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Analytic gradients of ``sum(grad_out * biwkv(k, v))``.

    Returns ``(dk, dv, d_decay, d_bonus)`` in float64.  Uses the O(T^2)
    attention-weight form: with row weights ``W[t, i]`` and outputs
    ``o_t = sum_i W[t, i] v_i``, the value gradient is the transposed weight
    application and the key/decay/bonus gradients contract the residual
    ``v_i - o_t`` against the same weights.
    """
    t_len, c = _check_kv(k, v)
    params.check(c)
    if grad_out.shape != k.shape:
        raise ShapeError(f"grad shape {grad_out.shape} != kv shape {k.shape}")
    k64 = k.astype(np.float64)
    v64 = v.astype(np.float64)
    g = grad_out.astype(np.float64)
    d = params.decay.astype(np.float64) / t_len
    u = params.bonus.astype(np.float64)

    pos = np.arange(t_len)
    dist = np.abs(pos[:, None] - pos[None, :]) - 1.0
    expo = -dist[:, :, None] * d + k64[None, :, :]
    expo[pos, pos, :] = u + k64
    mrow = expo.max(axis=1, keepdims=True)
    p = np.exp(expo - mrow)
    den = p.sum(axis=1)
    weights = p / den[:, None, :]  # (T, T, C), rows sum to 1
    wkv = np.einsum("tic,ic->tc", weights, v64)

    dv = np.einsum("tc,tic->ic", g, weights)
    dk = v64 * dv - np.einsum("tc,tic->ic", g * wkv, weights)
    wdiag = weights[pos, pos, :]
    du = (g * wdiag * (v64 - wkv)).sum(axis=0)
    # decay enters off-diagonal entries as -(|t - i| - 1)/T; the diagonal is
    # governed by the bonus instead
    coef = -dist / t_len
    np.fill_diagonal(coef, 0.0)
    dw = np.einsum("tc,tic,ti,ic->c", g, weights, coef, v64) - np.einsum(
        "tc,tic,ti->c", g * wkv, weights, coef
    )
    return dk, dv, dw, du
