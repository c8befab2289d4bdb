"""Spatial-channel context model over the quantized latent.

Latent channels are coded in chunks of increasing width; inside each chunk a
checkerboard splits positions into anchors (row + column even) and
non-anchors, coded in that order.  Model parameters for each coding unit are
predicted from three context sources:

* spatial: a masked 5x5 convolution over the chunk's already-decoded anchor
  plane.  Only taps whose offsets have odd parity are live, so predictions
  at non-anchor positions depend exclusively on anchors.  The anchor pass
  itself sees all-zero spatial context.
* channel: previously decoded chunks, projected to a fixed width and run
  through two Bi-RWKV blocks.  The first chunk sees zeros.
* hyper: the expanded hyper latent, shared by every unit.

The three parts are concatenated and pushed through two pointwise
channel-mix trunks shared by both parity passes, then a per-pass linear head
emits mean and log-scale per coded channel.  Means shift the quantizer grid:
the transmitted symbol is ``round(y - mu)`` and the reconstruction adds the
mean back, so quantization error never exceeds half a step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .block import birwkv_block, block_from, channel_mix, channel_mix_from
from .codec import (
    ALPHABET_MAX,
    ALPHABET_MIN,
    SIGMA_MAX,
    SIGMA_MIN,
    build_cdf,
    decode_symbols,
    encode_symbols,
    estimate_rate,
    round_half_away,
)
from .config import ModelConfig
from .errors import CorruptionError, ShapeError
from .weights import WeightStore

# live taps of the spatial context kernel: offsets with odd parity reach
# opposite-color positions only
SPATIAL_TAP_MASK = np.array(
    [[(a + b) % 2 for b in range(5)] for a in range(5)], dtype=np.float64
)


@dataclass(frozen=True)
class GaussianParams:
    """Per-position entropy model parameters for one coding unit."""

    mu: np.ndarray  # (c, h, w)
    sigma: np.ndarray  # (c, h, w), clamped to [SIGMA_MIN, SIGMA_MAX]


@dataclass(frozen=True)
class CodingUnit:
    """One schedule step: a channel chunk restricted to one parity."""

    chunk: int
    anchor: bool
    channels: tuple[int, int]  # [start, stop) in latent channel order


def coding_schedule(config: ModelConfig) -> list[CodingUnit]:
    """Chunk-major schedule, anchors before non-anchors inside each chunk."""
    units = []
    start = 0
    for i, ck in enumerate(config.chunk_channels):
        span = (start, start + ck)
        units.append(CodingUnit(chunk=i, anchor=True, channels=span))
        units.append(CodingUnit(chunk=i, anchor=False, channels=span))
        start += ck
    return units


def checkerboard_mask(h: int, w: int) -> np.ndarray:
    """Boolean (h, w) mask, True at anchor positions (row + column even)."""
    r = np.arange(h)[:, None]
    c = np.arange(w)[None, :]
    return (r + c) % 2 == 0


def checkerboard_split(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero-filled anchor and non-anchor copies of a (c, h, w) tensor."""
    if t.ndim != 3:
        raise ShapeError(f"checkerboard_split: expected (c, h, w), got {t.shape}")
    mask = checkerboard_mask(t.shape[1], t.shape[2])
    anchors = np.where(mask, t, 0)
    others = np.where(mask, 0, t)
    return anchors, others


def checkerboard_merge(anchors: np.ndarray, others: np.ndarray) -> np.ndarray:
    """Inverse of :func:`checkerboard_split`."""
    if anchors.shape != others.shape:
        raise ShapeError(
            f"checkerboard_merge: shapes {anchors.shape} and {others.shape} differ"
        )
    mask = checkerboard_mask(anchors.shape[1], anchors.shape[2])
    return np.where(mask, anchors, others)


def spatial_context(
    decoded_anchors: np.ndarray, kernel: np.ndarray, anchor_pass: bool
) -> np.ndarray:
    """Masked 5x5 bias-free convolution over the decoded anchor plane.

    Args:
        decoded_anchors: (c, h, w) plane holding decoded anchors, zeros
            elsewhere.
        kernel: (2c, c, 5, 5) weights; taps at even-parity offsets are
            forced to zero regardless of their stored values.
        anchor_pass: the anchor pass has nothing decoded yet and receives
            an all-zero context.
    """
    c2, c, kh, kw = kernel.shape
    if (kh, kw) != (5, 5) or c2 != 2 * c:
        raise ShapeError(f"spatial_context: expected (2c, c, 5, 5) kernel, got {kernel.shape}")
    if decoded_anchors.shape[0] != c:
        raise ShapeError(
            f"spatial_context: plane has {decoded_anchors.shape[0]} channels, kernel expects {c}"
        )
    if anchor_pass:
        return np.zeros((c2,) + decoded_anchors.shape[1:], dtype=decoded_anchors.dtype)
    masked = kernel * SPATIAL_TAP_MASK.astype(kernel.dtype)
    return nn.conv2d(decoded_anchors, masked, bias=None, stride=1, pad=2)


def channel_context(
    decoded_chunks: list[np.ndarray],
    store: WeightStore,
    chunk_index: int,
    shape: tuple[int, int],
    dtype,
) -> np.ndarray:
    """Context from earlier chunks; zeros for the first chunk."""
    cfg = store.config
    h, w = shape
    if chunk_index == 0:
        return np.zeros((cfg.context_width, h, w), dtype=dtype)
    x = np.concatenate(decoded_chunks, axis=0)
    expected = sum(cfg.chunk_channels[:chunk_index])
    if x.shape[0] != expected:
        raise ShapeError(
            f"channel_context: {x.shape[0]} decoded channels, expected {expected}"
        )
    t = nn.conv2d(x, store[f"ctx.ch.k{chunk_index}.proj.w"], store[f"ctx.ch.k{chunk_index}.proj.b"])
    for j in range(2):
        t = birwkv_block(t, block_from(store.get, f"ctx.ch.k{chunk_index}.b{j}"))
    return t


def aggregate_params(
    phi_sp: np.ndarray,
    phi_ch: np.ndarray,
    phi_hp: np.ndarray,
    store: WeightStore,
    chunk_index: int,
    anchor: bool,
) -> GaussianParams:
    """Fuse the three context parts into per-position (mu, sigma).

    The two pointwise mix trunks are shared between the parity passes; only
    the final linear head differs.  Strictly per-position: the prediction at
    a site depends on the context vectors at that site alone.
    """
    if not (phi_sp.shape[1:] == phi_ch.shape[1:] == phi_hp.shape[1:]):
        raise ShapeError(
            f"aggregate_params: context grids differ: {phi_sp.shape} {phi_ch.shape} {phi_hp.shape}"
        )
    h, w = phi_sp.shape[1:]
    cfg = store.config
    x = np.concatenate([phi_sp, phi_ch, phi_hp], axis=0)
    for j in range(2):
        mix = channel_mix_from(store.get, f"agg.k{chunk_index}.m{j}", with_shift=False)
        x = x + channel_mix(x, mix)
    part = "a" if anchor else "n"
    head_w = store[f"agg.k{chunk_index}.head.{part}.w"]
    head_b = store[f"agg.k{chunk_index}.head.{part}.b"]
    out = nn.to_spatial(nn.linear(nn.to_sequence(x), head_w, head_b), h, w)
    ck = out.shape[0] // 2
    mu = out[:ck]
    with np.errstate(over="ignore"):
        sigma = np.clip(np.exp(out[ck:]), SIGMA_MIN, SIGMA_MAX)
    return GaussianParams(mu=mu, sigma=sigma)


def quantize_shifted(y: np.ndarray, mu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean-shifted quantization.

    Returns ``(symbols, y_hat)`` where ``symbols = round(y - mu)`` with ties
    away from zero and ``y_hat = symbols + mu``, so ``|y_hat - y| <= 0.5``
    elementwise.
    """
    if y.shape != mu.shape:
        raise ShapeError(f"quantize_shifted: y {y.shape} vs mu {mu.shape}")
    symbols = round_half_away(y - mu)
    return symbols, (symbols + mu).astype(y.dtype, copy=False)


# ---------------------------------------------------------------------------
# schedule execution


@dataclass
class UnitRecord:
    """Book-keeping for one executed coding unit."""

    unit: CodingUnit
    params: GaussianParams
    est_bits: float
    n_symbols: int


@dataclass
class ScheduleResult:
    y_hat: np.ndarray
    segments: list[bytes]  # encode only
    records: list[UnitRecord]


def _unit_symbols(
    chunk_y: np.ndarray, params: GaussianParams, mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Clamped transmitted symbols and selected (mu, sigma) for one parity."""
    mu_sel = params.mu[:, mask]
    sig_sel = params.sigma[:, mask]
    raw = round_half_away(chunk_y[:, mask].astype(np.float64) - mu_sel.astype(np.float64))
    symbols = np.clip(raw, ALPHABET_MIN, ALPHABET_MAX).astype(np.int64)
    return symbols, mu_sel, sig_sel


def run_schedule_encode(
    y: np.ndarray, phi_hp: np.ndarray, store: WeightStore
) -> ScheduleResult:
    """Quantize and code the latent unit by unit.

    Context for every unit is computed from reconstructions only, so the
    decoder can reproduce the identical parameter sequence.
    """
    cfg = store.config
    if y.shape[0] != cfg.latent_channels:
        raise ShapeError(f"run_schedule_encode: latent has {y.shape[0]} channels")
    if phi_hp.shape[1:] != y.shape[1:]:
        raise ShapeError(
            f"run_schedule_encode: hyper context grid {phi_hp.shape[1:]} vs latent {y.shape[1:]}"
        )
    h, w = y.shape[1:]
    anchors_mask = checkerboard_mask(h, w)
    y_hat = np.empty_like(y)
    decoded: list[np.ndarray] = []
    segments: list[bytes] = []
    records: list[UnitRecord] = []
    start = 0
    for i, ck in enumerate(cfg.chunk_channels):
        chunk_y = y[start : start + ck]
        phi_ch = channel_context(decoded, store, i, (h, w), y.dtype)
        plane = np.zeros((ck, h, w), dtype=y.dtype)
        for anchor in (True, False):
            phi_sp = spatial_context(plane, store[f"ctx.sp.k{i}.w"], anchor_pass=anchor)
            params = aggregate_params(phi_sp, phi_ch, phi_hp, store, i, anchor)
            mask = anchors_mask if anchor else ~anchors_mask
            symbols, mu_sel, sig_sel = _unit_symbols(chunk_y, params, mask)
            cdfs = build_cdf(mu_sel.ravel(), sig_sel.ravel())
            index = np.arange(symbols.size)
            flat = symbols.ravel()
            segments.append(encode_symbols(flat, cdfs, index))
            est = estimate_rate(flat, cdfs, index)
            plane[:, mask] = (symbols + mu_sel.astype(np.float64)).astype(y.dtype)
            records.append(
                UnitRecord(
                    unit=CodingUnit(chunk=i, anchor=anchor, channels=(start, start + ck)),
                    params=params,
                    est_bits=est,
                    n_symbols=symbols.size,
                )
            )
        y_hat[start : start + ck] = plane
        decoded.append(plane)
        start += ck
    return ScheduleResult(y_hat=y_hat, segments=segments, records=records)


def run_schedule_decode(
    segments: list[bytes],
    phi_hp: np.ndarray,
    store: WeightStore,
) -> ScheduleResult:
    """Decode unit segments back into the quantized latent."""
    cfg = store.config
    h, w = phi_hp.shape[1:]
    units = coding_schedule(cfg)
    if len(segments) != len(units):
        raise CorruptionError(
            f"expected {len(units)} unit segments, got {len(segments)}"
        )
    anchors_mask = checkerboard_mask(h, w)
    dtype = phi_hp.dtype
    y_hat = np.empty((cfg.latent_channels, h, w), dtype=dtype)
    decoded: list[np.ndarray] = []
    records: list[UnitRecord] = []
    seg_iter = iter(segments)
    start = 0
    for i, ck in enumerate(cfg.chunk_channels):
        phi_ch = channel_context(decoded, store, i, (h, w), dtype)
        plane = np.zeros((ck, h, w), dtype=dtype)
        for anchor in (True, False):
            phi_sp = spatial_context(plane, store[f"ctx.sp.k{i}.w"], anchor_pass=anchor)
            params = aggregate_params(phi_sp, phi_ch, phi_hp, store, i, anchor)
            mask = anchors_mask if anchor else ~anchors_mask
            mu_sel = params.mu[:, mask]
            sig_sel = params.sigma[:, mask]
            n = mu_sel.size
            cdfs = build_cdf(mu_sel.ravel(), sig_sel.ravel())
            symbols = decode_symbols(next(seg_iter), cdfs, np.arange(n))
            symbols = symbols.reshape(mu_sel.shape)
            est = estimate_rate(symbols.ravel(), cdfs, np.arange(n))
            plane[:, mask] = (symbols + mu_sel.astype(np.float64)).astype(dtype)
            records.append(
                UnitRecord(
                    unit=CodingUnit(chunk=i, anchor=anchor, channels=(start, start + ck)),
                    params=params,
                    est_bits=est,
                    n_symbols=n,
                )
            )
        y_hat[start : start + ck] = plane
        decoded.append(plane)
        start += ck
    return ScheduleResult(y_hat=y_hat, segments=[], records=records)
