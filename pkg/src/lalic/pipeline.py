"""End-to-end coding pipeline, evaluation, benchmarking, and selftest.

Bitstream container (little-endian):

    magic "LALB" | u8 version | u32 orig_w | u32 orig_h | u32 pad_w |
    u32 pad_h | u64 config digest | u64 weight digest | u8 has_seed |
    u64 seed | u16 segment count | count * u32 segment lengths |
    segment bytes...

The first segment is the hyper latent, followed by one segment per coding
unit.  Decoding checks both digests against the supplied weights before
touching any payload, and requires the payload length to match the header
exactly.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass

import numpy as np

from . import image as image_io
from . import nn
from .codec import (
    FactorizedPrior,
    decode_hyper,
    encode_hyper,
    prior_from_store,
    round_half_away,
)
from .config import ModelConfig
from .entropy import ScheduleResult, run_schedule_decode, run_schedule_encode
from .errors import ConfigMismatchError, CorruptionError, FormatError
from .transforms import analysis, hyper_analysis, hyper_synthesis, synthesis
from .weights import WeightStore

BITSTREAM_MAGIC = b"LALB"
BITSTREAM_VERSION = 1


@dataclass(frozen=True)
class BitstreamHeader:
    orig_w: int
    orig_h: int
    pad_w: int
    pad_h: int
    config_digest: int
    weight_digest: int
    seed: int | None
    segment_lengths: tuple[int, ...]

    def pack(self) -> bytes:
        head = struct.pack(
            "<4sBIIIIQQBQH",
            BITSTREAM_MAGIC,
            BITSTREAM_VERSION,
            self.orig_w,
            self.orig_h,
            self.pad_w,
            self.pad_h,
            self.config_digest,
            self.weight_digest,
            0 if self.seed is None else 1,
            0 if self.seed is None else self.seed,
            len(self.segment_lengths),
        )
        return head + struct.pack(f"<{len(self.segment_lengths)}I", *self.segment_lengths)

    @classmethod
    def unpack(cls, data: bytes) -> tuple["BitstreamHeader", int]:
        base = struct.calcsize("<4sBIIIIQQBQH")
        if len(data) < 4 or data[:4] != BITSTREAM_MAGIC:
            raise FormatError("not a coded bitstream (bad magic)")
        if len(data) < base:
            raise CorruptionError("truncated bitstream header")
        magic, version, ow, oh, pw, ph, cfg_d, w_d, has_seed, seed, nseg = struct.unpack_from(
            "<4sBIIIIQQBQH", data, 0
        )
        if version != BITSTREAM_VERSION:
            raise FormatError(f"unsupported bitstream version {version}")
        if len(data) < base + 4 * nseg:
            raise CorruptionError("truncated bitstream segment table")
        lengths = struct.unpack_from(f"<{nseg}I", data, base)
        header = cls(
            orig_w=ow,
            orig_h=oh,
            pad_w=pw,
            pad_h=ph,
            config_digest=cfg_d,
            weight_digest=w_d,
            seed=seed if has_seed else None,
            segment_lengths=lengths,
        )
        return header, base + 4 * nseg


@dataclass
class RdReport:
    """Rate-distortion summary for one image."""

    bpp: float
    psnr: float
    mse: float
    est_bits: float
    actual_bits: int
    lam: float
    loss: float

    def lines(self) -> list[str]:
        psnr = "inf" if np.isinf(self.psnr) else f"{self.psnr:.4f}"
        return [
            f"bpp            {self.bpp:.6f}",
            f"psnr_db        {psnr}",
            f"bits_estimated {self.est_bits:.1f}",
            f"bits_actual    {self.actual_bits}",
            f"rd_loss        {self.loss:.4f} (lambda={self.lam})",
        ]


def eval_rd(
    orig: np.ndarray, recon: np.ndarray, total_bits: int, lam: float, est_bits: float | None = None
) -> RdReport:
    """Rate-distortion numbers between two uint8 images.

    Distortion is mean squared error over RGB in [0, 255]; the combined
    objective weighs that error by ``lam`` and adds the total bit count.
    """
    if orig.shape != recon.shape:
        raise ConfigMismatchError(f"image shapes differ: {orig.shape} vs {recon.shape}")
    diff01 = orig.astype(np.float64) / 255.0 - recon.astype(np.float64) / 255.0
    mse01 = float(np.mean(diff01 * diff01))
    mse255 = mse01 * 255.0 * 255.0
    psnr = float("inf") if mse255 == 0 else 10.0 * np.log10(255.0 * 255.0 / mse255)
    pixels = orig.shape[1] * orig.shape[2]
    return RdReport(
        bpp=total_bits / pixels,
        psnr=psnr,
        mse=mse255,
        est_bits=float(est_bits) if est_bits is not None else float("nan"),
        actual_bits=total_bits,
        lam=lam,
        loss=lam * mse255 + total_bits,
    )


# ---------------------------------------------------------------------------
# compress / decompress


@dataclass
class CompressResult:
    bitstream: bytes
    header: BitstreamHeader
    report: RdReport
    y: np.ndarray
    y_hat: np.ndarray
    z_hat: np.ndarray
    recon: np.ndarray  # uint8, original extents
    schedule: ScheduleResult
    est_bits_z: float
    est_bits_y: float


@dataclass
class DecompressResult:
    image: np.ndarray  # uint8, original extents
    header: BitstreamHeader
    y_hat: np.ndarray
    z_hat: np.ndarray
    schedule: ScheduleResult


def compress_array(img: np.ndarray, store: WeightStore, lam: float) -> CompressResult:
    """Code a uint8 (3, H, W) image into a standalone bitstream."""
    dtype = store.dtype
    orig_h, orig_w = img.shape[1:]
    x = image_io.pad_to_multiple(image_io.to_unit_float(img, dtype), 64)
    pad_h, pad_w = x.shape[1:]

    y = analysis(x, store)
    z = hyper_analysis(y, store)
    z_hat = np.clip(round_half_away(z.astype(np.float64)), -127, 128).astype(dtype)
    prior = prior_from_store(store)
    z_bytes, z_bits = encode_hyper(z_hat, prior)

    phi_hp = hyper_synthesis(z_hat, store)
    sched = run_schedule_encode(y, phi_hp, store)

    segments = [z_bytes] + sched.segments
    header = BitstreamHeader(
        orig_w=orig_w,
        orig_h=orig_h,
        pad_w=pad_w,
        pad_h=pad_h,
        config_digest=store.config.digest(),
        weight_digest=store.digest(),
        seed=store.seed,
        segment_lengths=tuple(len(s) for s in segments),
    )
    bitstream = header.pack() + b"".join(segments)

    recon_pad = synthesis(sched.y_hat, store)
    recon = image_io.from_unit_float(recon_pad[:, :orig_h, :orig_w])
    est_y = float(sum(r.est_bits for r in sched.records))
    payload_bits = 8 * sum(len(s) for s in segments)
    report = eval_rd(img, recon, payload_bits, lam, est_bits=z_bits + est_y)
    return CompressResult(
        bitstream=bitstream,
        header=header,
        report=report,
        y=y,
        y_hat=sched.y_hat,
        z_hat=z_hat,
        recon=recon,
        schedule=sched,
        est_bits_z=z_bits,
        est_bits_y=est_y,
    )


def decompress_array(data: bytes, store: WeightStore) -> DecompressResult:
    """Decode a bitstream produced by :func:`compress_array`."""
    header, off = BitstreamHeader.unpack(data)
    if header.config_digest != store.config.digest():
        raise ConfigMismatchError(
            "bitstream was coded under a different model configuration"
        )
    if header.weight_digest != store.digest():
        raise ConfigMismatchError("bitstream was coded with different weights")
    if header.pad_w % 64 or header.pad_h % 64:
        raise CorruptionError(f"padded extents {header.pad_w}x{header.pad_h} not multiples of 64")
    if header.orig_w > header.pad_w or header.orig_h > header.pad_h:
        raise CorruptionError("original extents exceed padded extents")
    total = sum(header.segment_lengths)
    if len(data) - off != total:
        raise CorruptionError(
            f"payload is {len(data) - off} bytes, header promises {total}"
        )
    n_units = 2 * len(store.config.chunk_channels)
    if len(header.segment_lengths) != 1 + n_units:
        raise CorruptionError(
            f"expected {1 + n_units} segments, header has {len(header.segment_lengths)}"
        )
    segments = []
    for ln in header.segment_lengths:
        segments.append(data[off : off + ln])
        off += ln

    dtype = store.dtype
    zh = header.pad_h // 64
    zw = header.pad_w // 64
    prior = prior_from_store(store)
    z_hat = decode_hyper(segments[0], prior, (store.config.hyper_channels, zh, zw)).astype(dtype)
    phi_hp = hyper_synthesis(z_hat, store)
    sched = run_schedule_decode(segments[1:], phi_hp, store)
    recon_pad = synthesis(sched.y_hat, store)
    recon = image_io.from_unit_float(recon_pad[:, : header.orig_h, : header.orig_w])
    return DecompressResult(
        image=recon, header=header, y_hat=sched.y_hat, z_hat=z_hat, schedule=sched
    )


# ---------------------------------------------------------------------------
# benchmarking


@dataclass
class BenchRow:
    mechanism: str
    width: int
    height: int
    ops: int
    seconds: float | None


def attention_inventory(config: ModelConfig, h: int, w: int) -> list[tuple[int, int]]:
    """(T, C) of every attention application for an h x w input.

    Covers the analysis/synthesis/hyper transform blocks and the entropy
    model's channel-context blocks at the latent resolution.
    """
    out: list[tuple[int, int]] = []
    scale = 2
    for cw, nb in zip(config.stage_widths, config.stage_blocks):
        t = (h // scale) * (w // scale)
        out += [(t, cw)] * nb
        scale *= 2
    gs_stages = [
        (config.stage_widths[2], config.stage_blocks[3]),
        (config.stage_widths[1], config.stage_blocks[2]),
        (config.stage_widths[0], config.stage_blocks[1]),
    ]
    scale = 16
    for cw, nb in gs_stages:
        t = (h // scale) * (w // scale)
        out += [(t, cw)] * nb
        scale //= 2
    th = (h // 16) * (w // 16)
    # hyper analysis blocks at latent and half-latent resolution, and the
    # mirrored hyper synthesis blocks
    out += [(th, config.hyper_channels), (th // 4, config.hyper_channels)]
    out += [(th // 4, config.hyper_channels), (th, config.hyper_channels)]
    # channel-context blocks, two per chunk after the first
    out += [(th, config.context_width)] * (2 * (len(config.chunk_channels) - 1))
    return out


def _time_mechanism(mechanism: str, inventory: list[tuple[int, int]], rng) -> float | None:
    """Wall time of one pass of the mechanism's kernel over the inventory.

    Mechanisms without a kernel in this package report no measurement.
    """
    from . import wkv

    if mechanism not in ("aft", "aft-shift", "biwkv-shift"):
        return None
    total = 0.0
    for t_len, c in inventory:
        k = rng.standard_normal((t_len, c)).astype(np.float32)
        v = rng.standard_normal((t_len, c)).astype(np.float32)
        if mechanism == "biwkv-shift":
            params = wkv.WkvParams(
                decay=rng.standard_normal(c).astype(np.float32),
                bonus=rng.standard_normal(c).astype(np.float32),
            )
            t0 = time.perf_counter()
            wkv.biwkv_scan(k, v, params)
            total += time.perf_counter() - t0
        else:
            t0 = time.perf_counter()
            wkv.aft_reference(k, v)
            total += time.perf_counter() - t0
        if mechanism.endswith("-shift"):
            x = rng.standard_normal((c, 1, t_len)).astype(np.float32)
            kern = rng.standard_normal((c, 1, 5, 5)).astype(np.float32)
            t0 = time.perf_counter()
            nn.depthwise_conv2d(x, kern, pad=2)
            total += time.perf_counter() - t0
    return total


def bench(
    config: ModelConfig,
    resolutions: list[tuple[int, int]],
    mechanisms: list[str],
    measure: bool = True,
    seed: int = 0,
) -> list[BenchRow]:
    """Attention op counts (and wall times where a kernel exists)."""
    from .wkv import op_count

    rng = np.random.default_rng(seed)
    rows: list[BenchRow] = []
    for w, h in resolutions:
        if w % 64 or h % 64:
            raise ConfigMismatchError(f"bench resolution {w}x{h} not a multiple of 64")
        inventory = attention_inventory(config, h, w)
        for mech in mechanisms:
            ops = sum(op_count(mech, t, c) for t, c in inventory)
            seconds = _time_mechanism(mech, inventory, rng) if measure else None
            rows.append(BenchRow(mechanism=mech, width=w, height=h, ops=ops, seconds=seconds))
    return rows


def bench_r2(rows: list[BenchRow]) -> float:
    """R^2 of op count against pixel count for one mechanism's rows."""
    pixels = np.array([r.width * r.height for r in rows], dtype=np.float64)
    ops = np.array([r.ops for r in rows], dtype=np.float64)
    if len(rows) < 2:
        return 1.0
    coeffs = np.polyfit(pixels, ops, 1)
    pred = np.polyval(coeffs, pixels)
    ss_res = float(np.sum((ops - pred) ** 2))
    ss_tot = float(np.sum((ops - ops.mean()) ** 2))
    if ss_tot == 0:
        return 1.0
    return 1.0 - ss_res / ss_tot


# ---------------------------------------------------------------------------
# selftest


def _selftest_config() -> ModelConfig:
    return ModelConfig(
        stage_blocks=(1, 1, 1, 1),
        stage_channels=(8, 12, 16),
        latent_channels=24,
        hyper_channels=12,
        chunk_channels=(4, 8, 12),
        context_width=16,
    )


def selftest(f64: bool = False, _inject: str | None = None) -> list[tuple[str, bool, str]]:
    """Quick verification suites over every layer; returns (name, ok, detail).

    ``_inject`` deliberately breaks one suite (testing hook).
    """
    from . import wkv
    from .block import OmniShiftParams, omni_shift_merge
    from .codec import build_cdf, decode_symbols, encode_symbols
    from .weights import init_weights

    results: list[tuple[str, bool, str]] = []
    rng = np.random.default_rng(2024)
    dtype = np.float64 if f64 else np.float32
    tol = 1e-10 if f64 else 1e-5

    # 1. scan vs direct attention sums
    worst = 0.0
    for t_len, c in [(1, 3), (2, 1), (17, 4), (64, 8), (128, 2)]:
        k = rng.standard_normal((t_len, c)).astype(dtype)
        v = rng.standard_normal((t_len, c)).astype(dtype)
        p = wkv.WkvParams(
            decay=rng.standard_normal(c).astype(dtype),
            bonus=rng.standard_normal(c).astype(dtype),
        )
        ref = wkv.biwkv_reference(k, v, p)
        got = wkv.biwkv_scan(k, v, p)
        scale = max(float(np.max(np.abs(ref))), 1e-300)
        worst = max(worst, float(np.max(np.abs(got - ref))) / scale)
    results.append(("wkv-scan", worst <= tol, f"max rel err {worst:.3e} (tol {tol:g})"))

    # 2. analytic gradient vs central differences
    k = rng.standard_normal((5, 3))
    v = rng.standard_normal((5, 3))
    p = wkv.WkvParams(decay=rng.standard_normal(3), bonus=rng.standard_normal(3))
    g = rng.standard_normal((5, 3))
    dk, dv, dw, du = wkv.biwkv_backward(k, v, p, g)
    hstep = 1e-5
    err = 0.0

    def _loss(kk, vv, pp):
        return float((g * wkv.biwkv_reference(kk, vv, pp)).sum())

    for idx in [(0, 0), (3, 2), (4, 1)]:
        kp = k.copy(); kp[idx] += hstep
        km = k.copy(); km[idx] -= hstep
        num = (_loss(kp, v, p) - _loss(km, v, p)) / (2 * hstep)
        err = max(err, abs(num - dk[idx]))
    results.append(("wkv-gradient", err <= 1e-6, f"max abs err {err:.3e}"))

    # 3. omni-shift merge equivalence
    c = 6
    shift = OmniShiftParams(
        scale_id=rng.standard_normal(c),
        scale_1=rng.standard_normal(c),
        scale_3=rng.standard_normal(c),
        scale_5=rng.standard_normal(c),
        kern_1=rng.standard_normal((c, 1, 1, 1)),
        kern_3=rng.standard_normal((c, 1, 3, 3)),
        kern_5=rng.standard_normal((c, 1, 5, 5)),
    )
    x = rng.standard_normal((c, 7, 7))
    merged_out = nn.depthwise_conv2d(x, omni_shift_merge(shift), pad=2)
    branch_sum = (
        shift.scale_id[:, None, None] * x
        + shift.scale_1[:, None, None] * nn.depthwise_conv2d(x, shift.kern_1, pad=0)
        + shift.scale_3[:, None, None] * nn.depthwise_conv2d(x, shift.kern_3, pad=1)
        + shift.scale_5[:, None, None] * nn.depthwise_conv2d(x, shift.kern_5, pad=2)
    )
    merr = float(np.max(np.abs(merged_out - branch_sum)))
    results.append(("omni-shift-merge", merr <= 1e-6, f"max abs err {merr:.3e}"))

    # 4. codec round trip
    n = 5000
    mu = rng.uniform(-8, 8, n)
    sigma = np.exp(rng.uniform(np.log(0.04), np.log(256.0), n))
    cdfs = build_cdf(mu, sigma)
    sym = np.clip(np.round(rng.normal(mu, sigma)), -127, 128).astype(np.int64)
    blob = encode_symbols(sym, cdfs, np.arange(n))
    if _inject == "codec":
        blob = blob[:-2]
    try:
        back = decode_symbols(blob, cdfs, np.arange(n))
        ok = bool((back == sym).all())
        detail = f"{n} symbols, {len(blob)} bytes"
    except Exception as exc:  # truncated/corrupt stream
        ok = False
        detail = f"decode failed: {exc}"
    results.append(("codec-round-trip", ok, detail))

    # 5. end-to-end determinism on a tiny model
    cfg = _selftest_config()
    store = init_weights(cfg, seed=0)
    if f64:
        store = store.to_dtype(np.float64)
    img = (rng.random((3, 64, 64)) * 255).astype(np.uint8)
    enc1 = compress_array(img, store, lam=0.013)
    enc2 = compress_array(img, store, lam=0.013)
    dec = decompress_array(enc1.bitstream, store)
    ok = (
        enc1.bitstream == enc2.bitstream
        and np.array_equal(dec.y_hat, enc1.y_hat)
        and np.array_equal(dec.image, enc1.recon)
    )
    gap = float(np.max(np.abs(enc1.y_hat - enc1.y)))
    ok = ok and gap <= 0.5
    results.append(
        ("pipeline-determinism", ok, f"{len(enc1.bitstream)} bytes, max |y_hat - y| {gap:.4f}")
    )
    return results
