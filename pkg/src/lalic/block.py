"""Bi-RWKV residual block: spatial token mixing plus channel mixing.

Both halves start with layer normalization followed by a reparameterizable
multi-scale depthwise shift ("omni-shift"), then apply bias-free projections.
The spatial half runs the bidirectional WKV kernel over the raster-ordered
token sequence and gates it with a sigmoid receptance; the channel half is a
squared-ReLU MLP gated the same way.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import nn
from .errors import ShapeError
from .wkv import WkvParams, biwkv_scan

LN_EPS = 1e-5

Getter = Callable[[str], np.ndarray]


# ---------------------------------------------------------------------------
# omni-shift


@dataclass(frozen=True)
class OmniShiftParams:
    """Branches of the multi-scale depthwise shift.

    An identity branch and depthwise kernels of size 1, 3, and 5, each with a
    per-channel scale.  At inference the four branches collapse into a single
    5x5 depthwise kernel.
    """

    scale_id: np.ndarray  # (C,)
    scale_1: np.ndarray  # (C,)
    scale_3: np.ndarray  # (C,)
    scale_5: np.ndarray  # (C,)
    kern_1: np.ndarray  # (C, 1, 1, 1)
    kern_3: np.ndarray  # (C, 1, 3, 3)
    kern_5: np.ndarray  # (C, 1, 5, 5)


def omni_shift_merge(p: OmniShiftParams) -> np.ndarray:
    """Collapse the omni-shift branches into one (C, 1, 5, 5) kernel.

    Smaller kernels are zero-padded to 5x5 around the center tap and the
    identity branch lands on the center tap alone, so applying the merged
    kernel equals summing the branch outputs.
    """
    c = p.kern_5.shape[0]
    if p.kern_5.shape != (c, 1, 5, 5) or p.kern_3.shape != (c, 1, 3, 3) or p.kern_1.shape != (c, 1, 1, 1):
        raise ShapeError("omni_shift_merge: branch kernels have inconsistent shapes")
    merged = p.scale_5[:, None, None, None] * p.kern_5
    merged[:, :, 1:4, 1:4] += p.scale_3[:, None, None, None] * p.kern_3
    merged[:, 0, 2, 2] += p.scale_1 * p.kern_1[:, 0, 0, 0]
    merged[:, 0, 2, 2] += p.scale_id
    return merged


def omni_shift(x: np.ndarray, p: OmniShiftParams) -> np.ndarray:
    """Apply the merged omni-shift kernel, preserving spatial shape."""
    return nn.depthwise_conv2d(x, omni_shift_merge(p), pad=2)


# ---------------------------------------------------------------------------
# mixing halves


@dataclass(frozen=True)
class SpatialMixParams:
    ln_gamma: np.ndarray
    ln_beta: np.ndarray
    shift: OmniShiftParams
    w_r: np.ndarray  # (C, C)
    w_k: np.ndarray  # (C, C)
    w_v: np.ndarray  # (C, C)
    w_o: np.ndarray  # (C, C)
    wkv: WkvParams


@dataclass(frozen=True)
class ChannelMixParams:
    ln_gamma: np.ndarray
    ln_beta: np.ndarray
    shift: OmniShiftParams | None  # None for strictly pointwise variants
    w_r: np.ndarray  # (C, C)
    w_k: np.ndarray  # (H, C)
    w_v: np.ndarray  # (C, H)


class BlockParams(NamedTuple):
    spatial: SpatialMixParams
    channel: ChannelMixParams


def spatial_mix(f: np.ndarray, p: SpatialMixParams) -> np.ndarray:
    """Token-mixing half: shift, project, bidirectional WKV, gate, project."""
    if f.ndim != 3:
        raise ShapeError(f"spatial_mix: expected (C, H, W), got {f.shape}")
    c, h, w = f.shape
    x = nn.layer_norm(nn.to_sequence(f), p.ln_gamma, p.ln_beta, eps=LN_EPS)
    xs = nn.to_sequence(omni_shift(nn.to_spatial(x, h, w), p.shift))
    r = nn.linear(xs, p.w_r)
    k = nn.linear(xs, p.w_k)
    v = nn.linear(xs, p.w_v)
    gated = nn.sigmoid(r) * biwkv_scan(k, v, p.wkv)
    return nn.to_spatial(nn.linear(gated, p.w_o), h, w)


def channel_mix(f: np.ndarray, p: ChannelMixParams) -> np.ndarray:
    """Feature-mixing half: shift, squared-ReLU MLP, sigmoid gate."""
    if f.ndim != 3:
        raise ShapeError(f"channel_mix: expected (C, H, W), got {f.shape}")
    c, h, w = f.shape
    x = nn.layer_norm(nn.to_sequence(f), p.ln_gamma, p.ln_beta, eps=LN_EPS)
    if p.shift is not None:
        x = nn.to_sequence(omni_shift(nn.to_spatial(x, h, w), p.shift))
    r = nn.linear(x, p.w_r)
    vc = nn.linear(nn.squared_relu(nn.linear(x, p.w_k)), p.w_v)
    return nn.to_spatial(nn.sigmoid(r) * vc, h, w)


def birwkv_block(f: np.ndarray, params: BlockParams) -> np.ndarray:
    """Full residual block: ``f + spatial``, then ``+ channel`` on the sum."""
    f1 = f + spatial_mix(f, params.spatial)
    return f1 + channel_mix(f1, params.channel)


# ---------------------------------------------------------------------------
# parameter assembly from a flat name -> array mapping


def omni_shift_from(get: Getter, prefix: str) -> OmniShiftParams:
    return OmniShiftParams(
        scale_id=get(f"{prefix}.s0"),
        scale_1=get(f"{prefix}.s1"),
        scale_3=get(f"{prefix}.s3"),
        scale_5=get(f"{prefix}.s5"),
        kern_1=get(f"{prefix}.k1"),
        kern_3=get(f"{prefix}.k3"),
        kern_5=get(f"{prefix}.k5"),
    )


def spatial_mix_from(get: Getter, prefix: str) -> SpatialMixParams:
    return SpatialMixParams(
        ln_gamma=get(f"{prefix}.ln.g"),
        ln_beta=get(f"{prefix}.ln.b"),
        shift=omni_shift_from(get, f"{prefix}.shift"),
        w_r=get(f"{prefix}.wr"),
        w_k=get(f"{prefix}.wk"),
        w_v=get(f"{prefix}.wv"),
        w_o=get(f"{prefix}.wo"),
        wkv=WkvParams(decay=get(f"{prefix}.w"), bonus=get(f"{prefix}.u")),
    )


def channel_mix_from(get: Getter, prefix: str, with_shift: bool = True) -> ChannelMixParams:
    return ChannelMixParams(
        ln_gamma=get(f"{prefix}.ln.g"),
        ln_beta=get(f"{prefix}.ln.b"),
        shift=omni_shift_from(get, f"{prefix}.shift") if with_shift else None,
        w_r=get(f"{prefix}.wr"),
        w_k=get(f"{prefix}.wk"),
        w_v=get(f"{prefix}.wv"),
    )


def block_from(get: Getter, prefix: str) -> BlockParams:
    return BlockParams(
        spatial=spatial_mix_from(get, f"{prefix}.sm"),
        channel=channel_mix_from(get, f"{prefix}.cm"),
    )
