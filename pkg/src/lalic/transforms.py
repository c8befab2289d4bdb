"""Analysis, synthesis, and hyper transforms.

The analysis transform maps an RGB image in [0, 1] with extents that are
multiples of 64 down to a latent at 1/16 resolution through four strided
convolutions interleaved with Bi-RWKV residual blocks.  The synthesis
transform mirrors it with transposed convolutions; its stages reuse the
shallower stage widths so the decoder stays lighter than a full mirror.
The hyper pair compresses the latent a further 4x each way and expands the
quantized hyper latent into a per-position conditioning vector of width
``2 * latent_channels``.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .block import birwkv_block, block_from
from .config import ModelConfig
from .errors import ShapeError
from .weights import WeightStore


def _run_blocks(t: np.ndarray, store: WeightStore, prefix: str, count: int) -> np.ndarray:
    for j in range(count):
        t = birwkv_block(t, block_from(store.get, f"{prefix}.b{j}"))
    return t


def analysis(x: np.ndarray, store: WeightStore) -> np.ndarray:
    """Image ``(3, H, W)`` in [0, 1] to latent ``(M, H/16, W/16)``.

    H and W must be multiples of 64 so all later resamplings are exact.
    """
    cfg = store.config
    if x.ndim != 3 or x.shape[0] != 3:
        raise ShapeError(f"analysis: expected (3, H, W) input, got {x.shape}")
    if x.shape[1] % 64 or x.shape[2] % 64:
        raise ShapeError(f"analysis: extents {x.shape[1:]} must be multiples of 64")
    pad = cfg.main_kernel // 2
    t = x
    for i, (cw, nb) in enumerate(zip(cfg.stage_widths, cfg.stage_blocks)):
        t = nn.conv2d(t, store[f"ga.d{i}.w"], store[f"ga.d{i}.b"], stride=2, pad=pad)
        t = _run_blocks(t, store, f"ga.s{i}", nb)
    return t


def synthesis(y: np.ndarray, store: WeightStore) -> np.ndarray:
    """Latent ``(M, h, w)`` back to an RGB image clamped to [0, 1]."""
    cfg = store.config
    if y.ndim != 3 or y.shape[0] != cfg.latent_channels:
        raise ShapeError(
            f"synthesis: expected ({cfg.latent_channels}, h, w) latent, got {y.shape}"
        )
    pad = cfg.main_kernel // 2
    widths = cfg.stage_widths
    stages = [
        (widths[2], cfg.stage_blocks[3]),
        (widths[1], cfg.stage_blocks[2]),
        (widths[0], cfg.stage_blocks[1]),
    ]
    t = y
    for i, (_, nb) in enumerate(stages):
        t = nn.deconv2d(t, store[f"gs.u{i}.w"], store[f"gs.u{i}.b"], stride=2, pad=pad, out_pad=1)
        t = _run_blocks(t, store, f"gs.s{i}", nb)
    t = nn.deconv2d(t, store["gs.u3.w"], store["gs.u3.b"], stride=2, pad=pad, out_pad=1)
    return np.clip(t, 0.0, 1.0)


def hyper_analysis(y: np.ndarray, store: WeightStore) -> np.ndarray:
    """Latent ``(M, h, w)`` to hyper latent ``(N, h/4, w/4)``."""
    cfg = store.config
    if y.ndim != 3 or y.shape[0] != cfg.latent_channels:
        raise ShapeError(
            f"hyper_analysis: expected ({cfg.latent_channels}, h, w) latent, got {y.shape}"
        )
    if y.shape[1] % 4 or y.shape[2] % 4:
        raise ShapeError(f"hyper_analysis: latent extents {y.shape[1:]} must be multiples of 4")
    pad = cfg.hyper_kernel // 2
    t = nn.conv2d(y, store["ha.c0.w"], store["ha.c0.b"], stride=1, pad=pad)
    t = birwkv_block(t, block_from(store.get, "ha.b0"))
    t = nn.conv2d(t, store["ha.c1.w"], store["ha.c1.b"], stride=2, pad=pad)
    t = birwkv_block(t, block_from(store.get, "ha.b1"))
    t = nn.conv2d(t, store["ha.c2.w"], store["ha.c2.b"], stride=2, pad=pad)
    return t


def hyper_synthesis(z_hat: np.ndarray, store: WeightStore) -> np.ndarray:
    """Quantized hyper latent ``(N, h/4, w/4)`` to conditioning ``(2M, h, w)``."""
    cfg = store.config
    if z_hat.ndim != 3 or z_hat.shape[0] != cfg.hyper_channels:
        raise ShapeError(
            f"hyper_synthesis: expected ({cfg.hyper_channels}, h, w) input, got {z_hat.shape}"
        )
    pad = cfg.hyper_kernel // 2
    t = nn.deconv2d(z_hat, store["hs.u0.w"], store["hs.u0.b"], stride=2, pad=pad, out_pad=1)
    t = birwkv_block(t, block_from(store.get, "hs.b0"))
    t = nn.deconv2d(t, store["hs.u1.w"], store["hs.u1.b"], stride=2, pad=pad, out_pad=1)
    t = birwkv_block(t, block_from(store.get, "hs.b1"))
    t = nn.conv2d(t, store["hs.c2.w"], store["hs.c2.b"], stride=1, pad=pad)
    return t
