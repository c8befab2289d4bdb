"""Dense tensor primitives for the codec.

All image-like tensors are channels-first ``(C, H, W)`` and sequence-like
tensors are ``(T, C)`` with tokens in row-major raster order.  Every function
here is pure, allocates its output, and uses a fixed reduction order so that
repeated calls on identical inputs produce bit-identical results on the same
platform.  Convolutions are lowered to a single matrix product; the transposed
convolution is the exact adjoint of ``conv2d`` (same kernel tensor, scatter
instead of gather).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ShapeError


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


# ---------------------------------------------------------------------------
# layout helpers


def to_sequence(x: np.ndarray) -> np.ndarray:
    """Reshape ``(C, H, W)`` to ``(H*W, C)`` token-major order."""
    _require(x.ndim == 3, f"to_sequence: expected (C, H, W), got {x.shape}")
    c = x.shape[0]
    return x.reshape(c, -1).T.copy()


def to_spatial(x: np.ndarray, h: int, w: int) -> np.ndarray:
    """Inverse of :func:`to_sequence`: ``(H*W, C)`` back to ``(C, H, W)``."""
    _require(x.ndim == 2, f"to_spatial: expected (T, C), got {x.shape}")
    t, c = x.shape
    _require(t == h * w, f"to_spatial: {t} tokens cannot fill {h}x{w}")
    return x.T.reshape(c, h, w).copy()


# ---------------------------------------------------------------------------
# convolutions


def conv2d(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray | None = None,
    stride: int = 1,
    pad: int = 0,
) -> np.ndarray:
    """Strided 2-D convolution (cross-correlation) over a (C, H, W) tensor.

    Args:
        x: input of shape ``(C_in, H, W)``.
        kernel: weights of shape ``(C_out, C_in, kh, kw)``.
        bias: optional per-output-channel offset ``(C_out,)``.
        stride: spatial step, identical in both directions.
        pad: zero padding applied to every spatial edge.

    Returns:
        Tensor of shape ``(C_out, (H + 2*pad - kh)//stride + 1, ...)``.
    """
    _require(x.ndim == 3, f"conv2d: expected (C, H, W) input, got {x.shape}")
    _require(kernel.ndim == 4, f"conv2d: expected 4-D kernel, got {kernel.shape}")
    cout, cin, kh, kw = kernel.shape
    _require(
        x.shape[0] == cin,
        f"conv2d: input has {x.shape[0]} channels, kernel expects {cin}",
    )
    _require(stride >= 1, "conv2d: stride must be positive")
    h, w = x.shape[1], x.shape[2]
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    _require(ho >= 1 and wo >= 1, f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")

    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(cin * kh * kw, ho * wo)
    out = kernel.reshape(cout, cin * kh * kw) @ cols
    if bias is not None:
        _require(bias.shape == (cout,), f"conv2d: bias shape {bias.shape} != ({cout},)")
        out = out + bias[:, None]
    return out.reshape(cout, ho, wo)


def deconv2d(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray | None = None,
    stride: int = 1,
    pad: int = 0,
    out_pad: int = 0,
) -> np.ndarray:
    """Transposed convolution, the exact adjoint of :func:`conv2d`.

    With matching geometry, ``<conv2d(x, k), y> == <x, deconv2d(y, k)>`` holds
    up to rounding: this routine scatters through the same taps ``conv2d``
    gathers through, in the same order.

    Args:
        x: input of shape ``(C_in, H, W)``.
        kernel: weights of shape ``(C_in, C_out, kh, kw)``.
        bias: optional per-output-channel offset ``(C_out,)``.
        stride: upsampling factor.
        pad: padding of the matching forward convolution.
        out_pad: extra rows/cols appended at the bottom/right edge.

    Returns:
        Tensor of shape ``(C_out, (H-1)*stride - 2*pad + kh + out_pad, ...)``.
    """
    _require(x.ndim == 3, f"deconv2d: expected (C, H, W) input, got {x.shape}")
    _require(kernel.ndim == 4, f"deconv2d: expected 4-D kernel, got {kernel.shape}")
    cin, cout, kh, kw = kernel.shape
    _require(
        x.shape[0] == cin,
        f"deconv2d: input has {x.shape[0]} channels, kernel expects {cin}",
    )
    _require(stride >= 1, "deconv2d: stride must be positive")
    _require(0 <= out_pad < stride or out_pad == 0, "deconv2d: out_pad must be < stride")
    hi, wi = x.shape[1], x.shape[2]
    ho = (hi - 1) * stride - 2 * pad + kh + out_pad
    wo = (wi - 1) * stride - 2 * pad + kw + out_pad
    _require(ho >= 1 and wo >= 1, f"deconv2d: degenerate output {ho}x{wo}")

    cols = kernel.reshape(cin, cout * kh * kw).T @ x.reshape(cin, hi * wi)
    cols = cols.reshape(cout, kh, kw, hi, wi)
    buf = np.zeros(
        (cout, (hi - 1) * stride + kh + out_pad, (wi - 1) * stride + kw + out_pad),
        dtype=x.dtype,
    )
    # fixed tap order keeps the accumulation deterministic
    for a in range(kh):
        for b in range(kw):
            buf[:, a : a + (hi - 1) * stride + 1 : stride, b : b + (wi - 1) * stride + 1 : stride] += cols[:, a, b]
    out = buf[:, pad : pad + ho, pad : pad + wo]
    if bias is not None:
        _require(bias.shape == (cout,), f"deconv2d: bias shape {bias.shape} != ({cout},)")
        out = out + bias[:, None, None]
    return np.ascontiguousarray(out)


def depthwise_conv2d(
    x: np.ndarray, kernel: np.ndarray, pad: int | None = None
) -> np.ndarray:
    """Per-channel convolution with an odd square kernel, stride 1.

    Args:
        x: input of shape ``(C, H, W)``.
        kernel: weights of shape ``(C, 1, k, k)``.
        pad: zero padding; defaults to ``k // 2`` (shape preserving).
    """
    _require(x.ndim == 3, f"depthwise_conv2d: expected (C, H, W), got {x.shape}")
    _require(
        kernel.ndim == 4 and kernel.shape[1] == 1,
        f"depthwise_conv2d: expected (C, 1, k, k) kernel, got {kernel.shape}",
    )
    c, _, kh, kw = kernel.shape
    _require(x.shape[0] == c, f"depthwise_conv2d: {x.shape[0]} channels vs kernel {c}")
    if pad is None:
        pad = kh // 2
    h, w = x.shape[1], x.shape[2]
    ho = h + 2 * pad - kh + 1
    wo = w + 2 * pad - kw + 1
    _require(ho >= 1 and wo >= 1, "depthwise_conv2d: kernel larger than padded input")
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    out = np.zeros((c, ho, wo), dtype=x.dtype)
    for a in range(kh):
        for b in range(kw):
            out += kernel[:, 0, a, b][:, None, None] * xp[:, a : a + ho, b : b + wo]
    return out


# ---------------------------------------------------------------------------
# pointwise layers


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Token-wise affine map: ``(T, C_in) @ weight.T + bias``.

    ``weight`` has shape ``(C_out, C_in)``.
    """
    _require(x.ndim == 2, f"linear: expected (T, C) input, got {x.shape}")
    _require(weight.ndim == 2, f"linear: expected 2-D weight, got {weight.shape}")
    _require(
        x.shape[1] == weight.shape[1],
        f"linear: input width {x.shape[1]} != weight fan-in {weight.shape[1]}",
    )
    out = x @ weight.T
    if bias is not None:
        _require(bias.shape == (weight.shape[0],), f"linear: bad bias shape {bias.shape}")
        out = out + bias
    return out


def layer_norm(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Per-token layer normalization over the channel axis of ``(T, C)``."""
    _require(x.ndim == 2, f"layer_norm: expected (T, C) input, got {x.shape}")
    c = x.shape[1]
    _require(gamma.shape == (c,) and beta.shape == (c,), "layer_norm: scale/shift must be (C,)")
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=1, keepdims=True)
    return centered / np.sqrt(var + eps) * gamma + beta


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    return expit(x)


def squared_relu(x: np.ndarray) -> np.ndarray:
    """``max(x, 0)**2``, the channel-mix nonlinearity."""
    r = np.maximum(x, 0)
    return r * r
