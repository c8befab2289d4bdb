"""Image file handling: binary PPM always, PNG when Pillow is present.

Arrays cross this boundary as uint8 ``(3, H, W)``.  Pixel values map to
[0, 1] floats for the transforms; spatial extents are padded up to
multiples of 64 by edge replication before analysis and cropped back after
synthesis.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import FormatError, ShapeError


def _read_ppm(data: bytes, path: str) -> np.ndarray:
    if not data.startswith(b"P6"):
        raise FormatError(f"{path}: not a binary PPM (missing P6 magic)")
    # header tokens may be separated by arbitrary whitespace and comments
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] not in (0x0A, 0x0D):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise FormatError(f"{path}: malformed PPM header near byte {start}")
        fields.append(int(token))
    if pos >= len(data):
        raise FormatError(f"{path}: truncated PPM header")
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 PPM supported, got {maxval}")
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad PPM extents {width}x{height}")
    need = width * height * 3
    raster = data[pos : pos + need]
    if len(raster) != need:
        raise FormatError(f"{path}: PPM raster truncated ({len(raster)} of {need} bytes)")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def read_image(path: str) -> np.ndarray:
    """Load an RGB image as uint8 ``(3, H, W)``.

    PPM (P6) is handled natively; .png defers to Pillow and reports a
    format error if it is not installed.
    """
    ext = os.path.splitext(path)[1].lower()
    if ext == ".png":
        try:
            from PIL import Image
        except ImportError:
            raise FormatError("PNG support requires the Pillow package") from None
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        return np.ascontiguousarray(arr.transpose(2, 0, 1))
    with open(path, "rb") as f:
        data = f.read()
    return _read_ppm(data, path)


def write_image(path: str, arr: np.ndarray) -> None:
    """Write uint8 ``(3, H, W)`` to PPM or (with Pillow) PNG, atomically."""
    if arr.ndim != 3 or arr.shape[0] != 3 or arr.dtype != np.uint8:
        raise ShapeError(f"write_image: expected uint8 (3, H, W), got {arr.dtype} {arr.shape}")
    ext = os.path.splitext(path)[1].lower()
    tmp = path + ".tmp"
    if ext == ".png":
        try:
            from PIL import Image
        except ImportError:
            raise FormatError("PNG support requires the Pillow package") from None
        Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(tmp, format="PNG")
    else:
        h, w = arr.shape[1:]
        with open(tmp, "wb") as f:
            f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            f.write(arr.transpose(1, 2, 0).tobytes())
    os.replace(tmp, path)


def to_unit_float(arr: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 pixels to [0, 1] floats."""
    return (arr.astype(np.float64) / 255.0).astype(dtype)


def from_unit_float(x: np.ndarray) -> np.ndarray:
    """[0, 1] floats back to uint8 with round-half-away semantics."""
    scaled = np.clip(x, 0.0, 1.0) * 255.0
    return (np.floor(scaled + 0.5)).astype(np.uint8)


def pad_to_multiple(x: np.ndarray, multiple: int = 64) -> np.ndarray:
    """Edge-replicate the bottom/right of ``(C, H, W)`` up to a multiple."""
    h, w = x.shape[1:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, ph), (0, pw)), mode="edge")
