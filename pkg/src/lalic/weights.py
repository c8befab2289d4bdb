"""Parameter manifest, seeded initialization, and the weight container format.

Every tensor in the model has a canonical dotted name, a shape derived from
the configuration, and an initialization kind.  The manifest fixes both the
set of tensors and their order; initialization draws from a counter-based
generator in manifest order, so a (config, seed) pair defines the weights
exactly.

Container layout (all little-endian):

    magic "LALW" | u32 version | u32 config length | config bytes |
    records... | u64 checksum

with one record per tensor, in manifest order:

    u16 name length | name utf-8 | u8 rank | rank * u32 extents |
    float32 data

The trailing checksum is the first 8 bytes of the SHA-256 of everything
before it, and doubles as the store's content digest.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Iterator

import numpy as np

from .config import ModelConfig
from .errors import ConfigMismatchError, CorruptionError, FormatError

WEIGHT_MAGIC = b"LALW"
WEIGHT_VERSION = 1

# initialization kinds:
#   zero / one   constants, no draw from the stream
#   fan          normal with std 1/sqrt(prod(shape[1:]))
#   out          "fan" scaled by a further 0.01, for residual-exit projections
#   scale        normal with std 0.1, for shift branch scales
#   plain        standard normal, for decay/bonus vectors
Entry = tuple[str, tuple[int, ...], str]


def _ln_entries(prefix: str, c: int) -> list[Entry]:
    return [(f"{prefix}.g", (c,), "one"), (f"{prefix}.b", (c,), "zero")]


def _shift_entries(prefix: str, c: int) -> list[Entry]:
    return [
        (f"{prefix}.s0", (c,), "one"),
        (f"{prefix}.s1", (c,), "scale"),
        (f"{prefix}.s3", (c,), "scale"),
        (f"{prefix}.s5", (c,), "scale"),
        (f"{prefix}.k1", (c, 1, 1, 1), "fan"),
        (f"{prefix}.k3", (c, 1, 3, 3), "fan"),
        (f"{prefix}.k5", (c, 1, 5, 5), "fan"),
    ]


def _block_entries(prefix: str, c: int, hidden_ratio: int) -> list[Entry]:
    hc = hidden_ratio * c
    out: list[Entry] = []
    out += _ln_entries(f"{prefix}.sm.ln", c)
    out += _shift_entries(f"{prefix}.sm.shift", c)
    out += [
        (f"{prefix}.sm.wr", (c, c), "fan"),
        (f"{prefix}.sm.wk", (c, c), "fan"),
        (f"{prefix}.sm.wv", (c, c), "fan"),
        (f"{prefix}.sm.wo", (c, c), "out"),
        (f"{prefix}.sm.w", (c,), "plain"),
        (f"{prefix}.sm.u", (c,), "plain"),
    ]
    out += _ln_entries(f"{prefix}.cm.ln", c)
    out += _shift_entries(f"{prefix}.cm.shift", c)
    out += [
        (f"{prefix}.cm.wr", (c, c), "fan"),
        (f"{prefix}.cm.wk", (hc, c), "fan"),
        (f"{prefix}.cm.wv", (c, hc), "out"),
    ]
    return out


def _pointwise_mix_entries(prefix: str, c: int, hidden_ratio: int) -> list[Entry]:
    hc = hidden_ratio * c
    return _ln_entries(f"{prefix}.ln", c) + [
        (f"{prefix}.wr", (c, c), "fan"),
        (f"{prefix}.wk", (hc, c), "fan"),
        (f"{prefix}.wv", (c, hc), "out"),
    ]


def _conv_entries(name: str, cout: int, cin: int, k: int) -> list[Entry]:
    return [(f"{name}.w", (cout, cin, k, k), "fan"), (f"{name}.b", (cout,), "zero")]


def _deconv_entries(name: str, cin: int, cout: int, k: int) -> list[Entry]:
    return [(f"{name}.w", (cin, cout, k, k), "fan"), (f"{name}.b", (cout,), "zero")]


def parameter_manifest(config: ModelConfig) -> list[Entry]:
    """Canonical (name, shape, init kind) list for every model tensor."""
    mk, hk = config.main_kernel, config.hyper_kernel
    m, n = config.latent_channels, config.hyper_channels
    widths = config.stage_widths
    entries: list[Entry] = []

    # analysis transform: downsample, then residual blocks, four stages
    prev = 3
    for i, (cw, nb) in enumerate(zip(widths, config.stage_blocks)):
        entries += _conv_entries(f"ga.d{i}", cw, prev, mk)
        for j in range(nb):
            entries += _block_entries(f"ga.s{i}.b{j}", cw, config.hidden_ratio)
        prev = cw

    # synthesis transform: mirrored stages at reduced widths, ending in RGB
    gs_stages = [
        (widths[2], config.stage_blocks[3]),
        (widths[1], config.stage_blocks[2]),
        (widths[0], config.stage_blocks[1]),
    ]
    prev = m
    for i, (cw, nb) in enumerate(gs_stages):
        entries += _deconv_entries(f"gs.u{i}", prev, cw, mk)
        for j in range(nb):
            entries += _block_entries(f"gs.s{i}.b{j}", cw, config.hidden_ratio)
        prev = cw
    entries += _deconv_entries("gs.u3", prev, 3, mk)

    # hyper transforms
    entries += _conv_entries("ha.c0", n, m, hk)
    entries += _block_entries("ha.b0", n, config.hidden_ratio)
    entries += _conv_entries("ha.c1", n, n, hk)
    entries += _block_entries("ha.b1", n, config.hidden_ratio)
    entries += _conv_entries("ha.c2", n, n, hk)

    entries += _deconv_entries("hs.u0", n, n, hk)
    entries += _block_entries("hs.b0", n, config.hidden_ratio)
    entries += _deconv_entries("hs.u1", n, n, hk)
    entries += _block_entries("hs.b1", n, config.hidden_ratio)
    entries += _conv_entries("hs.c2", 2 * m, n, hk)

    # factorized prior over the hyper latent
    entries += [("prior.mu", (n,), "zero"), ("prior.ls", (n,), "zero")]

    # entropy model contexts, one group per channel chunk
    hyper_width = 2 * m
    seen = 0
    for i, ck in enumerate(config.chunk_channels):
        entries.append((f"ctx.sp.k{i}.w", (2 * ck, ck, 5, 5), "fan"))
        if i >= 1:
            entries += _conv_entries(f"ctx.ch.k{i}.proj", config.context_width, seen, 1)
            for j in range(2):
                entries += _block_entries(f"ctx.ch.k{i}.b{j}", config.context_width, config.hidden_ratio)
        agg_width = 2 * ck + config.context_width + hyper_width
        for j in range(2):
            entries += _pointwise_mix_entries(f"agg.k{i}.m{j}", agg_width, config.agg_hidden_ratio)
        for part in ("a", "n"):
            entries.append((f"agg.k{i}.head.{part}.w", (2 * ck, agg_width), "fan"))
            entries.append((f"agg.k{i}.head.{part}.b", (2 * ck,), "zero"))
        seen += ck
    return entries


def parameter_count(config: ModelConfig) -> int:
    """Total scalar parameter count implied by the manifest."""
    return sum(int(np.prod(shape)) for _, shape, _ in parameter_manifest(config))


# ---------------------------------------------------------------------------
# store


class WeightStore:
    """Immutable name -> float32 array mapping plus its configuration."""

    def __init__(
        self,
        config: ModelConfig,
        tensors: dict[str, np.ndarray],
        seed: int | None = None,
    ) -> None:
        self.config = config
        self._tensors = tensors
        self.seed = seed
        self._digest: int | None = None

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._tensors[name]
        except KeyError:
            raise ConfigMismatchError(f"weight store has no parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def get(self, name: str) -> np.ndarray:
        return self[name]

    def names(self) -> list[str]:
        return list(self._tensors)

    @property
    def num_params(self) -> int:
        return sum(t.size for t in self._tensors.values())

    @property
    def dtype(self) -> np.dtype:
        first = next(iter(self._tensors.values()))
        return first.dtype

    def to_dtype(self, dtype) -> "WeightStore":
        """Runtime precision change.  The digest stays that of the float32
        content, which a float64 round trip preserves exactly."""
        out = WeightStore(
            self.config,
            {k: v.astype(dtype) for k, v in self._tensors.items()},
            seed=self.seed,
        )
        out._digest = self._digest
        return out

    def digest(self) -> int:
        """Content digest, identical to the checksum a saved file carries."""
        if self._digest is None:
            h = hashlib.sha256()
            for chunk in _serialize(self):
                h.update(chunk)
            self._digest = int.from_bytes(h.digest()[:8], "little")
        return self._digest


_INIT_SCALES = {"fan": 1.0, "out": 0.01}


def init_weights(config: ModelConfig, seed: int = 0) -> WeightStore:
    """Deterministic random weights for a configuration.

    Draws come from a counter-based generator keyed by ``seed``, in manifest
    order, with per-kind scaling chosen so a fresh model maps unit-scale
    inputs to bounded activations (residual exits start near zero).
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    tensors: dict[str, np.ndarray] = {}
    for name, shape, kind in parameter_manifest(config):
        if kind == "zero":
            t = np.zeros(shape, dtype=np.float32)
        elif kind == "one":
            t = np.ones(shape, dtype=np.float32)
        elif kind in ("fan", "out"):
            fan = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            std = _INIT_SCALES[kind] / np.sqrt(fan)
            t = rng.standard_normal(size=shape, dtype=np.float32) * np.float32(std)
        elif kind == "scale":
            t = rng.standard_normal(size=shape, dtype=np.float32) * np.float32(0.1)
        elif kind == "plain":
            t = rng.standard_normal(size=shape, dtype=np.float32)
        else:  # pragma: no cover - manifest kinds are closed
            raise ValueError(f"unknown init kind {kind!r}")
        tensors[name] = t
    return WeightStore(config, tensors, seed=seed)


# ---------------------------------------------------------------------------
# serialization


def _serialize(store: WeightStore) -> Iterator[bytes]:
    config_blob = store.config.pack()
    yield WEIGHT_MAGIC
    yield struct.pack("<I", WEIGHT_VERSION)
    yield struct.pack("<I", len(config_blob))
    yield config_blob
    for name, shape, _ in parameter_manifest(store.config):
        tensor = store[name]
        if tuple(tensor.shape) != tuple(shape):
            raise ConfigMismatchError(
                f"parameter {name!r} has shape {tensor.shape}, manifest expects {shape}"
            )
        raw = name.encode("utf-8")
        yield struct.pack("<H", len(raw))
        yield raw
        yield struct.pack("<B", len(shape))
        yield struct.pack(f"<{len(shape)}I", *shape)
        yield np.ascontiguousarray(tensor, dtype="<f4").tobytes()


def save_weights(store: WeightStore, path: str) -> int:
    """Write the container; returns the content digest."""
    h = hashlib.sha256()
    with open(path, "wb") as f:
        for chunk in _serialize(store):
            h.update(chunk)
            f.write(chunk)
        digest = int.from_bytes(h.digest()[:8], "little")
        f.write(struct.pack("<Q", digest))
    store._digest = digest
    return digest


def load_weights(path: str) -> WeightStore:
    """Read and validate a weight container.

    The embedded configuration defines the expected manifest; any missing,
    unexpected, or misshapen record is rejected with its canonical name.
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4 or data[:4] != WEIGHT_MAGIC:
        raise FormatError(f"{path}: not a weight container (bad magic)")
    if len(data) < 12:
        raise CorruptionError(f"{path}: truncated weight container")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != WEIGHT_VERSION:
        raise FormatError(f"{path}: unsupported weight container version {version}")
    if len(data) < 8 + 12:
        raise CorruptionError(f"{path}: truncated weight container")
    body, tail = data[:-8], data[-8:]
    (stored_sum,) = struct.unpack("<Q", tail)
    h = hashlib.sha256(body).digest()
    actual = int.from_bytes(h[:8], "little")
    if actual != stored_sum:
        raise CorruptionError(f"{path}: weight container checksum mismatch")

    (config_len,) = struct.unpack_from("<I", body, 8)
    off = 12
    if off + config_len > len(body):
        raise CorruptionError(f"{path}: truncated config block")
    config = ModelConfig.unpack(body[off : off + config_len])
    off += config_len

    tensors: dict[str, np.ndarray] = {}
    for name, shape, _ in parameter_manifest(config):
        if off + 2 > len(body):
            raise ConfigMismatchError(f"{path}: missing parameter {name!r}")
        (nlen,) = struct.unpack_from("<H", body, off)
        off += 2
        found = body[off : off + nlen].decode("utf-8")
        off += nlen
        if found != name:
            raise ConfigMismatchError(
                f"{path}: expected parameter {name!r}, found {found!r}"
            )
        (rank,) = struct.unpack_from("<B", body, off)
        off += 1
        extents = struct.unpack_from(f"<{rank}I", body, off)
        off += 4 * rank
        if tuple(extents) != tuple(shape):
            raise ConfigMismatchError(
                f"{path}: parameter {name!r} has shape {extents}, expected {tuple(shape)}"
            )
        nbytes = int(np.prod(shape)) * 4
        if off + nbytes > len(body):
            raise CorruptionError(f"{path}: truncated data for parameter {name!r}")
        t = np.frombuffer(body, dtype="<f4", count=int(np.prod(shape)), offset=off)
        tensors[name] = t.reshape(shape).copy()
        off += nbytes
    if off != len(body):
        raise CorruptionError(f"{path}: {len(body) - off} trailing bytes after last parameter")

    store = WeightStore(config, tensors)
    store._digest = stored_sum
    return store
