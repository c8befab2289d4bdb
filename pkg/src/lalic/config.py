"""Model configuration: architecture hyperparameters and their canonical
binary encoding.

The default values give the full-size codec; smaller variants are handy for
tests and the built-in selftest.  ``pack`` produces a canonical little-endian
byte string whose truncated SHA-256 is used to detect mismatched
configurations between weights and bitstreams.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

from .errors import ConfigMismatchError, FormatError


def _default_chunks(latent_channels: int) -> tuple[int, ...]:
    # progressively wider chunks; the tail takes whatever remains
    head = (16, 16, 32, 64)
    rest = latent_channels - sum(head)
    if rest < 1:
        raise ConfigMismatchError(
            f"latent_channels={latent_channels} too small for the default "
            "chunk plan; pass chunk_channels explicitly"
        )
    return head + (rest,)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    Attributes:
        stage_blocks: residual block count per transform stage, shallow to deep.
        stage_channels: widths of the three intermediate stages.
        latent_channels: width of the transmitted latent.
        hyper_channels: width of the hyper latent.
        chunk_channels: channel chunk sizes for progressive coding; must sum
            to ``latent_channels``.  ``None`` selects the default plan.
        hidden_ratio: channel-mix hidden expansion inside residual blocks.
        context_width: width the channel context is projected to.
        agg_hidden_ratio: hidden expansion of the parameter aggregation mixes.
        main_kernel: kernel size of the main transform resamplers.
        hyper_kernel: kernel size of the hyper transform convolutions.
    """

    stage_blocks: tuple[int, int, int, int] = (2, 4, 6, 6)
    stage_channels: tuple[int, int, int] = (96, 144, 256)
    latent_channels: int = 320
    hyper_channels: int = 192
    chunk_channels: tuple[int, ...] | None = None
    hidden_ratio: int = 2
    context_width: int = 128
    agg_hidden_ratio: int = 2
    main_kernel: int = 5
    hyper_kernel: int = 3

    def __post_init__(self) -> None:
        if len(self.stage_blocks) != 4 or any(b < 1 for b in self.stage_blocks):
            raise ConfigMismatchError(f"stage_blocks must be 4 positive ints, got {self.stage_blocks}")
        if len(self.stage_channels) != 3 or any(c < 1 for c in self.stage_channels):
            raise ConfigMismatchError(f"stage_channels must be 3 positive ints, got {self.stage_channels}")
        for name in ("latent_channels", "hyper_channels", "hidden_ratio",
                     "context_width", "agg_hidden_ratio"):
            if getattr(self, name) < 1:
                raise ConfigMismatchError(f"{name} must be positive")
        if self.main_kernel % 2 != 1 or self.hyper_kernel % 2 != 1:
            raise ConfigMismatchError("kernel sizes must be odd")
        chunks = self.chunk_channels
        if chunks is None:
            chunks = _default_chunks(self.latent_channels)
            object.__setattr__(self, "chunk_channels", chunks)
        chunks = tuple(int(c) for c in chunks)
        object.__setattr__(self, "chunk_channels", chunks)
        if any(c < 1 for c in chunks):
            raise ConfigMismatchError(f"chunk sizes must be positive, got {chunks}")
        if sum(chunks) != self.latent_channels:
            raise ConfigMismatchError(
                f"chunk_channels {chunks} sum to {sum(chunks)}, "
                f"expected latent_channels={self.latent_channels}"
            )
        object.__setattr__(self, "stage_blocks", tuple(int(b) for b in self.stage_blocks))
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))

    @property
    def stage_widths(self) -> tuple[int, int, int, int]:
        """Channel width after each analysis downsampling, shallow to deep."""
        return (*self.stage_channels, self.latent_channels)

    # -- canonical encoding ------------------------------------------------

    def pack(self) -> bytes:
        parts = [struct.pack("<B", len(self.stage_blocks))]
        parts += [struct.pack("<I", b) for b in self.stage_blocks]
        parts.append(struct.pack("<B", len(self.stage_channels)))
        parts += [struct.pack("<I", c) for c in self.stage_channels]
        parts.append(struct.pack("<II", self.latent_channels, self.hyper_channels))
        parts.append(struct.pack("<B", len(self.chunk_channels)))
        parts += [struct.pack("<I", c) for c in self.chunk_channels]
        parts.append(
            struct.pack(
                "<IIIII",
                self.hidden_ratio,
                self.context_width,
                self.agg_hidden_ratio,
                self.main_kernel,
                self.hyper_kernel,
            )
        )
        return b"".join(parts)

    @classmethod
    def unpack(cls, data: bytes) -> "ModelConfig":
        try:
            off = 0

            def u8() -> int:
                nonlocal off
                (val,) = struct.unpack_from("<B", data, off)
                off += 1
                return val

            def u32(n: int = 1) -> tuple[int, ...]:
                nonlocal off
                vals = struct.unpack_from(f"<{n}I", data, off)
                off += 4 * n
                return vals

            blocks = u32(u8())
            channels = u32(u8())
            latent, hyper = u32(2)
            chunks = u32(u8())
            hidden, ctx, agg, mk, hk = u32(5)
            if off != len(data):
                raise FormatError("config block has trailing bytes")
        except struct.error as exc:
            raise FormatError(f"truncated config block: {exc}") from exc
        return cls(
            stage_blocks=blocks,
            stage_channels=channels,
            latent_channels=latent,
            hyper_channels=hyper,
            chunk_channels=chunks,
            hidden_ratio=hidden,
            context_width=ctx,
            agg_hidden_ratio=agg,
            main_kernel=mk,
            hyper_kernel=hk,
        )

    def digest(self) -> int:
        """64-bit identity of this configuration."""
        h = hashlib.sha256(self.pack()).digest()
        return int.from_bytes(h[:8], "little")

    # -- json --------------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps(
            {
                "stage_blocks": list(self.stage_blocks),
                "stage_channels": list(self.stage_channels),
                "latent_channels": self.latent_channels,
                "hyper_channels": self.hyper_channels,
                "chunk_channels": list(self.chunk_channels),
                "hidden_ratio": self.hidden_ratio,
                "context_width": self.context_width,
                "agg_hidden_ratio": self.agg_hidden_ratio,
                "main_kernel": self.main_kernel,
                "hyper_kernel": self.hyper_kernel,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid config json: {exc}") from exc
        if not isinstance(raw, dict):
            raise FormatError("config json must be an object")
        allowed = {
            "stage_blocks", "stage_channels", "latent_channels", "hyper_channels",
            "chunk_channels", "hidden_ratio", "context_width", "agg_hidden_ratio",
            "main_kernel", "hyper_kernel",
        }
        unknown = set(raw) - allowed
        if unknown:
            raise FormatError(f"unknown config fields: {sorted(unknown)}")
        for key in ("stage_blocks", "stage_channels", "chunk_channels"):
            if key in raw and raw[key] is not None:
                raw[key] = tuple(raw[key])
        return cls(**raw)


# rate-distortion tradeoff presets, low to high rate
LAMBDA_PRESETS = (0.0025, 0.0035, 0.0067, 0.0130, 0.0250, 0.0483)
