"""Learned image compression with linear-attention transforms.

Library surface:

* :mod:`lalic.nn` dense tensor primitives
* :mod:`lalic.wkv` attention kernels and the op-count model
* :mod:`lalic.block` Bi-RWKV residual blocks
* :mod:`lalic.config` / :mod:`lalic.weights` model description and storage
* :mod:`lalic.transforms` analysis / synthesis / hyper transforms
* :mod:`lalic.codec` range coder and discretized Gaussian tables
* :mod:`lalic.entropy` spatial-channel context model
* :mod:`lalic.pipeline` compress / decompress / eval / bench / selftest
"""

from .config import LAMBDA_PRESETS, ModelConfig
from .errors import (
    ConfigMismatchError,
    CorruptionError,
    FormatError,
    LalicError,
    ShapeError,
)
from .pipeline import compress_array, decompress_array, eval_rd, selftest
from .weights import WeightStore, init_weights, load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "LAMBDA_PRESETS",
    "ModelConfig",
    "WeightStore",
    "LalicError",
    "ShapeError",
    "FormatError",
    "CorruptionError",
    "ConfigMismatchError",
    "compress_array",
    "decompress_array",
    "eval_rd",
    "selftest",
    "init_weights",
    "load_weights",
    "save_weights",
    "__version__",
]
