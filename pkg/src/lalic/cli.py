"""Command line interface.

Exit codes: 0 success, 2 file I/O failure, 3 container format error,
4 corrupt payload, 5 configuration or weight mismatch.
"""

from __future__ import annotations

import functools
import os
import sys

import click
import numpy as np

from . import image as image_io
from . import pipeline
from .config import LAMBDA_PRESETS, ModelConfig
from .errors import IO_EXIT_CODE, LalicError
from .weights import WeightStore, init_weights, load_weights, save_weights


def _fail(code: int, msg: str) -> None:
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except LalicError as exc:
            _fail(exc.exit_code, str(exc))
        except OSError as exc:
            _fail(IO_EXIT_CODE, str(exc))

    return wrapper


def _load_config(config_path: str | None) -> ModelConfig:
    if config_path is None:
        return ModelConfig()
    with open(config_path, "r", encoding="utf-8") as f:
        return ModelConfig.from_json(f.read())


def _resolve_store(
    weights_path: str | None, seed: int, config_path: str | None, f64: bool
) -> WeightStore:
    if weights_path is not None:
        store = load_weights(weights_path)
        if config_path is not None:
            wanted = _load_config(config_path)
            if wanted != store.config:
                _fail(5, f"{weights_path} was built for a different configuration")
    else:
        store = init_weights(_load_config(config_path), seed=seed)
    if f64:
        store = store.to_dtype(np.float64)
    return store


def _write_atomic(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


_weight_options = [
    click.option("--weights", "weights_path", type=click.Path(), default=None,
                 help="Weight container to use; omit to derive weights from --seed."),
    click.option("--seed", type=int, default=0, show_default=True,
                 help="Weight seed when no --weights file is given."),
    click.option("--config", "config_path", type=click.Path(), default=None,
                 help="Model configuration JSON (defaults to the full-size model)."),
    click.option("--f64", is_flag=True, help="Run transforms in float64."),
]


def _with_weight_options(fn):
    for opt in reversed(_weight_options):
        fn = opt(fn)
    return fn


@click.group()
def main() -> None:
    """Learned image codec with linear-attention transforms."""


@main.command()
@click.argument("image_path", type=click.Path())
@click.argument("output_path", type=click.Path())
@_with_weight_options
@click.option("--lam", "--lambda", "lam", type=float, default=LAMBDA_PRESETS[3],
              show_default=True, help="Rate-distortion weight for the reported loss.")
@_handle_errors
def compress(image_path, output_path, weights_path, seed, config_path, f64, lam):
    """Encode IMAGE_PATH into a coded bitstream at OUTPUT_PATH."""
    store = _resolve_store(weights_path, seed, config_path, f64)
    img = image_io.read_image(image_path)
    result = pipeline.compress_array(img, store, lam)
    _write_atomic(output_path, result.bitstream)
    for line in result.report.lines():
        click.echo(line)
    click.echo(f"wrote {len(result.bitstream)} bytes to {output_path}")


@main.command()
@click.argument("bitstream_path", type=click.Path())
@click.argument("output_path", type=click.Path())
@_with_weight_options
@_handle_errors
def decompress(bitstream_path, output_path, weights_path, seed, config_path, f64):
    """Decode BITSTREAM_PATH back into an image at OUTPUT_PATH."""
    store = _resolve_store(weights_path, seed, config_path, f64)
    with open(bitstream_path, "rb") as f:
        data = f.read()
    result = pipeline.decompress_array(data, store)
    image_io.write_image(output_path, result.image)
    click.echo(f"wrote {result.image.shape[2]}x{result.image.shape[1]} image to {output_path}")


@main.command("eval")
@click.argument("original_path", type=click.Path())
@click.argument("recon_path", type=click.Path())
@click.option("--bitstream", "bitstream_path", type=click.Path(), default=None,
              help="Coded bitstream whose size sets the rate term.")
@click.option("--bits", type=int, default=None, help="Explicit total bit count.")
@click.option("--lam", "--lambda", "lam", type=float, default=LAMBDA_PRESETS[3], show_default=True)
@_handle_errors
def eval_cmd(original_path, recon_path, bitstream_path, bits, lam):
    """Report rate-distortion numbers between two images."""
    orig = image_io.read_image(original_path)
    recon = image_io.read_image(recon_path)
    if bits is None:
        if bitstream_path is None:
            _fail(2, "need --bits or --bitstream for the rate term")
        bits = 8 * os.path.getsize(bitstream_path)
    report = pipeline.eval_rd(orig, recon, bits, lam)
    for line in report.lines():
        click.echo(line)


@main.command()
@click.option("--resolutions", default="256x256,512x512,768x512,1024x1024,2048x1024",
              show_default=True, help="Comma-separated WxH list.")
@click.option("--mechanisms", default="aft,aft-shift,biwkv-shift,window-attention,selective-scan,selective-scan-2d",
              show_default=True, help="Comma-separated mechanism names.")
@click.option("--no-measure", is_flag=True, help="Skip wall-time measurements.")
@click.option("--config", "config_path", type=click.Path(), default=None)
@_handle_errors
def bench(resolutions, mechanisms, no_measure, config_path):
    """Attention op-count model and measured kernel wall-times."""
    cfg = _load_config(config_path)
    res = []
    for chunk in resolutions.split(","):
        w, _, h = chunk.strip().partition("x")
        res.append((int(w), int(h)))
    mechs = [m.strip() for m in mechanisms.split(",") if m.strip()]
    rows = pipeline.bench(cfg, res, mechs, measure=not no_measure)
    click.echo(f"{'mechanism':<20} {'resolution':<12} {'ops':>16} {'seconds':>10}")
    for row in rows:
        secs = f"{row.seconds:.4f}" if row.seconds is not None else "-"
        click.echo(f"{row.mechanism:<20} {row.width}x{row.height:<7} {row.ops:>16,} {secs:>10}")
    for mech in mechs:
        mech_rows = [r for r in rows if r.mechanism == mech]
        click.echo(f"linearity R^2 [{mech}]: {pipeline.bench_r2(mech_rows):.6f}")


@main.command()
@click.option("--f64", is_flag=True, help="Run the suites in float64.")
@_handle_errors
def selftest(f64):
    """Run built-in verification suites; exit nonzero on any failure."""
    results = pipeline.selftest(f64=f64)
    failed = False
    for name, ok, detail in results:
        status = "ok" if ok else "FAIL"
        click.echo(f"{status:>4}  {name:<22} {detail}")
        failed = failed or not ok
    sys.exit(1 if failed else 0)


@main.command("init-weights")
@click.argument("output_path", type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
@_handle_errors
def init_weights_cmd(output_path, seed, config_path):
    """Materialize seeded weights into a container file."""
    cfg = _load_config(config_path)
    store = init_weights(cfg, seed=seed)
    digest = save_weights(store, output_path)
    click.echo(f"wrote {store.num_params:,} parameters to {output_path}")
    click.echo(f"content digest {digest:#018x}")


if __name__ == "__main__":
    main()
