"""Command-line surface: synth / train / infill / audit / render / eval."""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import benchmark as bench
from .core import FreezeFlags, GaussianSet, Role, TrainConfig
from .datasets import SYNTH_KINDS, load_dataset, save_dataset, synth_scene
from .errors import InvalidParameterError, NgsplatError
from .ngs import finetune_noise, multiscale_fill
from .plyio import ply_read, ply_write, write_asset
from .rasterizer import RenderOptions, render
from .report import (
    write_loss_figure,
    write_metrics_figure,
    write_report,
    write_train_log,
    write_transmittance_maps,
)
from .trainer import train as run_train

EXIT_CODES = {
    "invalid-parameter": 2,
    "dimension-mismatch": 2,
    "dataset": 3,
    "ply-header": 4,
    "ply-property": 4,
    "ply-payload": 4,
    "geometry": 5,
    "freeze-violation": 6,
    "render-state": 7,
    "error": 1,
}


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NgsplatError as exc:
            click.echo(json.dumps({"error": exc.code, "message": str(exc)}), err=True)
            sys.exit(EXIT_CODES.get(exc.code, 1))

    return wrapper


def _parse_res(text: str):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as exc:
        raise InvalidParameterError(f"--res expects WxH, got {text!r}") from exc


def _parse_hex(text: str):
    text = text.lstrip("#")
    if len(text) != 6:
        raise InvalidParameterError(f"expected a 6-digit hex color, got {text!r}")
    return tuple(int(text[i : i + 2], 16) / 255.0 for i in (0, 2, 4))


ABLATIONS = {
    "erosion": ("erosion_enabled", False),
    "pruning": ("pruning_enabled", False),
    "lf": ("foreground_loss_enabled", False),
    "lr-reset": ("lr_reset_enabled", False),
    "color-reset": ("color_reset_enabled", False),
    "random-bg": ("random_background", True),
}


def _build_config(config_file, ngs, alpha_loss, ablate, seed) -> TrainConfig:
    overrides = {}
    if config_file:
        overrides.update(json.loads(Path(config_file).read_text()))
    if ngs is not None:
        overrides["use_ngs"] = ngs == "on"
    if alpha_loss is not None:
        overrides["use_alpha_loss"] = alpha_loss == "on"
    for name in ablate:
        key, value = ABLATIONS[name]
        overrides[key] = value
    if seed is not None:
        overrides["seed"] = seed
    if "voxel_levels" in overrides:
        overrides["voxel_levels"] = tuple(overrides["voxel_levels"])
    try:
        return TrainConfig.desk_scale(**overrides)
    except TypeError as exc:
        raise InvalidParameterError(f"bad config: {exc}") from exc


def _load_infill(path) -> GaussianSet:
    infill = ply_read(path, role=Role.NOISE)
    infill.freeze = FreezeFlags.all_frozen()
    return infill


@click.group()
def main():
    """Desk-scale Gaussian splatting with noise-guided surface opacity."""


@main.command()
@click.option("--kind", type=click.Choice(SYNTH_KINDS), required=True)
@click.option("--views", type=int, default=32, show_default=True)
@click.option("--res", default="64x64", show_default=True, help="WxH")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@_handle_errors
def synth(kind, views, res, seed, out):
    """Generate a synthetic dataset (images/, masks/, cameras.json)."""
    w, h = _parse_res(res)
    dataset, record = synth_scene(kind, width=w, height=h, n_views=views, seed=seed)
    save_dataset(dataset, out, record)
    click.echo(f"wrote {len(dataset.views)} views to {out}")


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--config", "config_file", type=click.Path(exists=True), default=None)
@click.option("--ngs", type=click.Choice(["on", "off"]), default=None)
@click.option("--alpha-loss", type=click.Choice(["on", "off"]), default=None)
@click.option("--ablate", type=click.Choice(sorted(ABLATIONS)), multiple=True)
@click.option("--seed", type=int, default=None)
@_handle_errors
def train(data, out, config_file, ngs, alpha_loss, ablate, seed):
    """Train a surface (and, with NGS on, its noise infill)."""
    config = _build_config(config_file, ngs, alpha_loss, ablate, seed)
    dataset = load_dataset(data)
    result = run_train(dataset, config, progress=lambda e: click.echo(json.dumps(e)))
    out = Path(out)
    infill = result.noise if len(result.noise) else None
    write_asset(out, result.surface, infill, config, config.iterations)
    write_train_log(result.log, out / "train_log.jsonl")
    write_loss_figure(result.log, out / "training_curves.png")
    click.echo(f"wrote asset to {out}")


@main.command()
@click.option("--surface", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--config", "config_file", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@_handle_errors
def infill(surface, data, out, config_file, seed):
    """Fill a frozen surface asset with fine-tuned noise and export it."""
    config = _build_config(config_file, None, None, (), seed)
    dataset = load_dataset(data)
    asset = ply_read(surface)
    asset.freeze = FreezeFlags.all_frozen()
    rng = np.random.default_rng([config.seed, 0])
    noise, grids = multiscale_fill(asset, dataset.train_views, config, rng)
    noise = finetune_noise(
        noise, asset, dataset, config.noise_finetune_iterations, config, grids=grids
    )
    ply_write(noise, out)
    click.echo(f"wrote {len(noise)} infill gaussians to {out}")


@main.command()
@click.option("--surface", type=click.Path(exists=True), required=True)
@click.option("--infill", "infill_path", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@_handle_errors
def audit(surface, infill_path, data, out):
    """Transparency audit: SOS report plus transmittance PNG per test view."""
    asset, noise = bench.insert_infill(ply_read(surface), _load_infill(infill_path))
    dataset = load_dataset(data)
    out = Path(out)
    views = dataset.test_views
    t_maps, m_maps = [], []
    for view in views:
        t_map, m_map = bench.transmittance_map(asset, noise, view.camera, mask=view.mask)
        t_maps.append(t_map)
        m_maps.append(m_map)
    report = bench.evaluate(asset, noise, dataset)
    write_report(report, out / "report.jsonl")
    write_transmittance_maps(t_maps, [v.name for v in views], out)
    write_metrics_figure(report, out / "metrics.png")
    scores, mean = bench.sos(t_maps, m_maps)
    click.echo(json.dumps({"mean_sos": mean, "views": len(scores)}))


@main.command("render")
@click.option("--surface", type=click.Path(exists=True), required=True)
@click.option("--infill", "infill_path", type=click.Path(exists=True), default=None)
@click.option("--recolor-surface", default=None, help="hex color, e.g. ff0000")
@click.option("--recolor-infill", default=None, help="hex color, e.g. 00ff00")
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@_handle_errors
def render_cmd(surface, infill_path, recolor_surface, recolor_infill, data, out):
    """Render every dataset view to PNG, optionally recolored."""
    asset = ply_read(surface)
    noise = _load_infill(infill_path) if infill_path else None
    if recolor_surface:
        asset = bench.recolor(asset, _parse_hex(recolor_surface))
    if noise is not None and recolor_infill:
        noise = bench.recolor(noise, _parse_hex(recolor_infill))
    dataset = load_dataset(data)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    opts = RenderOptions()
    for view in dataset.views:
        img = render(asset, noise, view.camera, opts).color
        arr = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr).save(out / f"{view.name}.png")
    click.echo(f"rendered {len(dataset.views)} views to {out}")


@main.command("eval")
@click.option("--surface", type=click.Path(exists=True), required=True)
@click.option("--infill", "infill_path", type=click.Path(exists=True), default=None)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@_handle_errors
def eval_cmd(surface, infill_path, data, out):
    """PSNR/SSIM (plain and starred) + SOS on the test split."""
    asset = ply_read(surface)
    noise = _load_infill(infill_path) if infill_path else None
    dataset = load_dataset(data)
    report = bench.evaluate(asset, noise, dataset)
    write_report(report, out)
    write_metrics_figure(report, Path(out).with_suffix(".png"))
    click.echo(json.dumps(report.aggregate(), sort_keys=True))


if __name__ == "__main__":
    main()
