"""Command-line entry points: render, insert, refine, trace-repaint, report."""

from __future__ import annotations

import pathlib
import sys

import click

from .config import SceneConfig
from .pipeline import INSERT_STAGES, StageError, run_insert, run_refine, run_render
from .report import write_report
from .repaint import format_trace, repaint_trace


def _load_config(config_path, seed):
    cfg = SceneConfig.from_file(config_path)
    if seed is not None:
        cfg.raw["seed"] = int(seed)
        cfg = SceneConfig.from_dict(cfg.raw, base_dir=pathlib.Path(config_path).parent)
    return cfg


@click.group()
def main():
    """Radiance-field object insertion pipeline."""


_config_opt = click.option("--config", "config_path", required=True,
                           type=click.Path(exists=True), help="Run configuration (YAML).")
_out_opt = click.option("--out", "out_dir", required=True,
                        type=click.Path(), help="Output directory.")
_seed_opt = click.option("--seed", type=int, default=None,
                         help="Override the config seed.")


@main.command()
@_config_opt
@_out_opt
@_seed_opt
def render(config_path, out_dir, seed):
    """Render the scene-only reference view (PNG + depth/alpha PFM)."""
    run_render(_load_config(config_path, seed), out_dir)
    click.echo(f"reference view written to {out_dir}")


@main.command()
@_config_opt
@_out_opt
@_seed_opt
@click.option("--stage", type=click.Choice(INSERT_STAGES), default=None,
              help="Resume from this stage using cached artifacts.")
@click.option("--views", default=None,
              help="Comma-separated subset of extra view names to render (e.g. view00).")
def insert(config_path, out_dir, seed, stage, views):
    """Run the insertion pipeline end to end."""
    cfg = _load_config(config_path, seed)
    if views is not None:
        wanted = {v.strip() for v in views.split(",")}
        cfg.views = [spec for i, spec in enumerate(cfg.views)
                     if f"view{i:02d}" in wanted]
    try:
        manifest = run_insert(cfg, out_dir, start_stage=stage)
    except StageError as exc:
        click.echo(str(exc), err=True)
        sys.exit(1)
    place = manifest["stages"]["place"]["numerics"]
    click.echo(f"inserted: s*={place['s_star']:.4g} r*={place['r_star']:.4g} "
               f"mse={place['mse']:.3e}")


@main.command()
@_config_opt
@_out_opt
@_seed_opt
def refine(config_path, out_dir, seed):
    """Refine the inserted object grid using the manifest placement."""
    try:
        run_refine(_load_config(config_path, seed), out_dir)
    except StageError as exc:
        click.echo(str(exc), err=True)
        sys.exit(1)
    click.echo(f"refined grid and renders written to {out_dir}")


@main.command("trace-repaint")
@click.option("--steps", "num_steps", type=int, default=20, help="Diffusion step count T.")
@click.option("--jump-length", type=int, default=2)
@click.option("--resample-steps", type=int, default=2)
@click.option("--resample-min-t", type=int, default=None)
@click.option("--trace", "trace_path", type=click.Path(), default=None,
              help="Write the trace to a file instead of stdout.")
def trace_repaint(num_steps, jump_length, resample_steps, resample_min_t, trace_path):
    """Emit the inpainting scheduler's step trace (t_from t_to kind)."""
    from .repaint import RepaintConfig
    cfg = RepaintConfig(jump_length=jump_length, steps=resample_steps,
                        resample_min_t=resample_min_t)
    text = format_trace(repaint_trace(num_steps, cfg))
    if trace_path:
        pathlib.Path(trace_path).write_text(text)
    else:
        click.echo(text, nl=False)


@main.command()
@_config_opt
@_out_opt
def report(config_path, out_dir):
    """Write report.csv and diagnostic figures for a completed run."""
    paths = write_report(_load_config(config_path, None), out_dir)
    for p in paths:
        click.echo(str(p))


if __name__ == "__main__":
    main()
