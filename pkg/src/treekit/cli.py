"""treekit command-line interface.

Commands:
    synth            Generate a synthetic forest plot and its oracle predictions.
    sparsify         Subsample a cloud to a target density.
    sparsify-series  Subsample a cloud to several densities.
    augment          Apply the seeded augmentation chain.
    segment          Group per-point predictions into tree instances.
    evaluate         Score a predicted instance cloud against ground truth.
    ce               Computational efficiency (MB per core per minute).
    prepare          Emit the clouds of a training scenario with a manifest.
    sweep            Segment and evaluate a cloud across densities (CSV).

Exit codes: 0 success, 2 validation failure, 3 alignment failure, 4 I/O failure.
"""

from __future__ import annotations

import functools
import json
from pathlib import Path
import sys
from typing import Any, Callable, Dict, List, Optional

import click

from . import __version__
from .augment import AugmentConfig, augment
from .evaluate import CEInput, compute_ce, evaluate
from .formats import load_cloud, load_predictions, save_cloud, save_predictions
from .grouping import AlignmentError, GroupingConfig, predicted_semantic, segment
from .pipeline import (
    EXIT_VALIDATION,
    PipelineError,
    ScenarioConfig,
    oracle_provider,
    prediction_subset_provider,
    prepare_scenario,
    stage,
    sweep_densities,
    write_sweep_csv,
)
from .sparsify import SparsifyConfig, sparsify, sparsify_series
from .synthgen import ForestConfig, OracleNoise, generate_forest, oracle_predictions


def _read_json(path: Optional[str]) -> Dict[str, Any]:
    if path is None:
        return {}
    with stage("config"):
        return json.loads(Path(path).read_text(encoding="utf-8"))


def _seed(ctx: click.Context, seed: Optional[int]) -> int:
    return seed if seed is not None else ctx.obj["seed"]


def _parse_densities(text: str, allow_full: bool = False) -> List[Optional[float]]:
    values: List[Optional[float]] = []
    for token in (t.strip() for t in text.split(",")):
        if not token:
            continue
        if allow_full and token.lower() == "full":
            values.append(None)
        else:
            try:
                values.append(float(token))
            except ValueError:
                raise click.BadParameter(f"not a density: {token!r}") from None
    if not values:
        raise click.BadParameter("at least one density is required")
    return values


def _reports_errors(command: Callable) -> Callable:
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except PipelineError as error:
            click.echo(f"error: {error}", err=True)
            sys.exit(error.exit_code)

    return wrapper


@click.group()
@click.version_option(version=__version__, prog_name="treekit")
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True, help="Default seed for subcommands.")
@click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True, help="Worker threads.")
@click.pass_context
def cli(ctx: click.Context, seed: int, threads: int) -> None:
    """Tree instance segmentation toolkit for labeled lidar point clouds."""
    ctx.ensure_object(dict)
    ctx.obj.update(seed=seed, threads=threads)


seed_option = click.option("--seed", type=click.IntRange(min=0), default=None, help="Seed (defaults to the global --seed).")


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="ForestConfig JSON.")
@click.option("--noise", "noise_path", type=click.Path(exists=True, dir_okay=False), help="OracleNoise JSON.")
@seed_option
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.pass_context
@_reports_errors
def synth(ctx, config_path, noise_path, seed, out_dir):
    """Write OUT/cloud.ptc and OUT/oracle.prd for a synthetic plot."""
    seed = _seed(ctx, seed)
    with stage("synth"):
        forest = generate_forest(ForestConfig.from_dict(_read_json(config_path)), seed)
        preds = oracle_predictions(forest, OracleNoise.from_dict(_read_json(noise_path)), seed)
    with stage("write"):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_cloud(forest, out / "cloud.ptc")
        save_predictions(preds, out / "oracle.prd")
    click.echo(f"{len(forest)} points, {len(forest.instance_ids())} trees -> {out}")


@cli.command("sparsify")
@click.option("--density", type=float, required=True, help="Target points per m².")
@seed_option
@click.argument("src", type=click.Path(dir_okay=False))
@click.argument("dst", type=click.Path(dir_okay=False))
@click.pass_context
@_reports_errors
def sparsify_command(ctx, density, seed, src, dst):
    """Randomly subsample SRC to DENSITY points per m² of its XY hull."""
    with stage("load"):
        cloud = load_cloud(src)
    with stage("sparsify"):
        out = sparsify(cloud, density, _seed(ctx, seed))
    with stage("write"):
        save_cloud(out, dst)
    click.echo(f"{len(cloud)} -> {len(out)} points")


@cli.command("sparsify-series")
@click.option("--densities", required=True, help="Comma-separated points per m², e.g. 1000,500,100,75,50,25,10.")
@seed_option
@click.argument("src", type=click.Path(dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.pass_context
@_reports_errors
def sparsify_series_command(ctx, densities, seed, src, out_dir):
    """Write one subsampled copy of SRC per density into OUT_DIR (entry i uses seed XOR i)."""
    with stage("load"):
        cloud = load_cloud(src)
    with stage("sparsify"):
        series = sparsify_series(cloud, SparsifyConfig(tuple(_parse_densities(densities)), _seed(ctx, seed)))
    with stage("write"):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for density, sub in series:
            target = out / f"{Path(src).stem}_d{density:g}.ptc"
            save_cloud(sub, target)
            click.echo(f"{density:g}: {len(sub)} points -> {target}")


@cli.command("augment")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="AugmentConfig JSON.")
@seed_option
@click.argument("src", type=click.Path(dir_okay=False))
@click.argument("dst", type=click.Path(dir_okay=False))
@click.pass_context
@_reports_errors
def augment_command(ctx, config_path, seed, src, dst):
    """Apply reflect, scale, rotate, and jitter to SRC."""
    with stage("config"):
        config = AugmentConfig.from_dict(_read_json(config_path), seed=_seed(ctx, seed))
    with stage("load"):
        cloud = load_cloud(src)
    with stage("augment"):
        out = augment(cloud, config)
    with stage("write"):
        save_cloud(out, dst)


@cli.command("segment")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="GroupingConfig JSON.")
@click.argument("cloud_path", type=click.Path(dir_okay=False))
@click.argument("preds_path", type=click.Path(dir_okay=False))
@click.argument("dst", type=click.Path(dir_okay=False))
@_reports_errors
def segment_command(config_path, cloud_path, preds_path, dst):
    """Group PREDS_PATH for CLOUD_PATH into instances; DST gets predicted semantics and ids."""
    with stage("config"):
        config = GroupingConfig.from_dict(_read_json(config_path))
    with stage("load"):
        cloud = load_cloud(cloud_path)
        preds = load_predictions(preds_path)
    with stage("segment"):
        ids = segment(cloud, preds, config)
    with stage("write"):
        save_cloud(cloud.with_instance(ids, predicted_semantic(preds, config.semantic_threshold)), dst)
    click.echo(f"{len(set(ids.tolist()) - {0})} instances -> {dst}")


@cli.command("evaluate")
@click.argument("gt_path", type=click.Path(dir_okay=False))
@click.argument("pred_path", type=click.Path(dir_okay=False))
@click.option("--bins", "bin_height", type=float, default=5.0, show_default=True, help="Height-bin width (m).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), help="Report JSON (stdout if omitted).")
@_reports_errors
def evaluate_command(gt_path, pred_path, bin_height, out_path):
    """Match predicted instances in PRED_PATH against GT_PATH and report tree-level metrics."""
    with stage("load"):
        gt = load_cloud(gt_path)
        pred = load_cloud(pred_path)
    with stage("evaluate"):
        if len(gt) != len(pred):
            raise AlignmentError(f"ground truth has {len(gt)} points but prediction has {len(pred)}")
        report = evaluate(gt.instance, pred.instance, gt.xyz[:, 2], bin_height)
    text = json.dumps(report.to_dict(), indent=2) + "\n"
    if out_path:
        with stage("write"):
            Path(out_path).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


@cli.command("ce")
@click.option("--mb", type=float, required=True, help="Data processed (MB).")
@click.option("--cores", type=float, required=True, help="Number of cores.")
@click.option("--minutes", type=float, required=True, help="Processing time (min).")
@_reports_errors
def ce_command(mb, cores, minutes):
    """Print MB processed per core per minute."""
    with stage("ce"):
        value = compute_ce(CEInput(mb, cores, minutes))
    click.echo(f"{value:.6g}")


@cli.command("prepare")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@seed_option
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.pass_context
@_reports_errors
def prepare_command(ctx, config_path, seed, out_dir):
    """Emit the clouds of a scenario (scenario1..scenario5 or custom) and OUT/manifest.json."""
    with stage("config"):
        config = ScenarioConfig.from_dict(_read_json(config_path), seed=_seed(ctx, seed) if seed is not None else None)
    manifest = prepare_scenario(config, out_dir, threads=ctx.obj["threads"])
    click.echo(f"{len(manifest.artifacts)} clouds -> {out_dir}")


@cli.command("sweep")
@click.argument("cloud_path", type=click.Path(dir_okay=False))
@click.option("--densities", required=True, help="Comma-separated densities; 'full' evaluates the unsparsified cloud.")
@click.option("--preds", "preds_path", type=click.Path(dir_okay=False), help="PRD sidecar aligned with the cloud.")
@click.option("--oracle-noise", "noise_path", type=click.Path(exists=True, dir_okay=False), help="Use oracle predictions.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="GroupingConfig JSON.")
@click.option("--bins", "bin_height", type=float, default=5.0, show_default=True)
@seed_option
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True, help="CSV output.")
@click.pass_context
@_reports_errors
def sweep_command(ctx, cloud_path, densities, preds_path, noise_path, config_path, bin_height, seed, out_path):
    """Segment and evaluate CLOUD_PATH at several densities; one CSV row per density."""
    if (preds_path is None) == (noise_path is None):
        raise click.UsageError("give exactly one of --preds and --oracle-noise")
    seed = _seed(ctx, seed)
    with stage("config"):
        config = GroupingConfig.from_dict(_read_json(config_path))
    with stage("load"):
        cloud = load_cloud(cloud_path)
        if preds_path is not None:
            preds = load_predictions(preds_path)
            if len(preds) != len(cloud):
                raise AlignmentError(f"cloud has {len(cloud)} points but predictions have {len(preds)}")
            provider = prediction_subset_provider(preds)
        else:
            provider = oracle_provider(cloud, OracleNoise.from_dict(_read_json(noise_path)), seed)
    with stage("sweep"):
        rows = sweep_densities(
            cloud, provider, _parse_densities(densities, allow_full=True), seed, config, bin_height, ctx.obj["threads"]
        )
    with stage("write"):
        write_sweep_csv(rows, out_path)
    failed = [r for r in rows if r["status"] != "ok"]
    for row in failed:
        click.echo(f"density {row['density']}: failed: {row['error']}", err=True)
    if failed and len(failed) == len(rows):
        sys.exit(EXIT_VALIDATION)


def main() -> None:
    cli(obj={})


if __name__ == "__main__":
    main()
