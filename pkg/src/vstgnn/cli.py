"""``vstgnn`` command line: fetch/synth -> train -> predict -> eval -> render.

Artifacts live under two roots from the config:

* ``data_root/<event>/...``: event archives (see :mod:`vstgnn.ingest.archive`).
* ``output_root/<held_out>/``: ``checkpoint.npz``, ``history.csv``,
  ``adjacency.csv``, ``predictions/<county>/<date>.tif``, ``metrics*.csv`` and
  ``maps/<county>/<date>.tif`` (+ ``.png`` after ``render``).

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import functools
import json
import logging
from pathlib import Path

import click
import numpy as np
import yaml
from shapely.geometry import box

from vstgnn.config import ExperimentConfig, load_config
from vstgnn.errors import ConfigError, FetchError, NonFiniteLossError, ShapeError, ValidationError
from vstgnn.evaluation import (
    OutageMap,
    evaluate_case,
    oracle_forecast,
    persistence_forecast,
    render_outage_map,
    write_metrics_csv,
    write_outage_geotiff,
)
from vstgnn.graph import build_static_adjacency, load_geometries, transition_supports, write_matrix_csv
from vstgnn.ingest import (
    BlackMarbleBackend,
    DirectoryBackend,
    build_windows,
    fetch_event,
    load_archive,
    prepare_archive,
    synthesize_events,
    write_archive,
)
from vstgnn.ingest.archive import read_tile, write_tile
from vstgnn.trainer import Checkpoint, init_model, make_case_split, predict, train

RUNTIME_ERRORS = (ConfigError, FetchError, NonFiniteLossError, ShapeError, ValidationError,
                  FileNotFoundError, OSError)


def _runtime(fn):
    """Turn library failures into exit code 1 with a one-line message."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except RUNTIME_ERRORS as exc:
            raise click.ClickException(str(exc)) from exc
    return wrapper


def _parse_override(value: str) -> tuple[str, object]:
    if "=" not in value:
        raise click.BadParameter(f"expected KEY=VALUE, got {value!r}", param_hint="--set")
    key, raw = value.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path),
              help="Experiment YAML file (defaults apply when omitted).")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Override a config key, e.g. --set trainer.epochs=5. Repeatable; wins over the file.")
@click.option("-v", "--verbose", count=True, help="-v for info logging, -vv for debug.")
@click.pass_context
def main(ctx: click.Context, config_path: Path | None, overrides: tuple[str, ...], verbose: int):
    """Nighttime-lights outage forecasting with a visual spatiotemporal GNN."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    parsed = dict(_parse_override(o) for o in overrides)
    try:
        ctx.obj = load_config(config_path, parsed)
    except (ConfigError, FileNotFoundError) as exc:
        raise click.ClickException(str(exc)) from exc


def _with_overrides(cfg: ExperimentConfig, *, held_out: str | None = None,
                    epochs: int | None = None, seed: int | None = None) -> ExperimentConfig:
    if held_out is not None:
        if held_out not in cfg.events:
            raise click.UsageError(f"--held-out {held_out!r} is not one of {list(cfg.events)}")
        cfg = dataclasses.replace(cfg, held_out=held_out)
    train_cfg = cfg.trainer.train
    if epochs is not None:
        train_cfg = dataclasses.replace(train_cfg, epochs=epochs)
    if seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=seed)
    return dataclasses.replace(cfg, trainer=dataclasses.replace(cfg.trainer, train=train_cfg))


def _prepared_archives(cfg: ExperimentConfig):
    h, w = cfg.ingest.resolution
    return [prepare_archive(load_archive(cfg.data_root, e), h, w, cfg.ingest.fill_value)
            for e in cfg.events]


def _supports(cfg: ExperimentConfig, archive):
    if cfg.graph.geometries is not None:
        geoms = load_geometries(cfg.graph.geometries)
    else:
        missing = [c for c in archive.county_ids if c not in archive.bboxes]
        if missing:
            raise ValidationError(f"no bounding boxes for counties {missing}; set graph.geometries")
        geoms = {c: box(*archive.bboxes[c]) for c in archive.county_ids}
    adj = build_static_adjacency(geoms, rule=cfg.graph.rule, k=cfg.graph.k)
    return adj, transition_supports(adj)


def _split(cfg: ExperimentConfig, archives):
    return make_case_split(archives, cfg.held_out, cfg.ingest.input_steps, cfg.ingest.horizon,
                           cfg.trainer.val_fraction)


def _checkpoint_path(cfg: ExperimentConfig, given: Path | None) -> Path:
    path = given or cfg.case_dir() / "checkpoint.npz"
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint {path}; run `vstgnn train` first")
    return path


# --------------------------------------------------------------------------- data

@main.command()
@click.argument("event_id")
@click.option("--force", is_flag=True, help="Re-download and overwrite tiles already on disk.")
@click.pass_obj
@_runtime
def fetch(cfg: ExperimentConfig, event_id: str, force: bool):
    """Download one event's daily tiles and monthly composites into the data root.

    Existing tiles are skipped, so reruns only fill in what is missing.
    """
    ingest = cfg.ingest
    manifest = None
    if ingest.source == "directory":
        if ingest.source_root is None:
            raise ConfigError("config key 'ingest.source_root' is required for source=directory")
        manifest_path = ingest.source_root / event_id / "manifest.json"
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text())
        backend = DirectoryBackend(ingest.source_root)
    elif ingest.source == "blackmarble":
        backend = BlackMarbleBackend(output_directory=cfg.data_root / ".downloads")
    else:
        raise click.UsageError("ingest.source is 'synthetic'; use `vstgnn synth` instead of fetch")

    if manifest is not None:
        date_range = tuple(dt.date.fromisoformat(d) for d in manifest["date_range"])
    elif event_id in ingest.event_dates:
        date_range = ingest.event_dates[event_id]
    else:
        known = sorted(ingest.event_dates)
        raise click.UsageError(f"unknown event {event_id!r}; known events: {', '.join(known)} "
                               "(add it under ingest.event_dates)")

    if ingest.counties is not None:
        bboxes = {c: g.bounds for c, g in load_geometries(ingest.counties).items()}
    elif manifest is not None:
        bboxes = manifest["bboxes"]
    else:
        raise ConfigError("config key 'ingest.counties' must point to a county GeoJSON")

    archive = fetch_event(event_id, ingest.product, date_range, bboxes, backend)
    written = write_archive(archive, cfg.data_root, force=force)
    click.echo(f"{event_id}: wrote {written} file(s) under {cfg.data_root / event_id}, "
               f"{len(archive.gaps)} gap(s)")


@main.command()
@click.option("--seed", type=int, help="Generator seed (default: derived from the config seed).")
@click.option("--force", is_flag=True, help="Overwrite tiles already on disk.")
@click.pass_obj
@_runtime
def synth(cfg: ExperimentConfig, seed: int | None, force: bool):
    """Generate one synthetic archive per configured event into the data root."""
    base = cfg.ingest.synthetic
    if seed is not None:
        base = dataclasses.replace(base, seed=seed)
    for archive in synthesize_events(base, cfg.events, cfg.ingest.landfall_days):
        written = write_archive(archive, cfg.data_root, force=force)
        click.echo(f"{archive.event_id}: wrote {written} file(s)")


# --------------------------------------------------------------------------- model

@main.command("train")
@click.option("--held-out", help="Event used as the test case (overrides config held_out).")
@click.option("--epochs", type=int, help="Override trainer.epochs.")
@click.option("--seed", type=int, help="Override trainer.seed.")
@click.option("--force", is_flag=True, help="Retrain even if a checkpoint already exists.")
@click.pass_obj
@_runtime
def train_cmd(cfg: ExperimentConfig, held_out: str | None, epochs: int | None,
              seed: int | None, force: bool):
    """Train on the non-held-out events; writes checkpoint.npz and history.csv."""
    cfg = _with_overrides(cfg, held_out=held_out, epochs=epochs, seed=seed)
    out = cfg.case_dir()
    ckpt_path = out / "checkpoint.npz"
    if ckpt_path.exists() and not force:
        click.echo(f"{ckpt_path} exists; pass --force to retrain")
        return
    archives = _prepared_archives(cfg)
    split = _split(cfg, archives)
    adj, supports = _supports(cfg, archives[0])
    model = init_model(cfg.model_config(len(adj.node_order)), supports, cfg.trainer.train.seed)
    ckpt = train(split, model, cfg.trainer.train, history_path=out / "history.csv")
    write_matrix_csv(adj, out / "adjacency.csv")
    ckpt.save(ckpt_path)
    train_n, val_n, test_n = split.sizes
    click.echo(f"{cfg.held_out}: trained on {train_n} windows ({val_n} val, {test_n} test), "
               f"best epoch {ckpt.best_epoch}; wrote {ckpt_path}")


@main.command("predict")
@click.option("--checkpoint", type=click.Path(dir_okay=False, path_type=Path),
              help="Checkpoint file (default: <output_root>/<held_out>/checkpoint.npz).")
@click.option("--held-out", help="Event to forecast (overrides config held_out).")
@click.option("--force", is_flag=True, help="Overwrite existing prediction rasters.")
@click.pass_obj
@_runtime
def predict_cmd(cfg: ExperimentConfig, checkpoint: Path | None, held_out: str | None, force: bool):
    """Write radiance forecasts for every held-out target day as GeoTIFFs."""
    cfg = _with_overrides(cfg, held_out=held_out)
    ckpt = Checkpoint.load(_checkpoint_path(cfg, checkpoint))
    h, w = cfg.ingest.resolution
    archive = prepare_archive(load_archive(cfg.data_root, cfg.held_out), h, w, cfg.ingest.fill_value)
    windows = build_windows(archive, cfg.ingest.input_steps, cfg.ingest.horizon)
    out = cfg.case_dir() / "predictions"
    written = 0
    for win, pred in zip(windows, predict(ckpt, windows)):
        for k, d in enumerate(win.target_dates):
            for v, county in enumerate(win.node_order):
                path = out / county / f"{d.isoformat()}.tif"
                if path.exists() and not force:
                    continue
                write_tile(archive.tile(county, d).replace(radiance=pred[v, k, 0]), path, nodata=None)
                written += 1
    click.echo(f"{cfg.held_out}: wrote {written} prediction raster(s) under {out}")


@main.command("eval")
@click.option("--checkpoint", type=click.Path(dir_okay=False, path_type=Path),
              help="Checkpoint file (default: <output_root>/<held_out>/checkpoint.npz).")
@click.option("--held-out", help="Event to evaluate (overrides config held_out).")
@click.option("--oracle", "mode", flag_value="oracle", help="Score a perfect forecaster (metrics are 0).")
@click.option("--persistence", "mode", flag_value="persistence",
              help="Score the last-frame persistence baseline.")
@click.option("--raw", is_flag=True, default=None, help="Metrics in radiance units instead of normalized.")
@click.option("--maps/--no-maps", default=True, show_default=True,
              help="Write predicted Percent-of-Normal GeoTIFFs under maps/.")
@click.pass_obj
@_runtime
def eval_cmd(cfg: ExperimentConfig, checkpoint: Path | None, held_out: str | None,
             mode: str | None, raw: bool | None, maps: bool):
    """Score held-out forecasts (RMSE/MAE/MAPE) and derive outage maps.

    Writes metrics.csv (or metrics_<baseline>.csv) in the case directory.
    """
    cfg = _with_overrides(cfg, held_out=held_out)
    raw = cfg.eval.raw if raw is None else raw
    archives = _prepared_archives(cfg)
    split = _split(cfg, archives)
    archive = archives[list(cfg.events).index(cfg.held_out)]
    if mode is None:
        forecaster = Checkpoint.load(_checkpoint_path(cfg, checkpoint))
        name, maps_dir = "metrics.csv", cfg.case_dir() / "maps"
    else:
        forecaster = {"oracle": oracle_forecast, "persistence": persistence_forecast}[mode]
        name, maps_dir = f"metrics_{mode}.csv", cfg.case_dir() / f"maps_{mode}"
    report, pairs = evaluate_case(forecaster, split, archive if maps else None,
                                  raw=raw, eps=cfg.eval.mape_eps)
    write_metrics_csv([report], cfg.case_dir() / name)
    for predicted, _ in pairs:
        write_outage_geotiff(predicted, maps_dir / predicted.county_id / f"{predicted.date.isoformat()}.tif")
    click.echo(f"{report.case_name}: RMSE {report.rmse:.4f} MAE {report.mae:.4f} "
               f"MAPE {report.mape:.2f}% over {report.num_windows} windows ({report.space})")


@main.command()
@click.option("--maps-dir", type=click.Path(file_okay=False, path_type=Path),
              help="Directory of outage GeoTIFFs (default: <output_root>/<held_out>/maps).")
@click.option("--force", is_flag=True, help="Re-render PNGs that already exist.")
@click.pass_obj
@_runtime
def render(cfg: ExperimentConfig, maps_dir: Path | None, force: bool):
    """Colour every outage GeoTIFF (red 0% to green 100% of normal) as a PNG next to it."""
    maps_dir = maps_dir or cfg.case_dir() / "maps"
    if not maps_dir.is_dir():
        raise FileNotFoundError(f"missing maps directory {maps_dir}; run `vstgnn eval` first")
    rendered = 0
    for tif in sorted(maps_dir.glob("*/*.tif")):
        png = tif.with_suffix(".png")
        if png.exists() and not force:
            continue
        tile = read_tile(tif, tif.parent.name, dt.date.fromisoformat(tif.stem))
        outage = OutageMap(tile.county_id, tile.date, np.asarray(tile.radiance, dtype=np.float64),
                           tile.georef)
        render_outage_map(outage, png, cmap=cfg.eval.cmap)
        rendered += 1
    click.echo(f"rendered {rendered} map(s) under {maps_dir}")


if __name__ == "__main__":
    main()
