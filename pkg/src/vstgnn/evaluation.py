"""Forecast-error metrics, Percent-of-Normal outage maps and their rendering."""

from __future__ import annotations

import csv
import datetime as dt
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np
from matplotlib import colormaps
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.colors import Normalize
from matplotlib.figure import Figure

from vstgnn.errors import ShapeError, ValidationError
from vstgnn.ingest import EventArchive, GeoRef, GraphSignalWindow, RasterTile
from vstgnn.ingest.archive import month_start, write_tile
from vstgnn.trainer import Checkpoint, CaseSplit, fit_scale, normalize, predict_normalized

log = logging.getLogger(__name__)

MAPE_EPS = 0.01
BASELINE_EPS = 1e-6
NO_SIGNAL_PERCENT = 100.0
OUTAGE_CMAP = "RdYlGn"


# --------------------------------------------------------------------------- metrics

def _pair(pred, actual) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).ravel()
    a = np.asarray(actual, dtype=np.float64).ravel()
    if p.shape != a.shape:
        raise ShapeError(f"prediction has {p.size} values, actual has {a.size}")
    if p.size == 0:
        raise ValidationError("metrics need at least one value")
    return p, a


def rmse(pred, actual) -> float:
    p, a = _pair(pred, actual)
    return float(np.sqrt(np.mean((p - a) ** 2)))


def mae(pred, actual) -> float:
    p, a = _pair(pred, actual)
    return float(np.mean(np.abs(p - a)))


def mape(pred, actual, eps: float = MAPE_EPS) -> float:
    """Percent; near-zero actuals are floored at ``eps`` in the denominator."""
    p, a = _pair(pred, actual)
    return float(100.0 * np.mean(np.abs(p - a) / np.maximum(np.abs(a), eps)))


@dataclass(frozen=True)
class MetricReport:
    case_name: str
    rmse: float
    mae: float
    mape: float
    num_windows: int
    space: str = "normalized"


def metric_report(case_name: str, pred, actual, num_windows: int, space: str = "normalized",
                  eps: float = MAPE_EPS) -> MetricReport:
    return MetricReport(case_name, rmse(pred, actual), mae(pred, actual), mape(pred, actual, eps),
                        num_windows, space)


def write_metrics_csv(reports: Sequence[MetricReport], path: Path) -> None:
    """Table-style CSV: case, rmse, mae, mape (percent), plus window count and value space."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "rmse", "mae", "mape", "num_windows", "space"])
        for r in reports:
            w.writerow([r.case_name, repr(r.rmse), repr(r.mae), repr(r.mape), r.num_windows, r.space])


def read_metrics_csv(path: Path) -> list[MetricReport]:
    with Path(path).open(newline="") as fh:
        return [MetricReport(r["case"], float(r["rmse"]), float(r["mae"]), float(r["mape"]),
                             int(r["num_windows"]), r["space"]) for r in csv.DictReader(fh)]


# --------------------------------------------------------------------------- percent of normal

@dataclass(frozen=True, eq=False)
class OutageMap:
    county_id: str
    date: dt.date
    percent_normal: np.ndarray
    georef: GeoRef

    @property
    def mean(self) -> float:
        return float(np.mean(self.percent_normal))


def baseline_composites(composites: Sequence[RasterTile], day: dt.date, n: int = 3) -> list[RasterTile]:
    """The ``n`` most recent composites from months strictly before ``day``'s month.

    Returns fewer (with a warning) when the archive lacks them.
    """
    eligible = sorted((c for c in composites if c.date < month_start(day)), key=lambda c: c.date)
    chosen = eligible[-n:]
    if len(chosen) < n:
        log.warning("only %d monthly composites before %s for %s", len(chosen), day,
                    composites[0].county_id if composites else "?")
    return chosen


def percent_of_normal(day_tile: RasterTile, monthly_composites: Sequence[RasterTile],
                      eps: float = BASELINE_EPS) -> OutageMap:
    """``100 * NTL / mean(composites)`` per pixel.

    Pixels whose baseline mean is ``<= eps`` have no signal to lose and are
    reported as 100 (normal). One or two composites are accepted with a warning.
    """
    comps = list(monthly_composites)
    if not 1 <= len(comps) <= 3:
        raise ValidationError(f"need 1 to 3 monthly composites, got {len(comps)}")
    if len(comps) < 3:
        log.warning("percent_of_normal for %s on %s uses %d composites", day_tile.county_id,
                    day_tile.date, len(comps))
    for c in comps:
        if c.shape != day_tile.shape:
            raise ValidationError(f"composite shape {c.shape} != day shape {day_tile.shape}")
        if c.county_id != day_tile.county_id:
            raise ValidationError(f"composite county {c.county_id} != {day_tile.county_id}")
        if c.georef != day_tile.georef:
            raise ValidationError(f"composite georef differs for {day_tile.county_id}")
    baseline = np.mean([np.asarray(c.radiance, dtype=np.float64) for c in comps], axis=0)
    ntl = np.asarray(day_tile.radiance, dtype=np.float64)
    lit = baseline > eps
    out = np.full(ntl.shape, NO_SIGNAL_PERCENT)
    out[lit] = 100.0 * ntl[lit] / baseline[lit]
    return OutageMap(day_tile.county_id, day_tile.date, out, day_tile.georef)


# --------------------------------------------------------------------------- rendering

def colorize(percent: np.ndarray, cmap: str = OUTAGE_CMAP) -> np.ndarray:
    """RGBA uint8 image; 0% maps to the red end, >= 100% to the green end."""
    norm = Normalize(vmin=0.0, vmax=100.0, clip=True)
    return colormaps[cmap](norm(np.clip(percent, 0.0, 100.0)), bytes=True)


def render_outage_map(outage: OutageMap, path: Path | None = None, cmap: str = OUTAGE_CMAP,
                      title: str | None = None) -> bytes:
    """PNG of the map with a 0-100% colorbar. Byte-identical for identical input."""
    pct = np.clip(np.asarray(outage.percent_normal, dtype=np.float64), 0.0, 100.0)
    if not np.all(np.isfinite(pct)):
        raise ValidationError("outage map has non-finite values")
    fig = Figure(figsize=(4, 3.4), dpi=100)
    FigureCanvasAgg(fig)
    ax = fig.add_subplot()
    im = ax.imshow(pct, cmap=cmap, vmin=0.0, vmax=100.0, interpolation="nearest")
    ax.set_axis_off()
    ax.set_title(title or f"{outage.county_id} {outage.date.isoformat()}", fontsize=9)
    cbar = fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    cbar.set_label("% of normal")
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata={"Software": None})
    data = buf.getvalue()
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(data)
        tmp.replace(path)
    return data


def write_outage_geotiff(outage: OutageMap, path: Path) -> None:
    tile = RasterTile(outage.county_id, outage.date, outage.percent_normal.astype(np.float32),
                      outage.georef)
    write_tile(tile, path, nodata=None)


# --------------------------------------------------------------------------- case evaluation

Forecaster = Callable[[Sequence[GraphSignalWindow]], list[np.ndarray]]


def persistence_forecast(windows: Sequence[GraphSignalWindow]) -> list[np.ndarray]:
    """Repeat each window's last observed frame for every horizon step."""
    return [np.repeat(w.inputs[:, -1:], w.T, axis=1) for w in windows]


def oracle_forecast(windows: Sequence[GraphSignalWindow]) -> list[np.ndarray]:
    return [np.array(w.targets, copy=True) for w in windows]


def iter_outage_maps(windows: Sequence[GraphSignalWindow], preds: Sequence[np.ndarray],
                     archive: EventArchive) -> Iterator[tuple[OutageMap, OutageMap]]:
    """(predicted, actual) Percent-of-Normal maps for every target county-day.

    ``preds`` are in radiance units.
    """
    for w, p in zip(windows, preds):
        for k, d in enumerate(w.target_dates):
            for v, county in enumerate(w.node_order):
                actual = archive.tile(county, d)
                comps = baseline_composites(archive.composites.get(county, ()), d)
                if not comps:
                    raise ValidationError(f"no monthly composites for {county} before {d}")
                pred_tile = actual.replace(radiance=p[v, k, 0])
                yield (percent_of_normal(pred_tile, comps),
                       percent_of_normal(actual.replace(radiance=w.targets[v, k, 0]), comps))


def evaluate_case(forecaster: Checkpoint | Forecaster, split: CaseSplit,
                  archive: EventArchive | None = None, *, scale: float | None = None,
                  raw: bool = False, eps: float = MAPE_EPS
                  ) -> tuple[MetricReport, list[tuple[OutageMap, OutageMap]]]:
    """Metrics over every test-window pixel, plus outage maps if ``archive`` is given.

    ``forecaster`` is a trained checkpoint or a callable returning radiance
    forecasts. Metrics use normalized pixels unless ``raw``.
    """
    windows = split.test_windows
    if not windows:
        raise ValidationError(f"case {split.case_name!r} has no test windows")
    if isinstance(forecaster, Checkpoint):
        scale = forecaster.scale
        model = forecaster.build_model()
        pred_norm = predict_normalized(model, windows, scale)
        preds = [p * np.float32(scale) for p in pred_norm]
    else:
        if scale is None:
            scale = fit_scale(split.train_windows)
        preds = forecaster(windows)
        pred_norm = [normalize(p, scale) for p in preds]
    if raw:
        p_all = np.concatenate([p.ravel() for p in preds])
        a_all = np.concatenate([w.targets.ravel() for w in windows])
    else:
        p_all = np.concatenate([p.ravel() for p in pred_norm])
        a_all = np.concatenate([normalize(w.targets, scale).ravel() for w in windows])
    report = metric_report(split.case_name, p_all, a_all, len(windows),
                           "raw" if raw else "normalized", eps)
    maps = list(iter_outage_maps(windows, preds, archive)) if archive is not None else []
    return report, maps


def mean_percent_by_date(maps: Sequence[OutageMap], counties: Sequence[str] | None = None
                         ) -> dict[dt.date, float]:
    """Average map value per date, optionally over a subset of counties."""
    keep = set(counties) if counties is not None else None
    acc: dict[dt.date, list[float]] = {}
    for m in maps:
        if keep is None or m.county_id in keep:
            acc.setdefault(m.date, []).append(m.mean)
    return {d: float(np.mean(v)) for d, v in sorted(acc.items())}
