"""Event archives: acquisition backends, gap policy, and GeoTIFF persistence.

On-disk layout under a data root::

    <event_id>/manifest.json
    <event_id>/<county_id>/<YYYY-MM-DD>.tif            daily radiance (VNP46A2)
    <event_id>/<county_id>/monthly/<YYYY-MM-01>.tif    monthly composites (VNP46A3)
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol

import numpy as np
import rasterio
from affine import Affine

from vstgnn.errors import FetchError, ValidationError
from vstgnn.ingest.tiles import GeoRef, RasterTile, clean_tile, resize_tile

log = logging.getLogger(__name__)

DAILY_PRODUCT = "VNP46A2"
MONTHLY_PRODUCT = "VNP46A3"
PRODUCTS = ("VNP46A1", "VNP46A2", "VNP46A3", "VNP46A4")
DEFAULT_FILL_VALUE = 65535.0

BBox = tuple[float, float, float, float]  # (min_lon, min_lat, max_lon, max_lat)


def date_span(first: dt.date, last: dt.date) -> list[dt.date]:
    return [first + dt.timedelta(days=i) for i in range((last - first).days + 1)]


@dataclass(frozen=True)
class EventArchive:
    """All daily tiles for one event, with gaps recorded explicitly.

    ``composites`` maps each county to its monthly baseline tiles, oldest first.
    ``meta`` carries event annotations such as the landfall date.
    """

    event_id: str
    tiles: Mapping[tuple[str, dt.date], RasterTile]
    date_range: tuple[dt.date, dt.date]
    county_ids: tuple[str, ...] = ()
    gaps: frozenset = frozenset()
    composites: Mapping[str, tuple[RasterTile, ...]] = field(default_factory=dict)
    bboxes: Mapping[str, BBox] = field(default_factory=dict)
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        first, last = self.date_range
        if last < first:
            raise ValidationError(f"empty date range {first}..{last}")
        counties = tuple(sorted(set(self.county_ids) | {c for c, _ in self.tiles}))
        object.__setattr__(self, "county_ids", counties)
        present = set(self.tiles)
        expected = {(c, d) for c in counties for d in self.dates}
        stray = present - expected
        if stray:
            raise ValidationError(f"tiles outside date range: {sorted(stray)[:3]}")
        object.__setattr__(self, "gaps", frozenset(self.gaps) | frozenset(expected - present))

    @property
    def dates(self) -> list[dt.date]:
        return date_span(*self.date_range)

    @property
    def num_dates(self) -> int:
        return (self.date_range[1] - self.date_range[0]).days + 1

    @property
    def landfall(self) -> dt.date | None:
        value = self.meta.get("landfall")
        if value is None or isinstance(value, dt.date):
            return value
        return dt.date.fromisoformat(str(value))

    @property
    def missing(self) -> frozenset:
        """(county, date) pairs recorded as gaps that have no tile at all."""
        return frozenset(k for k in self.gaps if k not in self.tiles)

    def tile(self, county_id: str, date: dt.date) -> RasterTile:
        return self.tiles[(county_id, date)]

    def map_tiles(self, fn) -> "EventArchive":
        tiles = {k: fn(t) for k, t in self.tiles.items()}
        comps = {c: tuple(fn(t) for t in ts) for c, ts in self.composites.items()}
        return EventArchive(self.event_id, tiles, self.date_range, self.county_ids,
                            self.gaps, comps, self.bboxes, self.meta)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventArchive):
            return NotImplemented
        return (
            self.event_id == other.event_id
            and self.date_range == other.date_range
            and self.county_ids == other.county_ids
            and self.gaps == other.gaps
            and set(self.tiles) == set(other.tiles)
            and all(self.tiles[k] == other.tiles[k] for k in self.tiles)
            and set(self.composites) == set(other.composites)
            and all(tuple(self.composites[c]) == tuple(other.composites[c]) for c in self.composites)
        )

    __hash__ = None


def fill_gaps(archive: EventArchive) -> EventArchive:
    """Fill each missing (county, date) with the county's most recent prior tile.

    With no prior tile the gap becomes an all-zero grid and a warning is logged.
    The gap set is kept on the returned archive.
    """
    if not archive.missing:
        return archive
    tiles = dict(archive.tiles)
    for county in archive.county_ids:
        template = next((tiles[(county, d)] for d in archive.dates if (county, d) in tiles), None)
        if template is None:
            template = next(iter(tiles.values()), None)
        if template is None:
            raise ValidationError(f"archive {archive.event_id!r} has no tiles at all")
        prev = None
        for d in archive.dates:
            key = (county, d)
            if key in tiles:
                prev = tiles[key]
                continue
            if prev is not None:
                tiles[key] = prev.replace(date=d)
            else:
                log.warning("no prior tile for %s on %s in %s; filling with zeros",
                            county, d, archive.event_id)
                tiles[key] = RasterTile(county, d, np.zeros_like(template.radiance),
                                        template.georef)
            prev = tiles[key]
    return EventArchive(archive.event_id, tiles, archive.date_range, archive.county_ids,
                        archive.gaps, archive.composites, archive.bboxes, archive.meta)


def prepare_archive(archive: EventArchive, height: int, width: int,
                    fill_value: float | None = DEFAULT_FILL_VALUE) -> EventArchive:
    """Clean, resize and gap-fill an archive so it is ready for windowing."""
    cleaned = archive.map_tiles(lambda t: resize_tile(clean_tile(t, fill_value), height, width))
    return fill_gaps(cleaned)


def month_start(d: dt.date) -> dt.date:
    return d.replace(day=1)


def preceding_months(d: dt.date, n: int = 3) -> list[dt.date]:
    """First days of the ``n`` months strictly before ``d``'s month, oldest first."""
    out = []
    cur = month_start(d)
    for _ in range(n):
        cur = month_start(cur - dt.timedelta(days=1))
        out.append(cur)
    return out[::-1]


def composite_months(first: dt.date, last: dt.date, n: int = 3) -> list[dt.date]:
    """Every monthly composite needed to baseline any day in ``first..last``."""
    months = set()
    cur = month_start(first)
    while cur <= last:
        months.update(preceding_months(cur, n))
        cur = month_start(cur + dt.timedelta(days=32))
    return sorted(months)


# --------------------------------------------------------------------------- GeoTIFF I/O

def read_tile(path: Path, county_id: str, date: dt.date) -> RasterTile:
    with rasterio.open(path) as src:
        rad = src.read(1)
        crs = src.crs.to_string() if src.crs else ""
        transform = src.transform
    return RasterTile(county_id, date, rad.astype(np.float32, copy=False),
                      GeoRef(Affine(*transform[:6]), crs))


def write_tile(tile: RasterTile, path: Path, nodata: float | None = DEFAULT_FILL_VALUE) -> None:
    """Write a single-band float32 GeoTIFF atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h, w = tile.shape
    fd, tmp = tempfile.mkstemp(suffix=".tif", dir=path.parent)
    os.close(fd)
    try:
        with rasterio.open(
            tmp, "w", driver="GTiff", height=h, width=w, count=1, dtype="float32",
            crs=tile.georef.crs or None, transform=tile.georef.transform, nodata=nodata,
        ) as dst:
            dst.write(np.asarray(tile.radiance, dtype=np.float32), 1)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent)
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _jsonable(value):
    if isinstance(value, dt.date):
        return value.isoformat()
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_archive(archive: EventArchive, root: Path, *, force: bool = False) -> int:
    """Persist an archive under ``root/<event_id>``.

    Existing tiles are skipped unless ``force``. Returns the number of files written.
    """
    event_dir = Path(root) / archive.event_id
    written = 0
    for (county, d), tile in sorted(archive.tiles.items()):
        if (county, d) in archive.missing:
            continue
        path = event_dir / county / f"{d.isoformat()}.tif"
        if path.exists() and not force:
            continue
        write_tile(tile, path)
        written += 1
    for county, comps in archive.composites.items():
        for tile in comps:
            path = event_dir / county / "monthly" / f"{tile.date.isoformat()}.tif"
            if path.exists() and not force:
                continue
            write_tile(tile, path)
            written += 1
    manifest = {
        "event_id": archive.event_id,
        "date_range": [archive.date_range[0].isoformat(), archive.date_range[1].isoformat()],
        "county_ids": list(archive.county_ids),
        "gaps": sorted([c, d.isoformat()] for c, d in archive.gaps),
        "bboxes": {c: list(b) for c, b in archive.bboxes.items()},
        "meta": _jsonable(dict(archive.meta)),
    }
    _atomic_write_text(event_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
    return written


def load_archive(root: Path, event_id: str) -> EventArchive:
    """Load an archive previously written by :func:`write_archive`."""
    event_dir = Path(root) / event_id
    manifest_path = event_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no archive manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    first, last = (dt.date.fromisoformat(s) for s in manifest["date_range"])
    counties = manifest["county_ids"]
    backend = DirectoryBackend(root)
    tiles = {}
    composites = {}
    for county in counties:
        got = backend.fetch(event_id, DAILY_PRODUCT, county, None, date_span(first, last))
        tiles.update({(county, d): t for d, t in got.items()})
        comps = backend.monthly(event_id, county)
        if comps:
            composites[county] = comps
    meta = dict(manifest.get("meta", {}))
    recorded_gaps = {(c, dt.date.fromisoformat(d)) for c, d in manifest.get("gaps", [])}
    return EventArchive(event_id, tiles, (first, last), tuple(counties), frozenset(recorded_gaps),
                        composites, {c: tuple(b) for c, b in manifest.get("bboxes", {}).items()},
                        meta)


# --------------------------------------------------------------------------- backends

class ArchiveBackend(Protocol):
    def fetch(self, event_id: str, product_id: str, county_id: str, bbox: BBox | None,
              dates: list[dt.date]) -> dict[dt.date, RasterTile]:
        """Return the tiles that exist among ``dates``; raise FetchError when unreachable."""


class DirectoryBackend:
    """Serves tiles from a local directory tree (fixtures, or a previous download)."""

    def __init__(self, root: Path):
        self.root = Path(root)

    def fetch(self, event_id, product_id, county_id, bbox, dates):
        if not self.root.is_dir():
            raise FetchError(f"archive root {self.root} does not exist")
        county_dir = self.root / event_id / county_id
        if product_id == MONTHLY_PRODUCT:
            county_dir = county_dir / "monthly"
        out = {}
        for d in dates:
            path = county_dir / f"{d.isoformat()}.tif"
            if path.exists():
                out[d] = read_tile(path, county_id, d)
        return out

    def monthly(self, event_id: str, county_id: str) -> tuple[RasterTile, ...]:
        mdir = self.root / event_id / county_id / "monthly"
        if not mdir.is_dir():
            return ()
        return tuple(read_tile(p, county_id, dt.date.fromisoformat(p.stem))
                     for p in sorted(mdir.glob("*.tif")))


class BlackMarbleBackend:
    """Live NASA Black Marble access through the optional ``blackmarblepy`` package.

    Requires an Earthdata bearer token (``BLACKMARBLE_TOKEN``). Each call downloads
    the full date range for one county bounding box.
    """

    def __init__(self, token: str | None = None, output_directory: Path | None = None):
        self.token = token or os.environ.get("BLACKMARBLE_TOKEN")
        self.output_directory = output_directory

    def fetch(self, event_id, product_id, county_id, bbox, dates):
        if not self.token:
            raise FetchError("BLACKMARBLE_TOKEN is not set")
        try:
            import geopandas as gpd
            from blackmarble.raster import bm_raster
            from shapely.geometry import box
        except ImportError as exc:
            raise FetchError(f"live fetch needs blackmarblepy and geopandas: {exc}") from exc
        gdf = gpd.GeoDataFrame({"county_id": [county_id]}, geometry=[box(*bbox)], crs="EPSG:4326")
        try:
            ds = bm_raster(gdf, product_id=product_id, date_range=list(dates), token=self.token,
                           output_directory=self.output_directory)
        except Exception as exc:  # network, auth, and archive-side failures
            raise FetchError(f"Black Marble request failed for {county_id}: {exc}") from exc
        var = next(iter(ds.data_vars))
        da = ds[var]
        xs = np.asarray(da["x"])
        ys = np.asarray(da["y"])
        xres = float(xs[1] - xs[0]) if xs.size > 1 else 15 / 3600
        yres = float(ys[1] - ys[0]) if ys.size > 1 else -15 / 3600
        transform = Affine(xres, 0, float(xs[0]) - xres / 2, 0, yres, float(ys[0]) - yres / 2)
        out = {}
        for t in da["time"].values:
            d = dt.date.fromisoformat(str(np.datetime_as_string(t, unit="D")))
            if d in dates:
                out[d] = RasterTile(county_id, d, np.asarray(da.sel(time=t), dtype=np.float32),
                                    GeoRef(transform, "EPSG:4326"))
        return out


def validate_bbox(county_id: str, bbox: Iterable[float]) -> BBox:
    vals = tuple(float(v) for v in bbox)
    if len(vals) != 4:
        raise ValidationError(f"bbox for {county_id} needs 4 numbers, got {len(vals)}")
    min_x, min_y, max_x, max_y = vals
    if not (np.all(np.isfinite(vals)) and min_x < max_x and min_y < max_y):
        raise ValidationError(f"malformed bbox for {county_id}: {vals}")
    return vals


def _with_retries(fn, retries: int, backoff: float):
    for attempt in range(retries + 1):
        try:
            return fn()
        except FetchError:
            if attempt == retries:
                raise
            time.sleep(backoff * 2 ** attempt)


def fetch_event(event_id: str, product_id: str, date_range: tuple[dt.date, dt.date],
                county_bboxes: Mapping[str, Iterable[float]], backend: ArchiveBackend,
                *, with_composites: bool = True, retries: int = 2, backoff: float = 0.5,
                max_workers: int = 4) -> EventArchive:
    """Collect one tile per (county, date) the backend has; record the rest as gaps.

    Counties are fetched concurrently. When ``with_composites`` is set, the three
    monthly composites preceding the event's first month are fetched too.
    """
    if product_id not in PRODUCTS:
        raise ValidationError(f"unknown Black Marble product {product_id!r}")
    first, last = date_range
    if last < first:
        raise ValidationError(f"empty date range {first}..{last}")
    if not county_bboxes:
        raise ValidationError("no counties requested")
    bboxes = {c: validate_bbox(c, b) for c, b in county_bboxes.items()}
    dates = date_span(first, last)
    months = composite_months(first, last)

    def one(county):
        daily = _with_retries(
            lambda: backend.fetch(event_id, product_id, county, bboxes[county], dates), retries, backoff)
        monthly = {}
        if with_composites:
            monthly = _with_retries(
                lambda: backend.fetch(event_id, MONTHLY_PRODUCT, county, bboxes[county], months),
                retries, backoff)
        return county, daily, monthly

    tiles, composites = {}, {}
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        for county, daily, monthly in pool.map(one, sorted(bboxes)):
            tiles.update({(county, d): t for d, t in daily.items()})
            if monthly:
                composites[county] = tuple(monthly[m] for m in sorted(monthly))
    archive = EventArchive(event_id, tiles, (first, last), tuple(bboxes), frozenset(),
                           composites, bboxes)
    if archive.gaps:
        log.info("%s: %d of %d (county, date) pairs missing", event_id, len(archive.gaps),
                 len(bboxes) * len(dates))
    return archive
