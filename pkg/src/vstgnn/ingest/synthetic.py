"""Deterministic synthetic hurricane events for desk-scale experiments.

Each county gets a fixed "city lights" pattern (Gaussian blobs over a dim
background, optionally with an unlit ocean half-plane written as the fill
value). Geography comes from ``pattern_seed`` so several events can share the
same counties. Daily tiles are ``pattern * recovery(day) * (1 + sigma * noise)``
where noise for (county i, day j) is drawn from a generator seeded with
``[seed, i, j]``, which makes every tile reproducible on its own.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from vstgnn.errors import ConfigError, ValidationError
from vstgnn.ingest.archive import DEFAULT_FILL_VALUE, EventArchive, composite_months
from vstgnn.ingest.tiles import GeoRef, RasterTile

COUNTY_SPAN_DEG = 0.5
BACKGROUND_RADIANCE = 5.0  # dim suburban/rural lighting, nW/cm^2 sr
_AFFECTED_STREAM = 7919


@dataclass(frozen=True)
class SyntheticEventConfig:
    node_count: int = 8
    grid_size: int = 32
    num_days: int = 61
    landfall_day: int = 30
    depth: float | tuple[float, ...] = 0.8
    recovery_half_life_days: float = 10.0
    noise_sigma: float = 0.1
    seed: int = 0
    affected_fraction: float = 1.0
    pattern_seed: int = 0
    ocean: bool = True
    start_date: dt.date = dt.date(2022, 9, 1)
    event_id: str = "synthetic"

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> "SyntheticEventConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown synthetic-event keys: {sorted(unknown)}")
        values = dict(values)
        if isinstance(values.get("start_date"), str):
            values["start_date"] = dt.date.fromisoformat(values["start_date"])
        if isinstance(values.get("depth"), (list, tuple)):
            values["depth"] = tuple(float(d) for d in values["depth"])
        return cls(**values)

    def validate(self) -> None:
        if self.node_count < 1 or self.grid_size < 1 or self.num_days < 1:
            raise ValidationError("node_count, grid_size and num_days must be >= 1")
        if not 0 <= self.landfall_day < self.num_days:
            raise ValidationError(f"landfall_day {self.landfall_day} outside [0, {self.num_days})")
        depths = self.depth if isinstance(self.depth, tuple) else (self.depth,)
        if isinstance(self.depth, tuple) and len(depths) != self.node_count:
            raise ValidationError(f"depth list has {len(depths)} entries for {self.node_count} nodes")
        if any(not 0.0 <= d <= 1.0 for d in depths):
            raise ValidationError(f"depth must lie in [0, 1], got {self.depth}")
        if self.recovery_half_life_days <= 0:
            raise ValidationError("recovery_half_life_days must be > 0")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")
        if not 0.0 <= self.affected_fraction <= 1.0:
            raise ValidationError("affected_fraction must lie in [0, 1]")


def county_ids(node_count: int) -> list[str]:
    return [f"{12001 + 2 * i:05d}" for i in range(node_count)]


def county_bboxes(node_count: int) -> dict[str, tuple[float, float, float, float]]:
    """Half-degree county boxes on a square-ish lattice starting at (-87, 31)."""
    cols = int(np.ceil(np.sqrt(node_count)))
    out = {}
    for i, cid in enumerate(county_ids(node_count)):
        r, c = divmod(i, cols)
        west = -87.0 + c * COUNTY_SPAN_DEG
        north = 31.0 - r * COUNTY_SPAN_DEG
        out[cid] = (west, north - COUNTY_SPAN_DEG, west + COUNTY_SPAN_DEG, north)
    return out


def county_pattern(index: int, grid_size: int, pattern_seed: int = 0,
                   ocean: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free radiance pattern and land mask for one synthetic county."""
    rng = np.random.default_rng([pattern_seed, index])
    yy, xx = np.mgrid[0:grid_size, 0:grid_size] / max(grid_size - 1, 1)
    img = np.full((grid_size, grid_size), BACKGROUND_RADIANCE)
    for _ in range(rng.integers(2, 5)):
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        width = rng.uniform(0.05, 0.2)
        amp = rng.uniform(10.0, 60.0)
        img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
    land = np.ones_like(img, dtype=bool)
    if ocean and index % 2 == 1:
        angle = rng.uniform(0, 2 * np.pi)
        proj = (xx - 0.5) * np.cos(angle) + (yy - 0.5) * np.sin(angle)
        land = proj < 0.3
    img[~land] = 0.0
    return img, land


def recovery_curve(day: np.ndarray | int, landfall_day: int, depth: float,
                   half_life: float) -> np.ndarray:
    """Fraction of normal light: 1 before landfall, ``1 - depth`` on landfall day,
    then recovering with the given half-life."""
    day = np.asarray(day, dtype=np.float64)
    since = day - landfall_day
    return np.where(since < 0, 1.0, 1.0 - depth * np.power(0.5, np.maximum(since, 0) / half_life))


def county_depths(config: SyntheticEventConfig, seed: int) -> np.ndarray:
    if isinstance(config.depth, tuple):
        return np.asarray(config.depth, dtype=np.float64)
    n = config.node_count
    k = int(round(config.affected_fraction * n))
    rng = np.random.default_rng([seed, _AFFECTED_STREAM])
    affected = np.sort(rng.permutation(n)[:k])
    depths = np.zeros(n)
    depths[affected] = config.depth
    return depths


def synthesize_event(config: SyntheticEventConfig, seed: int | None = None,
                     fill_value: float = DEFAULT_FILL_VALUE) -> EventArchive:
    """Generate a complete :class:`EventArchive` from ``config``.

    ``seed`` overrides ``config.seed``. Ocean pixels carry ``fill_value`` exactly
    as the real product does, so the archive must go through cleaning.
    """
    config.validate()
    seed = config.seed if seed is None else seed
    g = config.grid_size
    ids = county_ids(config.node_count)
    bboxes = county_bboxes(config.node_count)
    depths = county_depths(config, seed)
    days = np.arange(config.num_days)
    dates = [config.start_date + dt.timedelta(days=int(j)) for j in days]
    months = composite_months(dates[0], dates[-1])

    tiles: dict[tuple[str, dt.date], RasterTile] = {}
    composites = {}
    for i, cid in enumerate(ids):
        pattern, land = county_pattern(i, g, config.pattern_seed, config.ocean)
        georef = GeoRef.from_bounds(*bboxes[cid], height=g, width=g)
        curve = recovery_curve(days, config.landfall_day, depths[i], config.recovery_half_life_days)
        for j, d in enumerate(dates):
            noise = np.random.default_rng([seed, i, j]).standard_normal((g, g))
            rad = pattern * curve[j] * np.maximum(1.0 + config.noise_sigma * noise, 0.0)
            rad[~land] = fill_value
            tiles[(cid, d)] = RasterTile(cid, d, rad.astype(np.float32), georef)
        base = np.where(land, pattern, fill_value).astype(np.float32)
        composites[cid] = tuple(RasterTile(cid, m, base, georef) for m in months)

    meta = {
        "landfall": dates[config.landfall_day],
        "depths": {cid: float(d) for cid, d in zip(ids, depths)},
        "affected": [cid for cid, d in zip(ids, depths) if d > 0],
        "synthetic": True,
    }
    return EventArchive(config.event_id, tiles, (dates[0], dates[-1]), tuple(ids), frozenset(),
                        composites, bboxes, meta)


def synthesize_events(base: SyntheticEventConfig, names: Sequence[str],
                      landfall_days: Sequence[int] | None = None) -> list[EventArchive]:
    """Several events over the same counties, each with its own seed and landfall."""
    out = []
    for k, name in enumerate(names):
        cfg = dataclasses.replace(
            base, event_id=name, seed=base.seed + 1000 * (k + 1),
            landfall_day=base.landfall_day if landfall_days is None else landfall_days[k],
            start_date=base.start_date.replace(year=base.start_date.year + k),
        )
        out.append(synthesize_event(cfg))
    return out
