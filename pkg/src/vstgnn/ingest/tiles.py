"""Single-county radiance tiles and per-tile cleaning/resizing."""

from __future__ import annotations

import dataclasses
import datetime as dt
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from affine import Affine

from vstgnn.errors import ValidationError

DEFAULT_CRS = "EPSG:4326"


@dataclass(frozen=True)
class GeoRef:
    """Affine pixel-to-world transform plus CRS identifier."""

    transform: Affine = Affine.identity()
    crs: str = DEFAULT_CRS

    @classmethod
    def from_bounds(cls, west: float, south: float, east: float, north: float,
                    height: int, width: int, crs: str = DEFAULT_CRS) -> "GeoRef":
        xres = (east - west) / width
        yres = (north - south) / height
        return cls(Affine(xres, 0.0, west, 0.0, -yres, north), crs)

    def rescaled(self, old_hw: tuple[int, int], new_hw: tuple[int, int]) -> "GeoRef":
        """Georef for the same footprint sampled on a ``new_hw`` grid."""
        sy = old_hw[0] / new_hw[0]
        sx = old_hw[1] / new_hw[1]
        return GeoRef(self.transform @ Affine.scale(sx, sy), self.crs)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RasterTile:
    """One county, one day, one band of radiance in nW/cm^2/sr."""

    county_id: str
    date: dt.date
    radiance: np.ndarray
    georef: GeoRef = field(default_factory=GeoRef)
    quality_mask: np.ndarray | None = None

    def __post_init__(self):
        rad = np.asarray(self.radiance)
        if rad.ndim != 2:
            raise ValidationError(f"radiance must be 2-D, got shape {rad.shape}")
        if not np.issubdtype(rad.dtype, np.floating):
            rad = rad.astype(np.float32)
        object.__setattr__(self, "radiance", _frozen(rad))
        if self.quality_mask is not None:
            mask = np.asarray(self.quality_mask, dtype=bool)
            if mask.shape != rad.shape:
                raise ValidationError(
                    f"quality_mask shape {mask.shape} != radiance shape {rad.shape}")
            object.__setattr__(self, "quality_mask", _frozen(mask))

    @property
    def shape(self) -> tuple[int, int]:
        return self.radiance.shape

    def replace(self, **changes) -> "RasterTile":
        return dataclasses.replace(self, **changes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RasterTile):
            return NotImplemented
        masks_equal = (
            (self.quality_mask is None and other.quality_mask is None)
            or (self.quality_mask is not None and other.quality_mask is not None
                and np.array_equal(self.quality_mask, other.quality_mask))
        )
        return (
            self.county_id == other.county_id
            and self.date == other.date
            and self.georef == other.georef
            and self.radiance.dtype == other.radiance.dtype
            and np.array_equal(self.radiance, other.radiance)
            and masks_equal
        )

    __hash__ = None


def clean_tile(tile: RasterTile, fill_value: float | None) -> RasterTile:
    """Zero out fill-value sentinels and non-finite pixels.

    Negative radiance is physically meaningless and is clamped to zero as well,
    so the result is always finite and non-negative. Idempotent.
    """
    rad = np.array(tile.radiance, copy=True)
    bad = ~np.isfinite(rad)
    if fill_value is not None and np.isfinite(fill_value):
        bad |= rad == rad.dtype.type(fill_value)
    rad[bad] = 0
    np.maximum(rad, 0, out=rad)
    return tile.replace(radiance=rad)


def resize_tile(tile: RasterTile, height: int, width: int) -> RasterTile:
    """Bilinearly resample a tile onto a ``height x width`` grid.

    Uses half-pixel-centre sampling (``align_corners=False``), so a 2x2 grid
    ``[[0, 0], [4, 4]]`` becomes rows ``0, 1, 3, 4`` at 4x4. The footprint is
    unchanged; only the pixel size in the georef transform is rescaled.
    """
    if height < 1 or width < 1:
        raise ValidationError(f"target size must be positive, got {height}x{width}")
    old_hw = tile.shape
    if old_hw == (height, width):
        return tile
    src = torch.from_numpy(np.asarray(tile.radiance, dtype=np.float64).copy())
    out = F.interpolate(src[None, None], size=(height, width), mode="bilinear",
                        align_corners=False)[0, 0].numpy()
    out = np.maximum(out, 0.0).astype(tile.radiance.dtype)
    mask = None
    if tile.quality_mask is not None:
        m = torch.from_numpy(tile.quality_mask.astype(np.float32))
        mask = F.interpolate(m[None, None], size=(height, width), mode="nearest")[0, 0].numpy() > 0.5
    return tile.replace(radiance=out, quality_mask=mask,
                        georef=tile.georef.rescaled(old_hw, (height, width)))
