from vstgnn.ingest.archive import (
    DAILY_PRODUCT,
    DEFAULT_FILL_VALUE,
    MONTHLY_PRODUCT,
    BlackMarbleBackend,
    DirectoryBackend,
    EventArchive,
    fetch_event,
    fill_gaps,
    load_archive,
    prepare_archive,
    preceding_months,
    write_archive,
)
from vstgnn.ingest.synthetic import SyntheticEventConfig, synthesize_event, synthesize_events
from vstgnn.ingest.tiles import GeoRef, RasterTile, clean_tile, resize_tile
from vstgnn.ingest.windows import GraphSignalWindow, build_windows, num_windows

__all__ = [
    "DAILY_PRODUCT", "DEFAULT_FILL_VALUE", "MONTHLY_PRODUCT", "BlackMarbleBackend",
    "DirectoryBackend", "EventArchive", "GeoRef", "GraphSignalWindow", "RasterTile",
    "SyntheticEventConfig", "build_windows", "clean_tile", "fetch_event", "fill_gaps",
    "load_archive", "num_windows", "preceding_months", "prepare_archive", "resize_tile",
    "synthesize_event", "synthesize_events", "write_archive",
]
