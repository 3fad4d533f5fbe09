"""Sliding S-in / T-out graph-signal windows over an event archive."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from vstgnn.errors import ValidationError
from vstgnn.ingest.archive import EventArchive, fill_gaps


@dataclass(frozen=True, eq=False)
class GraphSignalWindow:
    """One sample: ``inputs`` is (V, S, 1, H, W), ``targets`` is (V, T, 1, H, W).

    ``input_steps``/``target_steps`` are integer day offsets from the event's
    first date; they are the time coordinate fed to the time embedding.
    """

    inputs: np.ndarray
    targets: np.ndarray
    input_dates: tuple[dt.date, ...]
    target_dates: tuple[dt.date, ...]
    event_id: str
    node_order: tuple[str, ...]
    input_steps: tuple[int, ...]
    target_steps: tuple[int, ...]

    @property
    def S(self) -> int:
        return len(self.input_dates)

    @property
    def T(self) -> int:
        return len(self.target_dates)


def num_windows(num_dates: int, S: int, T: int) -> int:
    return num_dates - S - T + 1


def build_windows(archive: EventArchive, S: int, T: int) -> list[GraphSignalWindow]:
    """Cut every chronological (S past, T future) window out of ``archive``.

    Gaps are filled first (see :func:`fill_gaps`). All tiles must already share
    one grid shape, i.e. the archive has been through ``prepare_archive``.
    """
    if S < 1 or T < 1:
        raise ValidationError(f"S and T must be >= 1, got S={S}, T={T}")
    n = archive.num_dates
    if S + T > n:
        raise ValidationError(f"need at least S+T={S + T} dates, archive has {n}")
    archive = fill_gaps(archive)
    dates = archive.dates
    nodes = archive.county_ids
    shapes = {t.shape for t in archive.tiles.values()}
    if len(shapes) != 1:
        raise ValidationError(f"tiles have mixed shapes {sorted(shapes)}; resize first")
    # (V, D, 1, H, W) cube, sliced into windows as copies
    cube = np.stack([
        np.stack([archive.tile(c, d).radiance for d in dates]) for c in nodes
    ]).astype(np.float32)[:, :, None]
    windows = []
    for i in range(num_windows(n, S, T)):
        windows.append(GraphSignalWindow(
            inputs=cube[:, i:i + S].copy(),
            targets=cube[:, i + S:i + S + T].copy(),
            input_dates=tuple(dates[i:i + S]),
            target_dates=tuple(dates[i + S:i + S + T]),
            event_id=archive.event_id,
            node_order=nodes,
            input_steps=tuple(range(i, i + S)),
            target_steps=tuple(range(i + S, i + S + T)),
        ))
    return windows
