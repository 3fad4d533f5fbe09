"""Static county adjacency and transition matrices for diffusion convolution."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Mapping, Sequence

import numpy as np
from shapely.geometry import Point, shape
from shapely.geometry.base import BaseGeometry

from vstgnn.errors import ValidationError

Kind = Literal["static", "adaptive-snapshot"]


@dataclass(frozen=True, eq=False)
class AdjacencyMatrix:
    weights: np.ndarray
    node_order: tuple[str, ...]
    kind: Kind = "static"

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValidationError(f"adjacency must be square, got shape {w.shape}")
        if w.shape[0] != len(self.node_order):
            raise ValidationError(f"{w.shape[0]} rows but {len(self.node_order)} node ids")
        if not np.all(np.isfinite(w)):
            raise ValidationError("adjacency has non-finite entries")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "node_order", tuple(self.node_order))

    @property
    def n(self) -> int:
        return len(self.node_order)


def _as_geometry(g) -> BaseGeometry:
    if isinstance(g, BaseGeometry):
        return g
    if isinstance(g, Mapping):
        return shape(g)
    return Point(*g)


def build_static_adjacency(geometries: Mapping[str, object], rule: str = "border",
                           k: int = 1) -> AdjacencyMatrix:
    """Binary symmetric adjacency over counties sorted by id.

    ``border``: 1 iff two polygons share a boundary segment of positive length
    (corner-only contact does not count). ``knn``: each node links to its ``k``
    nearest centroids, then ``A = max(A, A.T)``.
    """
    ids = sorted(geometries)
    n = len(ids)
    if n < 2:
        raise ValidationError(f"need at least 2 nodes, got {n}")
    geoms = [_as_geometry(geometries[i]) for i in ids]
    if any(g.is_empty or not g.is_valid for g in geoms):
        raise ValidationError("invalid or empty geometry")
    A = np.zeros((n, n))
    if rule == "border":
        for i in range(n):
            for j in range(i + 1, n):
                if geoms[i].intersects(geoms[j]) and geoms[i].boundary.intersection(geoms[j].boundary).length > 0:
                    A[i, j] = A[j, i] = 1.0
    elif rule == "knn":
        if not 1 <= k < n:
            raise ValidationError(f"k must satisfy 1 <= k < |V|={n}, got {k}")
        xy = np.array([[g.centroid.x, g.centroid.y] for g in geoms])
        dist = np.linalg.norm(xy[:, None, :] - xy[None, :, :], axis=-1)
        np.fill_diagonal(dist, np.inf)
        nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
        A[np.repeat(np.arange(n), k), nearest.ravel()] = 1.0
        A = np.maximum(A, A.T)
    else:
        raise ValidationError(f"unknown adjacency rule {rule!r}")
    np.fill_diagonal(A, 0.0)
    return AdjacencyMatrix(A, tuple(ids), "static")


def normalize_adjacency(adj: AdjacencyMatrix, transpose: bool = False) -> AdjacencyMatrix:
    """Row-stochastic transition matrix ``D^-1 A`` (or ``D^-1 A^T``).

    Zero-degree rows stay zero.
    """
    w = adj.weights.T if transpose else adj.weights
    if np.any(w < 0):
        raise ValidationError("adjacency has negative entries")
    deg = w.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(deg > 0, w / deg, 0.0)
    return AdjacencyMatrix(p, adj.node_order, adj.kind)


def transition_supports(adj: AdjacencyMatrix) -> list[np.ndarray]:
    """Forward and backward transition matrices (identical for symmetric graphs)."""
    return [normalize_adjacency(adj).weights, normalize_adjacency(adj, transpose=True).weights]


def load_geometries(path: Path) -> dict[str, BaseGeometry]:
    """Read a GeoJSON FeatureCollection keyed by each feature's ``county_id``."""
    data = json.loads(Path(path).read_text())
    out = {}
    for feat in data.get("features", []):
        cid = feat.get("properties", {}).get("county_id")
        if cid is None:
            raise ValidationError("GeoJSON feature without a county_id property")
        out[str(cid)] = shape(feat["geometry"])
    return out


def write_edge_list(adj: AdjacencyMatrix, path: Path) -> None:
    """CSV with ``src,dst,weight`` rows for every nonzero entry."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "weight"])
        for i, j in zip(*np.nonzero(adj.weights)):
            w.writerow([adj.node_order[i], adj.node_order[j], repr(float(adj.weights[i, j]))])


def read_edge_list(path: Path, node_order: Sequence[str]) -> AdjacencyMatrix:
    index = {c: i for i, c in enumerate(node_order)}
    A = np.zeros((len(index), len(index)))
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            A[index[row["src"]], index[row["dst"]]] = float(row["weight"])
    return AdjacencyMatrix(A, tuple(node_order), "static")


def write_matrix_csv(adj: AdjacencyMatrix, path: Path) -> None:
    """Dense matrix export with a ``node_order`` header row and a leading id column."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_order", *adj.node_order])
        for cid, row in zip(adj.node_order, adj.weights):
            w.writerow([cid, *(repr(float(v)) for v in row)])
