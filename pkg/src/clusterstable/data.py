"""Clustered data model and CSV ingestion.

A dataset is an ordered collection of clusters, each holding a regressor
matrix ``X`` (one row per observation) and a response vector ``Y``.
Observations may be arbitrarily dependent within a cluster and are treated
as independent across clusters by every estimator in this package.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyFile, MissingColumn, NonNumericCell, SingleCluster


@dataclass(frozen=True)
class Cluster:
    """One cluster: identifier, regressors ``X`` (n_g x dim) and response ``Y`` (n_g)."""

    id: str
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        Y = np.asarray(self.Y, dtype=np.float64).ravel()
        X.flags.writeable = False
        Y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.Y.shape[0]


@dataclass(frozen=True)
class ClusteredDataset:
    """Immutable collection of clusters sharing a common regressor dimension.

    Construction is permissive so that :func:`validate` can report invariant
    violations on programmatically built datasets; :func:`load_csv` raises on
    malformed input instead.
    """

    clusters: tuple[Cluster, ...]
    dim_theta: int

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))

    @classmethod
    def from_clusters(cls, clusters: Iterable[Cluster]) -> "ClusteredDataset":
        clusters = tuple(clusters)
        if not clusters:
            raise EmptyFile("cannot build a dataset from zero clusters")
        return cls(clusters=clusters, dim_theta=clusters[0].X.shape[1])

    @property
    def G(self) -> int:
        return len(self.clusters)

    @property
    def N(self) -> int:
        return sum(c.n for c in self.clusters)

    @property
    def cluster_ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.clusters)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([c.n for c in self.clusters], dtype=np.int64)


def _parse_cell(raw: str, row: int, column: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise NonNumericCell(row, column, raw) from None
    if not math.isfinite(value):
        raise NonNumericCell(row, column, raw)
    return value


def load_csv(
    path: str | Path,
    cluster_col: str,
    y_col: str,
    x_cols: Sequence[str],
    add_intercept: bool = False,
) -> ClusteredDataset:
    """Read a clustered regression dataset from a headered CSV file.

    Rows are grouped by the cluster-id column (read as a string); clusters are
    ordered by first appearance in the file and rows keep file order within a
    cluster. With ``add_intercept`` a column of ones is prepended to ``X``.
    """
    x_cols = list(x_cols)
    if not x_cols and not add_intercept:
        raise MissingColumn("<no regressor columns requested>")
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path}: file is empty") from None
        positions = {name: i for i, name in enumerate(header)}
        for name in [cluster_col, y_col, *x_cols]:
            if name not in positions:
                raise MissingColumn(name)
        cid_pos = positions[cluster_col]
        y_pos = positions[y_col]
        x_pos = [positions[name] for name in x_cols]

        groups: dict[str, list[list[float]]] = {}
        n_rows = 0
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise NonNumericCell(line_no, "<row>", f"{len(row)} fields, expected {len(header)}")
            n_rows += 1
            cid = row[cid_pos]
            y = _parse_cell(row[y_pos], line_no, y_col)
            xs = [_parse_cell(row[p], line_no, name) for p, name in zip(x_pos, x_cols)]
            groups.setdefault(cid, []).append([y, *xs])

    if n_rows == 0:
        raise EmptyFile(f"{path}: no data rows")
    if len(groups) < 2:
        raise SingleCluster(
            f"{path}: found a single cluster id; at least 2 clusters are required"
        )

    clusters = []
    for cid, rows in groups.items():
        block = np.asarray(rows, dtype=np.float64)
        X = block[:, 1:]
        if add_intercept:
            X = np.column_stack([np.ones(len(rows)), X])
        clusters.append(Cluster(id=cid, X=X, Y=block[:, 0]))
    return ClusteredDataset.from_clusters(clusters)


def to_csv(
    ds: ClusteredDataset,
    path: str | Path,
    cluster_col: str = "cluster",
    y_col: str = "y",
    x_cols: Sequence[str] | None = None,
) -> None:
    """Write the dataset back to CSV, round-trippable bit-exactly via repr floats."""
    if x_cols is None:
        x_cols = [f"x{j + 1}" for j in range(ds.dim_theta)]
    x_cols = list(x_cols)
    if len(x_cols) != ds.dim_theta:
        raise ValueError(f"expected {ds.dim_theta} x column names, got {len(x_cols)}")
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow([cluster_col, y_col, *x_cols])
        for cluster in ds.clusters:
            for i in range(cluster.n):
                writer.writerow(
                    [cluster.id, repr(float(cluster.Y[i]))]
                    + [repr(float(v)) for v in cluster.X[i]]
                )


def validate(ds: ClusteredDataset) -> list[str]:
    """Return every invariant violation as a human-readable string.

    An empty list means the dataset is valid. Ordering is deterministic:
    dataset-level checks first, then per-cluster checks in cluster order.
    """
    violations: list[str] = []
    if ds.G < 2:
        violations.append(f"dataset has {ds.G} cluster(s); at least 2 are required")
    seen: set[str] = set()
    for cluster in ds.clusters:
        if cluster.id in seen:
            violations.append(f"cluster id {cluster.id!r} is duplicated")
        seen.add(cluster.id)
    for cluster in ds.clusters:
        cid = cluster.id
        if cluster.n == 0:
            violations.append(f"cluster {cid!r} is empty")
        if cluster.X.shape[0] != cluster.Y.shape[0]:
            violations.append(
                f"cluster {cid!r}: X has {cluster.X.shape[0]} rows but Y has "
                f"{cluster.Y.shape[0]} entries"
            )
        if cluster.X.ndim != 2 or cluster.X.shape[1] != ds.dim_theta:
            violations.append(
                f"cluster {cid!r}: X has {cluster.X.shape[1]} columns, expected {ds.dim_theta}"
            )
        if not np.all(np.isfinite(cluster.X)):
            violations.append(f"cluster {cid!r}: X contains non-finite entries")
        if not np.all(np.isfinite(cluster.Y)):
            violations.append(f"cluster {cid!r}: Y contains non-finite entries")
    return violations
