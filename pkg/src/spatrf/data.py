"""Dataset container and CSV ingestion.

Coordinates are treated as planar; callers must pre-project geographic data.
Responses are modeled as given (any transform, e.g. square roots of annual
averages, is the caller's preprocessing).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass
class LocatedDataset:
    """Spatially indexed regression data: ids, coordinates, covariates and
    (for training data) the observed response."""

    ids: list[str]
    coords: np.ndarray                 # (n, d)
    X: np.ndarray                      # (n, p)
    Z: np.ndarray | None = None        # (n,) observed response; None for prediction data
    covariate_names: list[str] = field(default_factory=list)
    coord_names: list[str] = field(default_factory=list)
    response_name: str | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        if self.coords.ndim != 2:
            raise ValueError("coords must be an (n, d) array")
        if self.X.ndim != 2:
            raise ValueError("X must be an (n, p) array")
        n = self.coords.shape[0]
        if self.X.shape[0] != n or len(self.ids) != n:
            raise ValueError("ids, coords and X must agree on n")
        if n < 1:
            raise ValueError("dataset must contain at least one row")
        if self.Z is not None:
            self.Z = np.asarray(self.Z, dtype=float)
            if self.Z.shape != (n,):
                raise ValueError("Z must be an (n,) vector")
            if not np.all(np.isfinite(self.Z)):
                raise ValueError("response contains non-finite values")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("coordinates contain non-finite values")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("covariates contain non-finite values")
        if not self.covariate_names:
            self.covariate_names = [f"x{j}" for j in range(self.X.shape[1])]

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "LocatedDataset":
        idx = np.asarray(idx, dtype=np.intp)
        return LocatedDataset(
            ids=[self.ids[i] for i in idx],
            coords=self.coords[idx],
            X=self.X[idx],
            Z=None if self.Z is None else self.Z[idx],
            covariate_names=list(self.covariate_names),
            coord_names=list(self.coord_names),
            response_name=self.response_name,
        )


def _parse_cell(raw: str, row: int, column: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ValueError(
            f"non-numeric value {raw!r} at row {row}, column {column!r}"
        ) from None


def load_csv(path, coord_cols, response_col: str | None = None,
             id_col: str | None = None) -> LocatedDataset:
    """Read a headered CSV into a LocatedDataset.

    ``coord_cols`` name the coordinate columns; ``response_col`` (optional)
    names the response. The id column defaults to one literally named "id"
    when present, else row numbers. Every remaining column becomes a
    covariate and must be numeric; offending cells are reported with their
    row and column.
    """
    coord_cols = list(coord_cols)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [r for r in reader if r]
    if not rows:
        raise ValueError(f"empty file: {path}")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise ValueError(f"no data rows in {path}")

    def col_index(name: str) -> int:
        if name not in header:
            raise ValueError(f"missing column {name!r} in {path}")
        return header.index(name)

    coord_idx = [col_index(c) for c in coord_cols]
    resp_idx = col_index(response_col) if response_col is not None else None
    if id_col is None and "id" in header:
        id_col = "id"
    id_idx = col_index(id_col) if id_col is not None else None

    reserved = set(coord_idx) | ({resp_idx} if resp_idx is not None else set()) \
        | ({id_idx} if id_idx is not None else set())
    cov_idx = [j for j in range(len(header)) if j not in reserved]

    n = len(body)
    coords = np.empty((n, len(coord_idx)))
    X = np.empty((n, len(cov_idx)))
    Z = np.empty(n) if resp_idx is not None else None
    ids = []
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise ValueError(f"row {i + 1} has {len(row)} fields, expected {len(header)}")
        for a, j in enumerate(coord_idx):
            coords[i, a] = _parse_cell(row[j], i + 1, header[j])
        for a, j in enumerate(cov_idx):
            X[i, a] = _parse_cell(row[j], i + 1, header[j])
        if resp_idx is not None:
            Z[i] = _parse_cell(row[resp_idx], i + 1, header[resp_idx])
        ids.append(row[id_idx] if id_idx is not None else str(i))

    return LocatedDataset(
        ids=ids, coords=coords, X=X, Z=Z,
        covariate_names=[header[j] for j in cov_idx],
        coord_names=coord_cols,
        response_name=response_col,
    )


def dataset_to_csv(data: LocatedDataset, path) -> None:
    """Write a dataset back out with 17-significant-digit floats, so a
    read-back reproduces the values exactly."""
    coord_names = data.coord_names or [f"c{a}" for a in range(data.coords.shape[1])]
    header = ["id", *coord_names]
    if data.Z is not None:
        header.append(data.response_name or "z")
    header.extend(data.covariate_names)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            row = [data.ids[i]]
            row.extend(f"{v:.17g}" for v in data.coords[i])
            if data.Z is not None:
                row.append(f"{data.Z[i]:.17g}")
            row.extend(f"{v:.17g}" for v in data.X[i])
            writer.writerow(row)


def write_predictions(path, ids, values) -> None:
    """Emit an (id, prediction) CSV aligned with the input row order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "prediction"])
        for i, v in zip(ids, values):
            writer.writerow([i, f"{v:.17g}"])
