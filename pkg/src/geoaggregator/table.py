"""Tabular point sets: covariates, 2D locations and an optional target."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class GeoTable:
    covariates: np.ndarray  # (N, m)
    locations: np.ndarray  # (N, 2)
    target: np.ndarray | None = None  # (N,)
    x_names: tuple[str, ...] = ()
    loc_names: tuple[str, str] = ("l1", "l2")
    y_name: str = "y"

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=np.float64)
        loc = np.asarray(self.locations, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if loc.ndim != 2 or loc.shape[1] != 2:
            raise ValueError(f"locations must be (N, 2), got {loc.shape}")
        if x.shape[0] != loc.shape[0]:
            raise ValueError(f"{x.shape[0]} covariate rows but {loc.shape[0]} locations")
        if not np.isfinite(loc).all():
            raise ValueError("non-finite coordinates")
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "locations", loc)
        if self.target is not None:
            y = np.asarray(self.target, dtype=np.float64).reshape(-1)
            if y.shape[0] != x.shape[0]:
                raise ValueError(f"target has {y.shape[0]} rows, expected {x.shape[0]}")
            object.__setattr__(self, "target", y)
        if not self.x_names:
            object.__setattr__(self, "x_names", tuple(f"x{i + 1}" for i in range(x.shape[1])))

    @property
    def n_points(self) -> int:
        return self.covariates.shape[0]

    @property
    def m(self) -> int:
        return self.covariates.shape[1]

    def __len__(self) -> int:
        return self.n_points

    def take(self, idx) -> "GeoTable":
        idx = np.asarray(idx)
        return GeoTable(
            self.covariates[idx],
            self.locations[idx],
            None if self.target is None else self.target[idx],
            self.x_names,
            self.loc_names,
            self.y_name,
        )


def load_csv(
    path,
    x_cols: Sequence[str],
    loc_cols: Sequence[str] = ("l1", "l2"),
    y_col: str | None = None,
) -> GeoTable:
    """Read a header-first CSV; rows keep file order."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if len(loc_cols) != 2:
            raise ValueError("exactly two location columns are required")
        wanted = list(x_cols) + list(loc_cols) + ([y_col] if y_col else [])
        missing = [c for c in wanted if c not in header]
        if missing:
            raise ValueError(f"{path}: missing column(s) {missing}")
        cols = [header.index(c) for c in wanted]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            vals = []
            for name, j in zip(wanted, cols):
                cell = row[j] if j < len(row) else ""
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ValueError(f"{path}: row {lineno}, column {name!r}: cannot parse {cell!r}") from None
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    arr = np.array(rows, dtype=np.float64)
    m = len(x_cols)
    y = arr[:, m + 2] if y_col else None
    if y is not None and not np.isfinite(y).all():
        raise ValueError(f"{path}: missing target values are not allowed")
    return GeoTable(arr[:, :m], arr[:, m : m + 2], y, tuple(x_cols), tuple(loc_cols), y_col or "y")


def save_csv(table: GeoTable, path) -> None:
    header = list(table.x_names) + list(table.loc_names)
    cols = [table.covariates, table.locations]
    if table.target is not None:
        header.append(table.y_name)
        cols.append(table.target[:, None])
    data = np.hstack(cols)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in data:
            w.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.7
    val: float = 0.1
    test: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be positive and sum to 1, got {fr}")


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if n < 10:
        raise ValueError(f"need at least 10 rows to split, got {n}")
    perm = np.random.default_rng(spec.seed).permutation(n)
    # small epsilon so e.g. 0.7 * 2500 floors to 1750, not 1749
    n_train = int(np.floor(spec.train * n + 1e-9))
    n_val = int(np.floor(spec.val * n + 1e-9))
    return perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]


def split(table: GeoTable, spec: SplitSpec = SplitSpec()) -> tuple[GeoTable, GeoTable, GeoTable]:
    tr, va, te = split_indices(table.n_points, spec)
    return table.take(tr), table.take(va), table.take(te)


def target_stats(table: GeoTable) -> tuple[float, float]:
    """Mean and unbiased standard deviation of the target."""
    if table.target is None:
        raise ValueError("table has no target")
    if table.n_points < 2:
        raise ValueError("need at least 2 rows")
    y = table.target
    mean = float(y.mean())
    std = float(y.std(ddof=1))
    if std == 0.0:
        raise ValueError("target is constant; standard deviation is zero")
    return mean, std
