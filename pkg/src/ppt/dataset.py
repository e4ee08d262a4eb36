"""Dataset records: covariates, responses, integer group labels, and the
standardization / group-partition helpers shared by every other module.

All records are frozen dataclasses; nothing here mutates its inputs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class Dataset:
    """n observations of (covariate row, response, group label).

    x : (n, d) float array, y : (n,) float array, z : (n,) int array with
    values in 1..n_groups. label_map records the original -> contiguous
    relabeling applied at load time, or None when labels were already 1..H.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    n_groups: int
    label_map: tuple[tuple[int, int], ...] | None = None

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class GroupIndex:
    """Row indices per group. indices[h] holds the sorted 0-based rows of
    group h+1; sizes[h] = len(indices[h])."""

    indices: tuple[np.ndarray, ...]
    sizes: tuple[int, ...]


@dataclass(frozen=True)
class StandardizationState:
    """Column affine transforms applied by standardize(); inverse available
    through unstandardize()."""

    x_mean: np.ndarray
    x_sd: np.ndarray
    y_mean: float
    y_sd: float
    applied: bool = True


def make_dataset(
    x: np.ndarray,
    y: np.ndarray,
    z: np.ndarray,
    label_map: tuple[tuple[int, int], ...] | None = None,
) -> Dataset:
    """Validate arrays and assemble a Dataset.

    z must hold positive integers; labels are required to be contiguous
    1..H here (use relabel_groups first for arbitrary positive labels).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == 1 and np.asarray(y).size != 1:
        x = x.T
    y = np.asarray(y, dtype=float).ravel()
    z = np.asarray(z).ravel()
    n = y.shape[0]
    if x.shape[0] != n or z.shape[0] != n:
        raise ValueError(
            f"row counts disagree: x has {x.shape[0]}, y has {n}, z has {z.shape[0]}"
        )
    if n < 2:
        raise ValueError("need at least 2 observations")
    if not np.all(np.isfinite(x)):
        raise ValueError("x contains non-finite entries")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains non-finite entries")
    if not np.issubdtype(z.dtype, np.integer):
        zf = np.asarray(z, dtype=float)
        if not np.all(np.isfinite(zf)) or np.any(zf != np.round(zf)):
            raise ValueError("group labels must be integers")
        z = zf.astype(int)
    z = z.astype(int)
    if z.min() < 1:
        raise ValueError("group labels must be ≥ 1")
    h = int(z.max())
    present = np.unique(z)
    if present.shape[0] != h:
        missing = sorted(set(range(1, h + 1)) - set(present.tolist()))
        raise ValueError(
            f"group labels must be contiguous 1..{h}; missing {missing}"
        )
    for arr in (x, y, z):
        arr.setflags(write=False)
    return Dataset(x=x, y=y, z=z, n_groups=h, label_map=label_map)


def relabel_groups(z: np.ndarray) -> tuple[np.ndarray, tuple[tuple[int, int], ...] | None]:
    """Map arbitrary positive integer labels onto contiguous 1..H.

    Returns the relabeled vector and the (original, new) mapping, or None
    when the labels were already contiguous starting at 1.
    """
    z = np.asarray(z).astype(int).ravel()
    if z.size and z.min() < 1:
        raise ValueError("group labels must be ≥ 1")
    uniq = np.unique(z)
    if uniq.size and uniq[0] == 1 and uniq[-1] == uniq.size:
        return z, None
    lookup = {int(orig): new + 1 for new, orig in enumerate(uniq)}
    out = np.array([lookup[int(v)] for v in z], dtype=int)
    return out, tuple(sorted(lookup.items()))


def load_dataset(path: str, has_header: bool = True) -> Dataset:
    """Read a CSV of columns x1..xd, y, z into a Dataset.

    Any malformed cell is reported with its 1-based row number. Group labels
    may be arbitrary positive integers; they are relabeled to 1..H and the
    mapping is kept on the returned Dataset.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise ValueError(f"{path}: empty file")
    start = 0
    if has_header:
        start = 1
        if len(rows) < 2:
            raise ValueError(f"{path}: no data rows after header")
    width = len(rows[start])
    if width < 3:
        raise ValueError(
            f"{path}: need at least 3 columns (x1..xd, y, z), found {width}"
        )
    d = width - 2
    xs, ys, zs = [], [], []
    for i, row in enumerate(rows[start:], start=start + 1):
        if len(row) != width:
            raise ValueError(
                f"{path}: row {i} has {len(row)} fields, expected {width}"
            )
        try:
            vals = [float(cell) for cell in row[:-1]]
        except ValueError:
            bad = next(c for c in row[:-1] if not _is_float(c))
            raise ValueError(
                f"{path}: row {i}: non-numeric field {bad!r}"
            ) from None
        zcell = row[-1].strip()
        try:
            zval = int(zcell)
        except ValueError:
            raise ValueError(
                f"{path}: row {i}: group label {zcell!r} is not an integer"
            ) from None
        if zval < 1:
            raise ValueError("group labels must be ≥ 1")
        xs.append(vals[:d])
        ys.append(vals[d])
        zs.append(zval)
    z, mapping = relabel_groups(np.array(zs))
    return make_dataset(np.array(xs), np.array(ys), z, label_map=mapping)


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def group_index(ds: Dataset) -> GroupIndex:
    """Partition 0-based row indices by group label."""
    idx = tuple(
        np.flatnonzero(ds.z == h + 1) for h in range(ds.n_groups)
    )
    return GroupIndex(indices=idx, sizes=tuple(int(a.size) for a in idx))


def standardize(ds: Dataset) -> tuple[Dataset, StandardizationState]:
    """Rescale each covariate column and the response to sample mean 0,
    sample standard deviation 1 (ddof=1).

    Raises ValueError naming the first constant column encountered.
    """
    x_mean = ds.x.mean(axis=0)
    x_sd = ds.x.std(axis=0, ddof=1)
    for j, s in enumerate(x_sd):
        if s <= 0.0:
            raise ValueError(f"covariate column x{j + 1} is constant; cannot standardize")
    y_mean = float(ds.y.mean())
    y_sd = float(ds.y.std(ddof=1))
    if y_sd <= 0.0:
        raise ValueError("response column y is constant; cannot standardize")
    out = replace(
        ds,
        x=(ds.x - x_mean) / x_sd,
        y=(ds.y - y_mean) / y_sd,
    )
    out.x.setflags(write=False)
    out.y.setflags(write=False)
    state = StandardizationState(
        x_mean=x_mean, x_sd=x_sd, y_mean=y_mean, y_sd=y_sd, applied=True
    )
    return out, state


def unstandardize(ds: Dataset, state: StandardizationState) -> Dataset:
    """Invert standardize(); recovers the original columns within 1e-10."""
    if not state.applied:
        return ds
    out = replace(
        ds,
        x=ds.x * state.x_sd + state.x_mean,
        y=ds.y * state.y_sd + state.y_mean,
    )
    out.x.setflags(write=False)
    out.y.setflags(write=False)
    return out
