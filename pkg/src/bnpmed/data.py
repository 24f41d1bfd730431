"""Hierarchical CRT data, leave-one-out summaries and design vectors.

A dataset is a list of clusters; each cluster carries its treatment, cluster
covariates and a list of units. For the samplers the ragged structure is
flattened once into contiguous arrays (:class:`FlatData`), which is what the
numeric kernels consume.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Base class for data problems (exit code 3 in the CLI)."""


class SchemaError(DataError):
    pass


class ValidationError(DataError):
    pass


class ParseError(DataError):
    pass


class DegenerateClusterError(ValidationError):
    pass


@dataclass(frozen=True)
class UnitRecord:
    unit_index: int
    x: np.ndarray
    m1: float
    m2: float
    y: float


@dataclass(frozen=True)
class ClusterRecord:
    cluster_id: str
    a: int
    v: np.ndarray
    units: tuple

    @property
    def n(self) -> int:
        return len(self.units)

    @cached_property
    def x(self) -> np.ndarray:
        return np.array([u.x for u in self.units], dtype=float).reshape(self.n, -1)

    @cached_property
    def m1(self) -> np.ndarray:
        return np.array([u.m1 for u in self.units], dtype=float)

    @cached_property
    def m2(self) -> np.ndarray:
        return np.array([u.m2 for u in self.units], dtype=float)

    @cached_property
    def y(self) -> np.ndarray:
        return np.array([u.y for u in self.units], dtype=float)


@dataclass(frozen=True)
class ClusterDataset:
    clusters: tuple
    d_x: int
    d_v: int
    mediator1_binary: bool = False

    def __post_init__(self):
        validate_dataset(self)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def n_units(self) -> int:
        return sum(c.n for c in self.clusters)

    @cached_property
    def flat(self) -> "FlatData":
        return FlatData.from_dataset(self)


def validate_dataset(ds: ClusterDataset) -> None:
    if len(ds.clusters) == 0:
        raise ValidationError("dataset has no clusters")
    for c in ds.clusters:
        if c.n < 2:
            raise DegenerateClusterError(
                f"cluster {c.cluster_id!r} has {c.n} unit(s); at least 2 are required")
        if c.a not in (0, 1):
            raise ValidationError(f"cluster {c.cluster_id!r}: treatment must be 0/1, got {c.a}")
        if np.shape(c.v) != (ds.d_v,):
            raise ValidationError(f"cluster {c.cluster_id!r}: expected {ds.d_v} cluster covariates")
        for u in c.units:
            if np.shape(u.x) != (ds.d_x,):
                raise ValidationError(
                    f"cluster {c.cluster_id!r} unit {u.unit_index}: expected {ds.d_x} covariates")
            if ds.mediator1_binary and u.m1 not in (0.0, 1.0):
                raise ValidationError(
                    f"cluster {c.cluster_id!r} unit {u.unit_index}: binary m1 must be 0/1, got {u.m1}")


def make_dataset(a, v, x, m1, m2, y, sizes, d_x=None, d_v=None, mediator1_binary=False,
                 cluster_ids=None) -> ClusterDataset:
    """Build a dataset from flat unit-level arrays and cluster sizes."""
    sizes = np.asarray(sizes, dtype=int)
    a = np.asarray(a, dtype=int)
    v = np.asarray(v, dtype=float).reshape(len(sizes), -1)
    x = np.asarray(x, dtype=float).reshape(int(sizes.sum()), -1)
    m1, m2, y = (np.asarray(arr, dtype=float) for arr in (m1, m2, y))
    if cluster_ids is None:
        cluster_ids = [f"c{i + 1}" for i in range(len(sizes))]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    clusters = []
    for i, n in enumerate(sizes):
        lo = offsets[i]
        units = tuple(UnitRecord(j, x[lo + j].copy(), float(m1[lo + j]), float(m2[lo + j]),
                                 float(y[lo + j])) for j in range(n))
        clusters.append(ClusterRecord(str(cluster_ids[i]), int(a[i]), v[i].copy(), units))
    return ClusterDataset(tuple(clusters), x.shape[1] if d_x is None else d_x,
                          v.shape[1] if d_v is None else d_v, mediator1_binary)


def loo_summary(values, j: int) -> tuple[float, float]:
    """Own value and mean of the other entries of ``values``.

    >>> loo_summary([1.0, 2.0, 3.0], 0)
    (1.0, 2.5)
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if n < 2:
        raise DegenerateClusterError("leave-one-out mean needs at least two values")
    if not 0 <= j < n:
        raise IndexError(f"unit index {j} out of range for cluster of size {n}")
    own = float(values[j])
    return own, float((values.sum() - own) / (n - 1))


def loo_means(values: np.ndarray, starts: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """Vectorised leave-one-out means over contiguous clusters.

    ``values`` may be 1-d (units) or 2-d (units x features); the trailing axes
    are carried through.
    """
    values = np.asarray(values, dtype=float)
    sums = np.add.reduceat(values, starts, axis=0)
    sizes_u = np.repeat(sizes, sizes)
    sums_u = np.repeat(sums, sizes, axis=0)
    if values.ndim > 1:
        sizes_u = sizes_u.reshape(-1, *([1] * (values.ndim - 1)))
    return (sums_u - values) / (sizes_u - 1)


def mediator_design_length(d_x: int, d_v: int) -> int:
    return 1 + 1 + 2 * d_x + d_v + 1


def outcome_design_length(d_x: int, d_v: int) -> int:
    return mediator_design_length(d_x, d_v) + 4


def build_mediator_design(cluster: ClusterRecord, j: int, a_override: int | None = None) -> np.ndarray:
    if not 0 <= j < cluster.n:
        raise IndexError(f"unit index {j} out of range for cluster of size {cluster.n}")
    a = cluster.a if a_override is None else a_override
    x = cluster.x
    loo_x = (x.sum(axis=0) - x[j]) / (cluster.n - 1)
    return np.concatenate([[1.0, float(a)], x[j], loo_x, np.asarray(cluster.v, float), [float(cluster.n)]])


def build_outcome_design(cluster: ClusterRecord, j: int, a: int, m1, m2) -> np.ndarray:
    m1 = np.asarray(m1, dtype=float)
    m2 = np.asarray(m2, dtype=float)
    if m1.shape != (cluster.n,) or m2.shape != (cluster.n,):
        raise ValueError(
            f"mediator vectors must have length {cluster.n}, got {m1.shape} and {m2.shape}")
    own1, loo1 = loo_summary(m1, j)
    own2, loo2 = loo_summary(m2, j)
    base = build_mediator_design(cluster, j, a)
    return np.concatenate([base[:2], [own1, loo1, own2, loo2], base[2:]])


@dataclass
class FlatData:
    """Contiguous unit-level arrays for a dataset.

    Units are stored cluster by cluster; ``cluster_of[u]`` maps a unit to its
    cluster and ``starts``/``sizes`` delimit each cluster's block.
    """

    sizes: np.ndarray
    starts: np.ndarray
    cluster_of: np.ndarray
    a: np.ndarray  # per cluster
    v: np.ndarray  # per cluster, (I, d_v)
    x: np.ndarray  # (N, d_x)
    loo_x: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    y: np.ndarray
    mediator1_binary: bool = False
    _cm_static: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_dataset(cls, ds: ClusterDataset) -> "FlatData":
        sizes = np.array([c.n for c in ds.clusters], dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        x = np.concatenate([c.x for c in ds.clusters], axis=0).reshape(-1, ds.d_x)
        return cls(
            sizes=sizes,
            starts=starts,
            cluster_of=np.repeat(np.arange(len(sizes)), sizes),
            a=np.array([c.a for c in ds.clusters], dtype=np.int64),
            v=np.array([c.v for c in ds.clusters], dtype=float).reshape(len(sizes), ds.d_v),
            x=x,
            loo_x=loo_means(x, starts, sizes),
            m1=np.concatenate([c.m1 for c in ds.clusters]),
            m2=np.concatenate([c.m2 for c in ds.clusters]),
            y=np.concatenate([c.y for c in ds.clusters]),
            mediator1_binary=ds.mediator1_binary,
        )

    @property
    def n_units(self) -> int:
        return int(self.sizes.sum())

    @property
    def n_clusters(self) -> int:
        return len(self.sizes)

    def mediator_design(self, a: int | np.ndarray | None = None) -> np.ndarray:
        """Mediator design matrix (N x d_m); ``a`` overrides the treatment column."""
        if self._cm_static is None:
            n_u = np.repeat(self.sizes, self.sizes).astype(float)
            v_u = self.v[self.cluster_of]
            self._cm_static = np.column_stack(
                [np.ones(self.n_units), self.a[self.cluster_of].astype(float), self.x, self.loo_x,
                 v_u, n_u])
        if a is None:
            return self._cm_static
        cm = self._cm_static.copy()
        cm[:, 1] = a if np.ndim(a) == 0 else np.asarray(a, float)[self.cluster_of]
        return cm

    def outcome_design(self, m1: np.ndarray, m2: np.ndarray, a=None,
                       loo_m1: np.ndarray | None = None, loo_m2: np.ndarray | None = None) -> np.ndarray:
        """Outcome design matrix (N x d_y) built from (possibly counterfactual) mediators."""
        cm = self.mediator_design(a)
        if loo_m1 is None:
            loo_m1 = loo_means(m1, self.starts, self.sizes)
        if loo_m2 is None:
            loo_m2 = loo_means(m2, self.starts, self.sizes)
        return np.column_stack([cm[:, :2], m1, loo_m1, m2, loo_m2, cm[:, 2:]])


DEFAULT_SCHEMA = {"cluster": "cluster", "a": "a", "m1": "m1", "m2": "m2", "y": "y"}


def _column_names(d_x: int, d_v: int) -> list[str]:
    return (["cluster", "a"] + [f"v{k + 1}" for k in range(d_v)]
            + [f"x{k + 1}" for k in range(d_x)] + ["m1", "m2", "y"])


def write_dataset(ds: ClusterDataset, path: str | os.PathLike, delimiter: str = ",") -> None:
    """Write one row per unit; floats use ``repr`` so a reload is bit-exact."""
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(_column_names(ds.d_x, ds.d_v))
        for c in ds.clusters:
            v = [repr(float(t)) for t in c.v]
            for u in c.units:
                w.writerow([c.cluster_id, c.a, *v, *(repr(float(t)) for t in u.x),
                            repr(float(u.m1)), repr(float(u.m2)), repr(float(u.y))])
    os.replace(tmp, path)


def load_dataset(path: str | os.PathLike, schema: dict | None = None,
                 mediator1_binary: bool = False, delimiter: str = ",") -> ClusterDataset:
    """Read a delimiter-separated unit-level file into a :class:`ClusterDataset`.

    Columns are located by header name. ``schema`` maps the logical names
    ``cluster``, ``a``, ``m1``, ``m2``, ``y`` to header names and may list
    covariate columns under ``v`` and ``x``; by default covariates are the
    headers ``v1, v2, ...`` and ``x1, x2, ...``.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = list(reader)

    def cols(prefix):
        names = schema.get(prefix)
        if names is None:
            names = sorted((h for h in header if h.startswith(prefix) and h[len(prefix):].isdigit()),
                           key=lambda h: int(h[len(prefix):]))
        return list(names)

    v_cols, x_cols = cols("v"), cols("x")
    index = {h: k for k, h in enumerate(header)}
    for name in [schema[k] for k in ("cluster", "a", "m1", "m2", "y")] + v_cols + x_cols:
        if name not in index:
            raise SchemaError(f"{path}: missing column {name!r}")

    def num(row, name, lineno):
        text = row[index[name]].strip()
        try:
            return float(text)
        except ValueError:
            raise ParseError(f"{path}: row {lineno}: column {name!r} is not numeric: {text!r}") from None

    groups: dict[str, dict] = {}
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not t.strip() for t in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"{path}: row {lineno}: expected {len(header)} fields, got {len(row)}")
        cid = row[index[schema["cluster"]]].strip()
        a = num(row, schema["a"], lineno)
        v = tuple(num(row, c, lineno) for c in v_cols)
        g = groups.get(cid)
        if g is None:
            g = groups[cid] = {"a": a, "v": v, "units": []}
        elif g["a"] != a or g["v"] != v:
            raise SchemaError(f"{path}: row {lineno}: cluster {cid!r} has inconsistent treatment "
                              "or cluster covariates")
        if a not in (0.0, 1.0):
            raise SchemaError(f"{path}: row {lineno}: treatment must be 0 or 1")
        g["units"].append((np.array([num(row, c, lineno) for c in x_cols]),
                           num(row, schema["m1"], lineno), num(row, schema["m2"], lineno),
                           num(row, schema["y"], lineno)))

    clusters = []
    for cid, g in groups.items():
        units = tuple(UnitRecord(j, x, m1, m2, y) for j, (x, m1, m2, y) in enumerate(g["units"]))
        clusters.append(ClusterRecord(cid, int(g["a"]), np.array(g["v"], dtype=float), units))
    return ClusterDataset(tuple(clusters), len(x_cols), len(v_cols), mediator1_binary)


def subset_clusters(ds: ClusterDataset, idx: Sequence[int]) -> ClusterDataset:
    return ClusterDataset(tuple(ds.clusters[i] for i in idx), ds.d_x, ds.d_v, ds.mediator1_binary)
