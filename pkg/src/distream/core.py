"""Mergeable summary values: points, cluster features and micro-clusters.

Every type here is an immutable value. Vectors are stored as tuples of
Python floats so that equality is exact and instances can be shared freely
between threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, PreconditionError

Vector = tuple[float, ...]

# relative slack allowed on the Cauchy-Schwarz bound ss >= ls^2 / n
CS_RTOL = 1e-9


def _vec(values: Iterable[float]) -> Vector:
    return tuple(float(v) for v in values)


def _all_finite(values: Iterable[float]) -> bool:
    return all(math.isfinite(v) for v in values)


def _check_cs(sq: float, lin: float, n: int) -> bool:
    bound = lin * lin / n
    return sq >= bound - CS_RTOL * max(abs(sq), bound)


@dataclass(frozen=True)
class Point:
    coords: Vector
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "coords", _vec(self.coords))
        object.__setattr__(self, "timestamp", float(self.timestamp))
        if len(self.coords) < 1:
            raise DimensionError("a point needs at least one coordinate")
        if not _all_finite(self.coords):
            raise PreconditionError(f"non-finite coordinate in {self.coords}")
        if not math.isfinite(self.timestamp) or self.timestamp < 0:
            raise PreconditionError(f"bad timestamp {self.timestamp}")

    @property
    def dim(self) -> int:
        return len(self.coords)


@dataclass(frozen=True)
class ClusterFeature:
    """BIRCH (N, LS, SS) triple."""

    n: int
    ls: Vector
    ss: Vector

    def __post_init__(self):
        object.__setattr__(self, "ls", _vec(self.ls))
        object.__setattr__(self, "ss", _vec(self.ss))
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 0:
            raise PreconditionError(f"count must be a non-negative integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        if len(self.ls) != len(self.ss) or len(self.ls) < 1:
            raise DimensionError("ls and ss must have the same positive length")
        if not (_all_finite(self.ls) and _all_finite(self.ss)):
            raise PreconditionError("non-finite sums")
        if self.n == 0:
            if any(self.ls) or any(self.ss):
                raise PreconditionError("empty cluster feature must have zero sums")
        elif not all(_check_cs(s, l, self.n) for l, s in zip(self.ls, self.ss)):
            raise PreconditionError("squared sum below ls^2/n")

    @property
    def dim(self) -> int:
        return len(self.ls)

    @classmethod
    def zero(cls, dim: int) -> "ClusterFeature":
        return cls(0, (0.0,) * dim, (0.0,) * dim)


@dataclass(frozen=True)
class MicroCluster:
    """Temporal cluster feature: the (2d+3)-tuple plus an engine-assigned id."""

    cf2x: Vector
    cf1x: Vector
    cf2t: float
    cf1t: float
    n: int
    id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cf2x", _vec(self.cf2x))
        object.__setattr__(self, "cf1x", _vec(self.cf1x))
        object.__setattr__(self, "cf2t", float(self.cf2t))
        object.__setattr__(self, "cf1t", float(self.cf1t))
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 1:
            raise PreconditionError(f"micro-cluster count must be >= 1, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        if int(self.id) != self.id or self.id < 0:
            raise PreconditionError(f"bad micro-cluster id {self.id!r}")
        object.__setattr__(self, "id", int(self.id))
        if len(self.cf1x) != len(self.cf2x) or len(self.cf1x) < 1:
            raise DimensionError("cf1x and cf2x must have the same positive length")
        if not (_all_finite(self.cf1x) and _all_finite(self.cf2x)
                and math.isfinite(self.cf1t) and math.isfinite(self.cf2t)):
            raise PreconditionError("non-finite micro-cluster field")
        if not all(_check_cs(s, l, self.n) for l, s in zip(self.cf1x, self.cf2x)):
            raise PreconditionError("cf2x below cf1x^2/n")
        if not _check_cs(self.cf2t, self.cf1t, self.n):
            raise PreconditionError("cf2t below cf1t^2/n")

    @property
    def dim(self) -> int:
        return len(self.cf1x)

    @classmethod
    def from_point(cls, p: Point, id: int = 0) -> "MicroCluster":
        return cls(
            cf2x=tuple(x * x for x in p.coords),
            cf1x=p.coords,
            cf2t=p.timestamp * p.timestamp,
            cf1t=p.timestamp,
            n=1,
            id=id,
        )

    def numeric_fields(self) -> tuple:
        """All fields except ``id``."""
        return (self.cf2x, self.cf1x, self.cf2t, self.cf1t, self.n)


@dataclass(frozen=True)
class Clustering:
    """One site's local micro-clustering for one epoch."""

    site_id: int
    epoch: int
    dim: int
    micro_clusters: tuple[MicroCluster, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "micro_clusters", tuple(self.micro_clusters))
        if self.site_id < 0 or self.epoch < 0:
            raise PreconditionError("site_id and epoch must be non-negative")
        if self.dim < 1:
            raise DimensionError("dim must be positive")
        if not self.micro_clusters:
            raise PreconditionError("a clustering holds at least one micro-cluster")
        for mc in self.micro_clusters:
            if mc.dim != self.dim:
                raise DimensionError(f"micro-cluster {mc.id} has dim {mc.dim}, expected {self.dim}")
        ids = [mc.id for mc in self.micro_clusters]
        if len(set(ids)) != len(ids):
            raise PreconditionError("duplicate micro-cluster ids")

    @property
    def k(self) -> int:
        return len(self.micro_clusters)

    @property
    def total_points(self) -> int:
        return sum(mc.n for mc in self.micro_clusters)


def _common_dim(points: Sequence[Point]) -> int:
    dims = {p.dim for p in points}
    if len(dims) > 1:
        raise DimensionError(f"points have mixed dimensions {sorted(dims)}")
    return dims.pop()


def cf_from_points(points: Sequence[Point], dim: int | None = None) -> ClusterFeature:
    """Summarize ``points``. ``dim`` is only needed for an empty list."""
    if not points:
        if dim is None:
            raise DimensionError("dimension of an empty point list is unknown")
        return ClusterFeature.zero(dim)
    d = _common_dim(points)
    if dim is not None and dim != d:
        raise DimensionError(f"points have dim {d}, expected {dim}")
    X = np.array([p.coords for p in points], dtype=np.float64)
    return ClusterFeature(len(points), X.sum(axis=0), (X * X).sum(axis=0))


def cf_merge(a: ClusterFeature, b: ClusterFeature) -> ClusterFeature:
    if a.dim != b.dim:
        raise DimensionError(f"cannot merge dim {a.dim} with dim {b.dim}")
    return ClusterFeature(
        a.n + b.n,
        tuple(x + y for x, y in zip(a.ls, b.ls)),
        tuple(x + y for x, y in zip(a.ss, b.ss)),
    )


def mc_from_points(points: Sequence[Point], id: int = 0) -> MicroCluster:
    if not points:
        raise PreconditionError("cannot build a micro-cluster from no points")
    cf = cf_from_points(points)
    ts = np.array([p.timestamp for p in points], dtype=np.float64)
    return MicroCluster(cf.ss, cf.ls, float((ts * ts).sum()), float(ts.sum()), cf.n, id)


def mc_insert(mc: MicroCluster, p: Point) -> MicroCluster:
    if p.dim != mc.dim:
        raise DimensionError(f"point has dim {p.dim}, micro-cluster has dim {mc.dim}")
    return MicroCluster(
        cf2x=tuple(s + x * x for s, x in zip(mc.cf2x, p.coords)),
        cf1x=tuple(s + x for s, x in zip(mc.cf1x, p.coords)),
        cf2t=mc.cf2t + p.timestamp * p.timestamp,
        cf1t=mc.cf1t + p.timestamp,
        n=mc.n + 1,
        id=mc.id,
    )


def mc_merge(a: MicroCluster, b: MicroCluster) -> MicroCluster:
    """Additive merge; the result keeps the smaller of the two ids."""
    if a.dim != b.dim:
        raise DimensionError(f"cannot merge dim {a.dim} with dim {b.dim}")
    return MicroCluster(
        cf2x=tuple(x + y for x, y in zip(a.cf2x, b.cf2x)),
        cf1x=tuple(x + y for x, y in zip(a.cf1x, b.cf1x)),
        cf2t=a.cf2t + b.cf2t,
        cf1t=a.cf1t + b.cf1t,
        n=a.n + b.n,
        id=min(a.id, b.id),
    )


def mc_centroid(mc: MicroCluster) -> Vector:
    return tuple(s / mc.n for s in mc.cf1x)


def mc_rms_radius(mc: MicroCluster) -> float:
    n = mc.n
    var = [max(0.0, sq / n - (lin / n) ** 2) for lin, sq in zip(mc.cf1x, mc.cf2x)]
    return math.sqrt(sum(var) / len(var))
