"""Offline phase: weighted k-means over the union of local micro-clusterings."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Clustering
from .errors import AssignmentError, CardinalityError, DimensionError, EpochError, PreconditionError


@dataclass(frozen=True)
class MacroConfig:
    k_gc: int = 5
    max_iters: int = 100
    tol: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if self.k_gc < 1:
            raise PreconditionError("k_gc must be >= 1")
        if self.max_iters < 1 or not self.tol > 0:
            raise PreconditionError("max_iters and tol must be positive")


@dataclass(frozen=True, eq=True)
class GlobalClustering:
    epoch: int
    centroids: tuple[tuple[float, ...], ...]
    weights: tuple[int, ...]
    assignment: dict = field(default_factory=dict, hash=False)

    @property
    def dim(self) -> int:
        return len(self.centroids[0])

    def to_bytes(self) -> bytes:
        """Canonical byte encoding, used for bit-exact comparisons."""
        out = [struct.pack("<QII", self.epoch, len(self.centroids), self.dim)]
        for c, w in zip(self.centroids, self.weights):
            out.append(struct.pack(f"<Q{len(c)}d", w, *c))
        for (site, mc_id), idx in sorted(self.assignment.items()):
            out.append(struct.pack("<IQI", site, mc_id, idx))
        return b"".join(out)


def pseudo_points(locals_: Sequence[Clustering]):
    """Canonically ordered (keys, centroids, weights) over all micro-clusters."""
    items = []
    for lc in locals_:
        for mc in lc.micro_clusters:
            items.append(((lc.site_id, mc.id), mc))
    items.sort(key=lambda kv: kv[0])
    keys = [k for k, _ in items]
    weights = np.array([mc.n for _, mc in items], dtype=np.int64)
    P = np.array([mc.cf1x for _, mc in items], dtype=np.float64) / weights[:, None]
    return keys, P, weights


def _check_locals(locals_: Sequence[Clustering]) -> None:
    if not locals_:
        raise CardinalityError("no local clusterings given")
    dims = {lc.dim for lc in locals_}
    if len(dims) > 1:
        raise DimensionError(f"local clusterings have mixed dims {sorted(dims)}")
    epochs = {lc.epoch for lc in locals_}
    if len(epochs) > 1:
        raise EpochError(f"local clusterings span epochs {sorted(epochs)}")


def _assign(P: np.ndarray, C: np.ndarray):
    d2 = ((P[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(len(P)), labels]


def weighted_farthest_first(P: np.ndarray, w: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Start from a weight-proportional random pick, then repeatedly take the
    pseudo-point maximizing weight * squared distance to the chosen set."""
    rng = np.random.default_rng(seed)
    first = int(rng.choice(len(P), p=w / w.sum()))
    chosen = [first]
    mind = ((P - P[first]) ** 2).sum(axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(w * mind))
        chosen.append(nxt)
        mind = np.minimum(mind, ((P - P[nxt]) ** 2).sum(axis=1))
    return P[chosen].copy()


def lloyd(P: np.ndarray, w: np.ndarray, C: np.ndarray, max_iters: int, tol: float,
          trace: list | None = None) -> np.ndarray:
    """Weighted Lloyd iterations from initial centroids C.

    If ``trace`` is given, the weighted SSQ after each assignment step is
    appended to it.
    """
    wf = w.astype(np.float64)
    k = len(C)
    for _ in range(max_iters):
        labels, own = _assign(P, C)
        if trace is not None:
            trace.append(float((wf * own).sum()))
        newC = C.copy()
        for c in range(k):
            sel = labels == c
            if sel.any():
                newC[c] = (wf[sel, None] * P[sel]).sum(axis=0) / wf[sel].sum()
        # empty clusters take the pseudo-point farthest from its own centroid
        for c in range(k):
            if not (labels == c).any():
                i = int(np.argmax(own))
                newC[c] = P[i]
                own[i] = -1.0
        shift = float(np.sqrt(((newC - C) ** 2).sum(axis=1)).max())
        C = newC
        if shift < tol:
            break
    return C


def macro_cluster(locals_: Sequence[Clustering], config: MacroConfig) -> GlobalClustering:
    _check_locals(locals_)
    keys, P, w = pseudo_points(locals_)
    if len(P) < config.k_gc:
        raise CardinalityError(f"{len(P)} micro-clusters cannot form {config.k_gc} global clusters")
    C = weighted_farthest_first(P, w, config.k_gc, config.seed)
    C = lloyd(P, w, C, config.max_iters, config.tol)
    labels, _ = _assign(P, C)
    weights = [int(w[labels == c].sum()) for c in range(config.k_gc)]
    return GlobalClustering(
        epoch=locals_[0].epoch,
        centroids=tuple(tuple(float(v) for v in row) for row in C),
        weights=tuple(weights),
        assignment={key: int(lab) for key, lab in zip(keys, labels)},
    )


def weighted_ssq(gc: GlobalClustering, locals_: Sequence[Clustering]) -> float:
    """Sum of n * squared distance from each micro-cluster centroid to its
    assigned global centroid."""
    total = 0.0
    C = np.array(gc.centroids)
    for lc in locals_:
        for mc in lc.micro_clusters:
            key = (lc.site_id, mc.id)
            if key not in gc.assignment:
                raise AssignmentError(f"micro-cluster {key} not in the global assignment")
            c = C[gc.assignment[key]]
            cen = np.array(mc.cf1x) / mc.n
            total += mc.n * float(((cen - c) ** 2).sum())
    return total


def nearest_ssq(centroids, locals_: Sequence[Clustering]) -> float:
    """Weighted SSQ with each micro-cluster sent to its nearest centroid.

    Unlike :func:`weighted_ssq` this works for centroids computed from a
    different set of micro-clusters, so two runs can be scored on common ground.
    """
    _, P, w = pseudo_points(locals_)
    _, own = _assign(P, np.asarray(centroids, dtype=np.float64))
    return float((w * own).sum())
