"""Online micro-clustering: keeps a fixed budget of k micro-clusters over one block."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Clustering, MicroCluster, Point
from .errors import DimensionError, EmptyStateError, OrderingError, PreconditionError

SEED_MAX_ITERS = 50
SEED_TOL = 1e-9


@dataclass(frozen=True)
class EngineConfig:
    k: int = 100
    boundary_factor: float = 2.0
    recency_horizon: float = math.inf
    init_points: int | None = None  # defaults to 10 * k
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise PreconditionError(f"k must be >= 1, got {self.k}")
        if not self.boundary_factor > 0:
            raise PreconditionError("boundary_factor must be positive")
        if not self.recency_horizon > 0:
            raise PreconditionError("recency_horizon must be positive")
        if self.init_points is None:
            object.__setattr__(self, "init_points", 10 * self.k)
        if self.init_points < self.k:
            raise PreconditionError(f"init_points ({self.init_points}) must be >= k ({self.k})")


def _sqdist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared distances, rows of A against rows of B."""
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def seeded_kmeans(X: np.ndarray, k: int, seed: int,
                  max_iters: int = SEED_MAX_ITERS, tol: float = SEED_TOL) -> np.ndarray:
    """Cluster the rows of X into min(k, #distinct rows) non-empty groups.

    Farthest-first seeding from a seeded random start, then Lloyd iterations.
    Ties in assignment go to the lowest cluster index. Returns the labels.
    """
    n_distinct = np.unique(X, axis=0).shape[0]
    k = min(k, n_distinct)
    rng = np.random.default_rng(seed)
    first = int(rng.integers(len(X)))
    centers = [X[first]]
    mind = ((X - X[first]) ** 2).sum(axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(mind))
        centers.append(X[nxt])
        mind = np.minimum(mind, ((X - X[nxt]) ** 2).sum(axis=1))
    C = np.array(centers)

    for _ in range(max_iters):
        d2 = _sqdist(X, C)
        labels = np.argmin(d2, axis=1)
        newC = C.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                newC[c] = X[members].mean(axis=0)
            else:
                own = d2[np.arange(len(X)), labels]
                newC[c] = X[int(np.argmax(own))]
        shift = float(np.sqrt(((newC - C) ** 2).sum(axis=1)).max())
        C = newC
        if shift < tol:
            break

    d2 = _sqdist(X, C)
    labels = np.argmin(d2, axis=1)
    # hand an empty group the point farthest from its own center; that point's
    # group keeps at least one other member since a lone point sits on its center
    counts = np.bincount(labels, minlength=k)
    while (counts == 0).any():
        c = int(np.argmin(counts))
        own = d2[np.arange(len(X)), labels]
        own = np.where(counts[labels] > 1, own, -1.0)
        i = int(np.argmax(own))
        counts[labels[i]] -= 1
        labels[i] = c
        counts[c] += 1
        d2[i, :] = np.inf
        d2[i, c] = 0.0
    return labels


class MicroEngine:
    """Per-site micro-clustering state.

    Points are buffered until ``init_points`` have arrived; the buffer is then
    seeded into micro-clusters with :func:`seeded_kmeans`. After that each point
    is absorbed by its nearest micro-cluster when it falls inside that cluster's
    boundary, or starts a new one, after which the budget is restored by dropping
    a stale cluster or merging the closest pair.
    """

    def __init__(self, config: EngineConfig, dim: int):
        if dim < 1:
            raise DimensionError("dim must be positive")
        self.config = config
        self.dim = dim
        cap = config.k + 1
        self._n = np.zeros(cap, dtype=np.int64)
        self._ls = np.zeros((cap, dim))
        self._ss = np.zeros((cap, dim))
        self._lt = np.zeros(cap)
        self._st = np.zeros(cap)
        self._ids = np.zeros(cap, dtype=np.int64)
        self._m = 0
        self._buf_x: list[np.ndarray] = []
        self._buf_t: list[float] = []
        self.next_id = 0
        self.points_seen = 0
        self.now = -math.inf
        self.initialized = False

    # -- public API -------------------------------------------------------

    def process(self, p: Point) -> None:
        if p.dim != self.dim:
            raise DimensionError(f"point has dim {p.dim}, engine has dim {self.dim}")
        self._process(np.asarray(p.coords, dtype=np.float64), p.timestamp)

    def process_block(self, X: np.ndarray, T: np.ndarray) -> None:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise DimensionError(f"block has shape {X.shape}, engine has dim {self.dim}")
        for x, t in zip(X, np.asarray(T, dtype=np.float64)):
            self._process(x, float(t))

    @property
    def micro_clusters(self) -> list[MicroCluster]:
        if not self.initialized:
            return []
        return self._materialize(self._n, self._ls, self._ss, self._lt, self._st,
                                 self._ids, self._m)

    def snapshot(self, site_id: int, epoch: int) -> Clustering:
        if self.points_seen == 0:
            raise EmptyStateError("no points processed yet")
        if self.initialized:
            mcs = self.micro_clusters
        else:
            n, ls, ss, lt, st, ids = self._seed_from_buffer()
            mcs = self._materialize(n, ls, ss, lt, st, ids, len(n))
        return Clustering(site_id=site_id, epoch=epoch, dim=self.dim, micro_clusters=tuple(mcs))

    # -- internals --------------------------------------------------------

    def _process(self, x: np.ndarray, t: float) -> None:
        if not (math.isfinite(t) and t >= 0):
            raise PreconditionError(f"bad timestamp {t}")
        if t < self.now:
            raise OrderingError(f"timestamp {t} precedes engine clock {self.now}")
        if not np.isfinite(x).all():
            raise PreconditionError("non-finite coordinate")
        self.now = t
        self.points_seen += 1
        if not self.initialized:
            self._buf_x.append(x)
            self._buf_t.append(t)
            if self.points_seen >= self.config.init_points:
                self._initialize()
            return
        self._absorb_or_create(x, t)

    def _seed_from_buffer(self):
        X = np.array(self._buf_x)
        T = np.array(self._buf_t)
        labels = seeded_kmeans(X, self.config.k, self.config.seed)
        k = int(labels.max()) + 1
        n = np.zeros(k, dtype=np.int64)
        ls = np.zeros((k, self.dim))
        ss = np.zeros((k, self.dim))
        lt = np.zeros(k)
        st = np.zeros(k)
        for c in range(k):
            sel = labels == c
            Xc, Tc = X[sel], T[sel]
            n[c] = len(Xc)
            ls[c] = Xc.sum(axis=0)
            ss[c] = (Xc * Xc).sum(axis=0)
            lt[c] = Tc.sum()
            st[c] = (Tc * Tc).sum()
        return n, ls, ss, lt, st, np.arange(k, dtype=np.int64)

    def _initialize(self) -> None:
        n, ls, ss, lt, st, ids = self._seed_from_buffer()
        m = len(n)
        self._n[:m], self._ls[:m], self._ss[:m] = n, ls, ss
        self._lt[:m], self._st[:m], self._ids[:m] = lt, st, ids
        self._m = m
        self.next_id = m
        self._buf_x, self._buf_t = [], []
        self.initialized = True

    def _radius(self, j: int, centroids: np.ndarray) -> float:
        m = self._m
        if self._n[j] == 1:
            if m < 2:
                return 0.0
            d2 = ((centroids[:m] - centroids[j]) ** 2).sum(axis=1)
            d2[j] = np.inf
            return 0.5 * math.sqrt(float(d2.min()))
        n = self._n[j]
        mean = self._ls[j] / n
        var = np.maximum(0.0, self._ss[j] / n - mean * mean)
        return math.sqrt(float(var.mean()))

    def _absorb_or_create(self, x: np.ndarray, t: float) -> None:
        m = self._m
        cfg = self.config
        centroids = self._ls[:m] / self._n[:m, None]
        d2 = ((centroids - x) ** 2).sum(axis=1)
        j = int(np.argmin(d2))
        dist = math.sqrt(float(d2[j]))
        if m < cfg.k:
            # fewer distinct values than the budget so far: one cluster per value
            absorb = dist == 0.0
        else:
            absorb = dist <= cfg.boundary_factor * self._radius(j, centroids)
        if absorb:
            self._n[j] += 1
            self._ls[j] += x
            self._ss[j] += x * x
            self._lt[j] += t
            self._st[j] += t * t
            return

        self._n[m] = 1
        self._ls[m] = x
        self._ss[m] = x * x
        self._lt[m] = t
        self._st[m] = t * t
        self._ids[m] = self.next_id
        self.next_id += 1
        self._m = m + 1
        if self._m > cfg.k:
            self._restore_budget()

    def _restore_budget(self) -> None:
        m = self._m
        mean_t = self._lt[:m] / self._n[:m]
        stale = mean_t < self.now - self.config.recency_horizon
        if stale.any():
            self._delete(int(np.argmin(np.where(stale, mean_t, np.inf))))
            return
        centroids = self._ls[:m] / self._n[:m, None]
        d2 = _sqdist(centroids, centroids)
        d2[np.tril_indices(m)] = np.inf
        i, j = np.unravel_index(int(np.argmin(d2)), d2.shape)
        self._n[i] += self._n[j]
        self._ls[i] += self._ls[j]
        self._ss[i] += self._ss[j]
        self._lt[i] += self._lt[j]
        self._st[i] += self._st[j]
        self._ids[i] = min(self._ids[i], self._ids[j])
        self._delete(int(j))

    def _delete(self, j: int) -> None:
        m = self._m
        for arr in (self._n, self._ls, self._ss, self._lt, self._st, self._ids):
            arr[j:m - 1] = arr[j + 1:m]
        self._m = m - 1

    def _materialize(self, n, ls, ss, lt, st, ids, m) -> list[MicroCluster]:
        return [
            MicroCluster(cf2x=ss[i], cf1x=ls[i], cf2t=st[i], cf1t=lt[i], n=int(n[i]), id=int(ids[i]))
            for i in range(m)
        ]


def engine_init(config: EngineConfig, dim: int) -> MicroEngine:
    return MicroEngine(config, dim)


def engine_process(state: MicroEngine, p: Point) -> MicroEngine:
    state.process(p)
    return state


def engine_snapshot(state: MicroEngine, site_id: int, epoch: int) -> Clustering:
    return state.snapshot(site_id, epoch)
