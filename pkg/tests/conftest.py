import random

import numpy as np
import pytest

from distream.core import Clustering, MicroCluster, Point


def naive_sums(points):
    """Left-to-right per-dimension sums; deliberately not numpy."""
    d = len(points[0].coords)
    ls = [0.0] * d
    ss = [0.0] * d
    for p in points:
        for i, x in enumerate(p.coords):
            ls[i] += x
            ss[i] += x * x
    return ls, ss


def rel_close(a, b, rtol):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)
    return bool((np.abs(a - b) <= rtol * scale).all())


def random_points(rng: random.Random, n, d, t0=0.0):
    return [Point([rng.uniform(-5, 5) for _ in range(d)], t0 + i) for i in range(n)]


@pytest.fixture
def pyrng():
    return random.Random(1234)


def mc_equal(a: MicroCluster, b: MicroCluster, rtol=1e-9):
    return (a.n == b.n
            and rel_close(a.cf1x, b.cf1x, rtol) and rel_close(a.cf2x, b.cf2x, rtol)
            and rel_close(a.cf1t, b.cf1t, rtol) and rel_close(a.cf2t, b.cf2t, rtol))


def _flat(fields):
    out = []
    for f in fields:
        out.extend(f if isinstance(f, tuple) else (f,))
    return out


def fields_close(x: MicroCluster, y: MicroCluster, rtol=1e-9):
    """Numeric fields equal within rtol, measured against max(|u|, |v|, 1)."""
    if x.n != y.n:
        return False
    u, v = _flat(x.numeric_fields()[:4]), _flat(y.numeric_fields()[:4])
    return all(abs(a - b) <= rtol * max(abs(a), abs(b), 1.0) for a, b in zip(u, v))


def random_clustering(rng: np.random.Generator, max_k=12, max_dim=6) -> Clustering:
    """A valid Clustering built from random point sets, so CF bounds hold."""
    dim = int(rng.integers(1, max_dim + 1))
    k = int(rng.integers(1, max_k + 1))
    ids = rng.choice(2 ** 40, size=k, replace=False)
    mcs = []
    for i in range(k):
        n = int(rng.integers(1, 20))
        X = rng.normal(scale=10 ** rng.uniform(-3, 3), size=(n, dim))
        T = np.sort(rng.uniform(0, 1e6, size=n))
        mcs.append(MicroCluster(cf2x=tuple((X ** 2).sum(axis=0).tolist()), cf1x=tuple(X.sum(axis=0).tolist()),
                                cf2t=float((T ** 2).sum()), cf1t=float(T.sum()), n=n, id=int(ids[i])))
    return Clustering(site_id=int(rng.integers(0, 2 ** 32)), epoch=int(rng.integers(0, 2 ** 63)),
                      dim=dim, micro_clusters=tuple(mcs))
