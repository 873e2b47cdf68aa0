"""Dataset replay, centralized baselines, comparison oracles and timing."""
from __future__ import annotations

import csv
import logging
import math
import statistics
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import results, wire
from .core import Clustering
from .errors import DimensionError, DistreamError, ParseError, PreconditionError
from .macro import GlobalClustering, MacroConfig, macro_cluster, nearest_ssq
from .micro import EngineConfig, MicroEngine
from .protocol import Coordinator, CoordinatorConfig, RemoteState, build_local, iter_blocks, run_remote

log = logging.getLogger(__name__)

Stream = tuple[np.ndarray, np.ndarray]  # (X, T)

_TIME_NAMES = {"timestamp", "time", "t", "ts"}
_LABEL_NAMES = {"label", "class", "target"}


# ---------------------------------------------------------------------------
# data


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_csv_stream(path, has_label: bool | None = None, timestamp_col: int | str | None = None) -> Stream:
    """Read a CSV of numeric features.

    A non-numeric first row is taken as a header; a header column called
    ``timestamp``/``time`` supplies timestamps and a trailing ``label``/``class``
    column is dropped. Without a timestamp column the row index is the timestamp.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{path}: no rows")
    header = None
    if not all(_is_number(c) for c in rows[0]):
        header = [c.strip().lower() for c in rows[0]]
        rows = rows[1:]
    width = len(header) if header else len(rows[0])

    if isinstance(timestamp_col, str):
        if header is None or timestamp_col.lower() not in header:
            raise ParseError(f"{path}: no column named {timestamp_col!r}")
        timestamp_col = header.index(timestamp_col.lower())
    elif timestamp_col is None and header is not None:
        hits = [i for i, name in enumerate(header) if name in _TIME_NAMES]
        timestamp_col = hits[0] if hits else None
    if has_label is None:
        has_label = header is not None and header[-1] in _LABEL_NAMES

    drop = set()
    if has_label:
        drop.add(width - 1)
    if timestamp_col is not None:
        drop.add(timestamp_col % width)
    feature_cols = [i for i in range(width) if i not in drop]
    if not feature_cols:
        raise ParseError(f"{path}: no feature columns")

    X = np.empty((len(rows), len(feature_cols)))
    T = np.arange(len(rows), dtype=np.float64)
    offset = 2 if header else 1
    for r, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"{path}: row {r + offset} has {len(row)} fields, expected {width}")
        for j, c in enumerate(feature_cols):
            try:
                X[r, j] = float(row[c])
            except ValueError:
                raise ParseError(f"{path}: row {r + offset}: non-numeric value {row[c]!r}") from None
        if timestamp_col is not None:
            try:
                T[r] = float(row[timestamp_col])
            except ValueError:
                raise ParseError(f"{path}: row {r + offset}: bad timestamp {row[timestamp_col]!r}") from None
    if not np.isfinite(X).all():
        raise ParseError(f"{path}: non-finite feature value")
    return X, T


def partition(X: np.ndarray, T: np.ndarray, n_sites: int, mode: str = "block") -> list[Stream]:
    """Split one stream across sites, keeping each site's rows in arrival order."""
    if n_sites < 1:
        raise PreconditionError("n_sites must be >= 1")
    idx = np.arange(len(X))
    if mode == "block":
        parts = np.array_split(idx, n_sites)
    elif mode == "round_robin":
        parts = [idx[i::n_sites] for i in range(n_sites)]
    else:
        raise PreconditionError(f"unknown partition {mode!r}")
    return [(X[p], T[p]) for p in parts]


def load_stream(path, n_sites: int, partition_mode: str = "block", **csv_opts) -> list[Stream]:
    X, T = read_csv_stream(path, **csv_opts)
    return partition(X, T, n_sites, partition_mode)


@dataclass
class Blobs:
    X: np.ndarray
    labels: np.ndarray
    centers: np.ndarray

    @property
    def T(self) -> np.ndarray:
        return np.arange(len(self.X), dtype=np.float64)


def synth_blobs(d: int = 2, n_blobs: int = 4, points: int = 4000, sigma: float = 0.05,
                seed: int = 0) -> Blobs:
    """Gaussian blobs around centers drawn uniformly from the unit cube."""
    if n_blobs < 1 or d < 1 or points < 0:
        raise PreconditionError("need d >= 1, n_blobs >= 1, points >= 0")
    if not sigma > 0:
        raise PreconditionError("sigma must be positive")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.0, 1.0, size=(n_blobs, d))
    labels = rng.integers(n_blobs, size=points)
    X = centers[labels] + rng.normal(0.0, sigma, size=(points, d))
    return Blobs(X, labels, centers)


BLOB_DEFAULTS = {"d": 2, "k": 4, "sigma": 0.05, "n": 8000, "seed": 0}


def parse_blob_spec(text: str) -> dict:
    """``blobs:d=2,k=4,sigma=0.05,n=8000,seed=0`` -> dict of generator arguments."""
    if not text.startswith("blobs"):
        raise ParseError(f"not a blob spec: {text!r}")
    opts = dict(BLOB_DEFAULTS)
    _, _, body = text.partition(":")
    for item in filter(None, (s.strip() for s in body.split(","))):
        key, eq, value = item.partition("=")
        if not eq or key not in opts:
            raise ParseError(f"bad blob option {item!r}")
        try:
            opts[key] = float(value) if key == "sigma" else int(value)
        except ValueError:
            raise ParseError(f"bad value in blob option {item!r}") from None
    return opts


def load_data(data: str, points: int | None = None) -> Stream:
    """Load a dataset by path or synthetic spec; ``points`` overrides blob size."""
    if data.startswith("blobs"):
        o = parse_blob_spec(data)
        b = synth_blobs(o["d"], o["k"], points if points is not None else o["n"], o["sigma"], o["seed"])
        return b.X, b.T
    return read_csv_stream(data)


# ---------------------------------------------------------------------------
# runs


@dataclass
class RunSpec:
    data: str = "blobs:"
    n_sites: int = 2
    window: int = 1000
    engine_config: EngineConfig = field(default_factory=lambda: EngineConfig(k=20))
    macro_config: MacroConfig = field(default_factory=lambda: MacroConfig(k_gc=4))
    mode: str = "push"
    partition: str = "block"
    results_dir: Path | None = None
    mic_delay: float = 0.0
    epoch_timeout: float = 10.0
    points: int | None = None  # overrides the size of synthetic data

    def __post_init__(self):
        if self.n_sites < 1:
            raise PreconditionError("n_sites must be >= 1")
        if self.window < 1:
            raise PreconditionError("window must be >= 1")
        if self.mode not in ("push", "pull", "centralized", "interleaved"):
            raise PreconditionError(f"unknown mode {self.mode!r}")


def site_streams(spec: RunSpec) -> list[Stream]:
    X, T = load_data(spec.data, spec.points)
    return partition(X, T, spec.n_sites, spec.partition)


def site_blocks(spec: RunSpec) -> list[list[Stream]]:
    return [list(iter_blocks(X, T, spec.window)) for X, T in site_streams(spec)]


@dataclass
class RunResult:
    history: list[GlobalClustering]
    locals: dict[int, list[Clustering]]  # epoch -> local clusterings sorted by site
    metrics: list[dict] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    t_mic: dict[int, list[float]] = field(default_factory=dict)   # epoch -> per-site ms
    t_transmit: dict[int, list[float]] = field(default_factory=dict)
    t_mac: dict[int, float] = field(default_factory=dict)
    wall_ms: float = 0.0

    def by_epoch(self) -> dict[int, GlobalClustering]:
        return {g.epoch: g for g in self.history}


def run_distributed(spec: RunSpec, blocks: list[list[Stream]] | None = None) -> RunResult:
    """Coordinator plus one thread per site, talking over loopback TCP."""
    if spec.mode not in ("push", "pull"):
        raise PreconditionError("run_distributed needs mode push or pull")
    blocks = site_blocks(spec) if blocks is None else blocks
    n = len(blocks)
    coord = Coordinator(CoordinatorConfig(
        expected_sites=frozenset(range(n)),
        mode=spec.mode,
        macro_config=spec.macro_config,
        epoch_timeout=spec.epoch_timeout,
        results_dir=spec.results_dir,
        epoch_points=spec.window,
    ))
    t0 = time.perf_counter()
    coord.start()
    failures: list[BaseException] = []

    def site(i: int) -> None:
        try:
            run_remote(RemoteState(site_id=i, address=coord.address, blocks=blocks[i],
                                   engine_config=spec.engine_config, mode=spec.mode,
                                   mic_delay=spec.mic_delay))
        except BaseException as e:  # reported after join
            failures.append(e)

    threads = [threading.Thread(target=site, args=(i,), name=f"site-{i}") for i in range(n)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    history = coord.join()
    wall = (time.perf_counter() - t0) * 1e3
    if failures:
        raise failures[0]

    res = RunResult(history=list(history), errors=list(coord.errors), metrics=coord.metric_rows(),
                    wall_ms=wall, t_mac=dict(coord.mac_ms),
                    locals=dict(coord.locals))
    for (epoch, site_id), (t_mic, t_tx) in sorted(coord.site_timings.items()):
        res.t_mic.setdefault(epoch, []).append(t_mic)
        res.t_transmit.setdefault(epoch, []).append(t_tx)
    return res


def run_centralized_baseline(spec: RunSpec, blocks: list[list[Stream]] | None = None) -> RunResult:
    """Centralized run built the way the equivalence argument builds it: in one
    process, run the micro phase on every site's block in turn, take the union,
    and macro-cluster it."""
    blocks = site_blocks(spec) if blocks is None else blocks
    n_epochs = max(len(b) for b in blocks)
    res = RunResult(history=[], locals={})
    t_start = time.perf_counter()
    for epoch in range(n_epochs):
        if any(epoch >= len(b) for b in blocks):
            res.errors.append(f"epoch {epoch}: not every site has a block; skipped")
            continue
        locals_, mics = [], []
        for site_id, site in enumerate(blocks):
            X, T = site[epoch]
            lc, t_mic = build_local(site_id, epoch, X, T, spec.engine_config, spec.mic_delay)
            locals_.append(lc)
            mics.append(t_mic)
        t0 = time.perf_counter()
        gc = macro_cluster(locals_, spec.macro_config)
        res.t_mac[epoch] = (time.perf_counter() - t0) * 1e3
        res.t_mic[epoch] = mics
        res.locals[epoch] = locals_
        res.history.append(gc)
        if spec.results_dir is not None:
            results.write_global(spec.results_dir, gc)
    res.wall_ms = (time.perf_counter() - t_start) * 1e3
    return res


def run_interleaved_baseline(spec: RunSpec, blocks: list[list[Stream]] | None = None) -> RunResult:
    """One engine over the time-ordered merge of every site's block per epoch.

    The engine gets the combined budget (N * k micro-clusters, N * init_points)
    so it summarizes the same data with the same total memory as the sites do.
    """
    blocks = site_blocks(spec) if blocks is None else blocks
    n = len(blocks)
    cfg = spec.engine_config
    big = replace(cfg, k=n * cfg.k, init_points=n * cfg.init_points)
    res = RunResult(history=[], locals={})
    n_epochs = min(len(b) for b in blocks)
    for epoch in range(n_epochs):
        X = np.concatenate([b[epoch][0] for b in blocks])
        T = np.concatenate([b[epoch][1] for b in blocks])
        order = np.argsort(T, kind="stable")
        engine = MicroEngine(big, X.shape[1])
        engine.process_block(X[order], T[order])
        lc = engine.snapshot(0, epoch)
        res.locals[epoch] = [lc]
        res.history.append(macro_cluster([lc], spec.macro_config))
    return res


def run(spec: RunSpec) -> RunResult:
    if spec.mode in ("push", "pull"):
        return run_distributed(spec)
    if spec.mode == "centralized":
        return run_centralized_baseline(spec)
    return run_interleaved_baseline(spec)


# ---------------------------------------------------------------------------
# comparison


@dataclass
class ComparisonReport:
    equal: bool
    max_distance: float
    ssq_ratio: float

    def __str__(self) -> str:
        head = "identical" if self.equal else "different"
        return f"{head} max_centroid_distance={self.max_distance:.6g} ssq_ratio={self.ssq_ratio:.6g}"


def canonical_centroids(centroids) -> list[tuple[float, ...]]:
    return sorted(tuple(c) for c in centroids)


def greedy_max_distance(a, b) -> float:
    """Pair centroids greedily by smallest distance; return the largest paired distance."""
    A, B = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    D = np.sqrt(((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2))
    worst = 0.0
    for _ in range(min(len(A), len(B))):
        i, j = np.unravel_index(int(np.argmin(D)), D.shape)
        worst = max(worst, float(D[i, j]))
        D[i, :] = np.inf
        D[:, j] = np.inf
    return worst


def compare_centroids(a, b, locals_: Sequence[Clustering] | None = None) -> ComparisonReport:
    a, b = list(a), list(b)
    if len(a[0]) != len(b[0]):
        raise DimensionError("centroid sets have different dimensions")
    equal = canonical_centroids(a) == canonical_centroids(b)
    dist = greedy_max_distance(a, b)
    ratio = math.nan
    if locals_:
        sa, sb = nearest_ssq(a, locals_), nearest_ssq(b, locals_)
        ratio = 1.0 if sa == sb else (sa / sb if sb > 0 else math.inf)
    return ComparisonReport(equal, dist, ratio)


def compare_clusterings(a: GlobalClustering, b: GlobalClustering,
                        locals_: Sequence[Clustering] | None = None) -> ComparisonReport:
    """Exact-equality flag (after canonical sort), worst matched-centroid distance,
    and the ratio of weighted SSQs of both centroid sets over ``locals_``."""
    if a.dim != b.dim:
        raise DimensionError(f"dims differ: {a.dim} vs {b.dim}")
    rep = compare_centroids(a.centroids, b.centroids, locals_)
    rep.equal = rep.equal and sorted(zip(map(tuple, a.centroids), a.weights)) == \
        sorted(zip(map(tuple, b.centroids), b.weights))
    return rep


def point_ssq(centroids, X: np.ndarray) -> float:
    """Sum of squared distances from raw points to their nearest centroid."""
    C = np.asarray(centroids, dtype=np.float64)
    d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).sum())


def compare_dirs(dir_a, dir_b) -> dict[int, ComparisonReport | None]:
    """Compare the global-<epoch>.csv files of two results directories.

    Local snapshots saved in ``dir_a`` (if any) are used for the SSQ ratio.
    An epoch present in only one directory maps to None.
    """
    fa, fb = results.global_files(dir_a), results.global_files(dir_b)
    out: dict[int, ComparisonReport | None] = {}
    for epoch in sorted(set(fa) | set(fb)):
        if epoch not in fa or epoch not in fb:
            out[epoch] = None
            continue
        ca, wa = results.read_global(fa[epoch])
        cb, wb = results.read_global(fb[epoch])
        locals_ = [wire.deserialize(p.read_bytes())
                   for p in sorted(Path(dir_a).glob(f"local-{epoch}-*.dstc"))]
        rep = compare_centroids(ca, cb, locals_ or None)
        rep.equal = rep.equal and sorted(zip(ca, wa)) == sorted(zip(cb, wb))
        out[epoch] = rep
    return out


# ---------------------------------------------------------------------------
# timing


@dataclass
class TimingReport:
    n_sites: int
    t_mic: dict[int, list[float]]
    t_transmit: dict[int, list[float]]
    t_mac: dict[int, float]
    t_distributed: dict[int, float]
    t_centralized: dict[int, float]
    epochs_used: list[int]

    @property
    def t_distributed_ms(self) -> float:
        return statistics.median(self.t_distributed[e] for e in self.epochs_used)

    @property
    def t_centralized_ms(self) -> float:
        return statistics.median(self.t_centralized[e] for e in self.epochs_used)

    @property
    def speedup(self) -> float:
        return self.t_centralized_ms / self.t_distributed_ms

    def row(self) -> dict:
        return {
            "n_sites": self.n_sites,
            "t_centralized_ms": f"{self.t_centralized_ms:.6g}",
            "t_distributed_ms": f"{self.t_distributed_ms:.6g}",
            "speedup": f"{self.speedup:.6g}",
        }


def measure_speedup(spec: RunSpec, epochs: int = 6) -> TimingReport:
    """Run distributed and centralized on the same blocks and time both.

    Distributed time per epoch is max over sites of (t_mic + t_transmit) plus
    t_mac; centralized time is the sum of every site's t_mic plus t_mac. The
    first epoch is a warm-up and is dropped; medians are taken over the rest.
    """
    if epochs < 2:
        raise PreconditionError("need at least two epochs (one is warm-up)")
    points = spec.n_sites * spec.window * epochs if spec.data.startswith("blobs") else spec.points
    spec = replace(spec, points=points, mode="push" if spec.mode not in ("push", "pull") else spec.mode)
    blocks = [b[:epochs] for b in site_blocks(spec)]
    dist = run_distributed(replace(spec, results_dir=None), blocks)
    cent = run_centralized_baseline(replace(spec, results_dir=None), blocks)

    t_dist, t_cent = {}, {}
    for epoch in sorted(dist.t_mac):
        mics, txs = dist.t_mic.get(epoch, []), dist.t_transmit.get(epoch, [])
        if len(mics) != spec.n_sites:
            continue
        t_dist[epoch] = max(m + t for m, t in zip(mics, txs)) + dist.t_mac[epoch]
        t_cent[epoch] = sum(cent.t_mic[epoch]) + cent.t_mac[epoch]
    used = [e for e in sorted(t_dist) if e > 0] or sorted(t_dist)
    if not used:
        raise DistreamError("no complete epochs to time")
    return TimingReport(spec.n_sites, dist.t_mic, dist.t_transmit, dist.t_mac, t_dist, t_cent, used)


def fit_slope(ns: Sequence[float], speedups: Sequence[float]) -> float:
    """Least-squares slope of speedup = a * N through the origin."""
    ns, s = np.asarray(ns, dtype=np.float64), np.asarray(speedups, dtype=np.float64)
    return float((ns * s).sum() / (ns * ns).sum())


def bench(spec: RunSpec, n_sites_list: Sequence[int], epochs: int = 6) -> tuple[list[TimingReport], float]:
    reports = [measure_speedup(replace(spec, n_sites=n), epochs) for n in n_sites_list]
    slope = fit_slope([r.n_sites for r in reports], [r.speedup for r in reports])
    if spec.results_dir is not None:
        results.write_rows(Path(spec.results_dir) / "bench.csv", results.BENCH_COLUMNS,
                           [r.row() for r in reports])
    return reports, slope
