"""Reading and writing the CSV files found in a results directory."""
from __future__ import annotations

import csv
import re
from pathlib import Path
from typing import Iterable

from .macro import GlobalClustering

METRICS_COLUMNS = ["epoch", "site", "bytes", "t_mic_ms", "t_transmit_ms", "t_mac_ms", "predicted_bits"]
BENCH_COLUMNS = ["n_sites", "t_centralized_ms", "t_distributed_ms", "speedup"]

_GLOBAL_RE = re.compile(r"global-(\d+)\.csv$")


def write_global(results_dir: Path, gc: GlobalClustering) -> Path:
    results_dir = Path(results_dir)
    results_dir.mkdir(parents=True, exist_ok=True)
    path = results_dir / f"global-{gc.epoch}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "weight"] + [f"x{i}" for i in range(gc.dim)])
        for i, (c, weight) in enumerate(zip(gc.centroids, gc.weights)):
            # repr round-trips a float64 exactly
            w.writerow([i, weight] + [repr(v) for v in c])
    return path


def read_global(path: Path) -> tuple[list[tuple[float, ...]], list[int]]:
    centroids, weights = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            weights.append(int(row[1]))
            centroids.append(tuple(float(v) for v in row[2:]))
    return centroids, weights


def global_files(results_dir: Path) -> dict[int, Path]:
    out = {}
    for p in Path(results_dir).glob("global-*.csv"):
        m = _GLOBAL_RE.search(p.name)
        if m:
            out[int(m.group(1))] = p
    return dict(sorted(out.items()))


def local_path(results_dir: Path, epoch: int, site: int) -> Path:
    return Path(results_dir) / f"local-{epoch}-{site}.dstc"


def write_rows(path: Path, columns: list[str], rows: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)
    return path


def read_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
