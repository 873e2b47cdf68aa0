"""End-to-end acceptance checks. Each test prints one PASS/FAIL line.

Run just these with ``pytest -m acceptance -s``.
"""
import math
import random
import socket
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import random_clustering
from distream import results, wire
from distream.core import Point, cf_from_points, cf_merge, mc_from_points, mc_merge
from distream.harness import (RunSpec, bench, compare_clusterings, load_data, point_ssq, run_centralized_baseline,
                              run_distributed, run_interleaved_baseline, site_blocks)
from distream.macro import MacroConfig, macro_cluster, nearest_ssq
from distream.micro import EngineConfig
from distream.protocol import (Coordinator, CoordinatorConfig, Kind, Message, RemoteState, Session, build_local,
                               hello, iter_blocks, run_remote)

pytestmark = pytest.mark.acceptance

BLOBS = RunSpec(data="blobs:d=2,k=4,sigma=0.05,n=8000,seed=0", n_sites=2, window=1000,
                engine_config=EngineConfig(k=20, seed=0), macro_config=MacroConfig(k_gc=4, seed=0))


@pytest.fixture
def verdict(capsys):
    def report(name, checks, elapsed, limit, detail=""):
        ok = all(checks.values()) and elapsed < limit
        failed = [k for k, v in checks.items() if not v] + ([f"runtime>{limit}s"] if elapsed >= limit else [])
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail} ({elapsed:.2f}s, limit {limit}s)"
        if failed:
            line += " failed: " + ", ".join(failed)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return report


def test_ac1_exact_equivalence(verdict, tmp_path):
    t0 = time.perf_counter()
    cent = run_centralized_baseline(BLOBS)
    want = [g.to_bytes() for g in cent.history]
    checks = {"epochs": len(want) == 4}
    for mode in ("push", "pull"):
        dist = run_distributed(replace(BLOBS, mode=mode, results_dir=tmp_path / mode))
        checks[f"{mode} bytes"] = [g.to_bytes() for g in dist.history] == want
        checks[f"{mode} report"] = all(compare_clusterings(a, b).equal for a, b in zip(dist.history, cent.history))
    verdict("AC1 distributed == centralized (push, pull)", checks, time.perf_counter() - t0, 10,
            f"{len(want)} epochs compared byte-for-byte")


def _close(got, want, scale, rtol=1e-9):
    return all(abs(g - w) <= rtol * max(s, 1e-300) for g, w, s in zip(got, want, scale))


def test_ac2_additivity(verdict):
    t0 = time.perf_counter()
    rng = random.Random(2024)
    bad_union = bad_assoc = bad_comm = 0
    for _ in range(1000):
        d = rng.randint(1, 6)
        sets = [[Point([rng.uniform(-1e3, 1e3) for _ in range(d)], rng.uniform(0, 1e4))
                 for _ in range(rng.randint(1, 15))] for _ in range(3)]
        A, B, C = sets
        # brute force over the concatenation; error is judged against the sum of magnitudes
        union = A + B + C
        ls = [math.fsum(p.coords[i] for p in union) for i in range(d)]
        ss = [math.fsum(p.coords[i] ** 2 for p in union) for i in range(d)]
        mag = [math.fsum(abs(p.coords[i]) for p in union) for i in range(d)]
        cf = cf_merge(cf_merge(cf_from_points(A), cf_from_points(B)), cf_from_points(C))
        bad_union += not (cf.n == len(union) and _close(cf.ls, ls, mag) and _close(cf.ss, ss, ss))

        ma, mb, mc = (mc_from_points(s, id=i) for i, s in enumerate(sets))
        left, right = mc_merge(mc_merge(ma, mb), mc), mc_merge(ma, mc_merge(mb, mc))
        lt = math.fsum(p.timestamp for p in union)
        st = math.fsum(p.timestamp ** 2 for p in union)
        for m in (left, right):
            bad_union += not (m.n == len(union) and _close(m.cf1x, ls, mag) and _close(m.cf2x, ss, ss)
                              and _close([m.cf1t, m.cf2t], [lt, st], [lt, st]))
        bad_assoc += not (_close(left.cf1x, right.cf1x, mag) and _close(left.cf2x, right.cf2x, ss)
                          and _close([left.cf1t, left.cf2t], [right.cf1t, right.cf2t], [lt, st]))
        ab, ba = mc_merge(ma, mb), mc_merge(mb, ma)
        bad_comm += ab.numeric_fields() != ba.numeric_fields()
    checks = {"union": bad_union == 0, "associativity": bad_assoc == 0, "commutativity": bad_comm == 0}
    verdict("AC2 additivity", checks, time.perf_counter() - t0, 5,
            f"1000 trials, mismatches union={bad_union} assoc={bad_assoc} comm={bad_comm}")


def test_ac3_wire_round_trip(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    bad_eq = bad_len = 0
    for _ in range(1000):
        c = random_clustering(rng)
        data = wire.serialize(c)
        bad_len += len(data) != 24 + c.k * (32 + 16 * c.dim)
        bad_eq += wire.deserialize(data) != c
    verdict("AC3 wire round-trip", {"equality": bad_eq == 0, "size formula": bad_len == 0},
            time.perf_counter() - t0, 5, f"1000 clusterings, mismatches eq={bad_eq} len={bad_len}")


def test_ac4_size_invariance(verdict):
    t0 = time.perf_counter()
    sizes = {}
    for w in (1000, 2000, 3000, 4000, 5000):
        spec = RunSpec(data="blobs:d=34,k=8,sigma=0.05,seed=4", n_sites=1, window=w, points=w,
                       engine_config=EngineConfig(k=100), macro_config=MacroConfig(k_gc=5))
        res = run_distributed(spec)
        sizes[w] = {int(r["bytes"]) for r in res.metrics}
    distinct = set().union(*sizes.values())
    checks = {"one size": len(distinct) == 1, "formula": distinct == {wire.frame_size(34, 100)}}
    verdict("AC4 size invariance", checks, time.perf_counter() - t0, 30,
            f"K=100 d=34 windows 1000..5000 -> bytes {sorted(distinct)}")


def test_ac5_cost_predictor(verdict, tmp_path):
    t0 = time.perf_counter()
    rng = random.Random(5)
    mismatches = 0
    for _ in range(100):
        n, k = rng.randint(1, 64), rng.randint(1, 5000)
        cf = rng.randint(1, 1 << 20)
        closed = n * math.log2(k) + ((n + 1) * n / 2) * math.log2(cf)
        mismatches += wire.predicted_cost_bits([k] * n, cf) != closed
    res = run_distributed(replace(BLOBS, results_dir=tmp_path))
    rows = results.read_rows(tmp_path / "metrics.csv")
    expected_bits = wire.predicted_cost_bits([20, 20], wire.cf_size_bits(2))
    checks = {
        "closed form": mismatches == 0,
        "metrics rows": len(rows) == 2 * len(res.history),
        "bytes column": all(int(r["bytes"]) == wire.frame_size(2, 20) for r in rows),
        "predicted column": all(math.isclose(float(r["predicted_bits"]), expected_bits, rel_tol=1e-5) for r in rows),
    }
    verdict("AC5 cost predictor", checks, time.perf_counter() - t0, 30,
            f"100 cases, {mismatches} mismatches; measured {rows[0]['bytes']} B vs predicted "
            f"{rows[0]['predicted_bits']} bits per epoch")


def test_ac6_speedup(verdict):
    t0 = time.perf_counter()
    spec = RunSpec(data="blobs:d=2,k=4,sigma=0.05,seed=6", window=200, engine_config=EngineConfig(k=10),
                   macro_config=MacroConfig(k_gc=4), mic_delay=0.05)
    reports, slope = bench(spec, [1, 2, 4, 8], epochs=6)
    speedups = [r.speedup for r in reports]

    big = RunSpec(data="blobs:d=2,k=4,sigma=0.05,seed=6", n_sites=1, window=10_000, points=10_000,
                  engine_config=EngineConfig(k=100), macro_config=MacroConfig(k_gc=5))
    res = run_distributed(big)
    t_mic, t_mac = res.t_mic[0][0], res.t_mac[0]
    checks = {"slope in [0.8, 1.1]": 0.8 <= slope <= 1.1, "t_mic > 10 t_mac": t_mic > 10 * t_mac}
    verdict("AC6 speedup", checks, time.perf_counter() - t0, 120,
            f"speedups {[round(s, 2) for s in speedups]}, slope {slope:.3f}; "
            f"10k points K=100: t_mic {t_mic:.1f} ms vs t_mac {t_mac:.2f} ms")


def test_ac7_barrier_and_duplicates(verdict):
    t0 = time.perf_counter()
    engine = EngineConfig(k=10)
    X, T = load_data("blobs:d=2,k=4,n=1200,seed=7")

    # three expected sites, site 2 never shows up
    coord = Coordinator(CoordinatorConfig(expected_sites={0, 1, 2}, macro_config=MacroConfig(k_gc=3),
                                          epoch_timeout=1.0)).start()
    for s in (0, 1):
        run_remote(RemoteState(s, coord.address, iter_blocks(X[s::3], T[s::3], 400), engine))
    coord.join(10)
    silent_exited = coord._thread is not None and not coord._thread.is_alive()
    silent = {"no GC": coord.history == [], "error logged": any("timed out" in e for e in coord.errors),
              "clean exit": silent_exited}

    # duplicated push for (site 0, epoch 0)
    coord = Coordinator(CoordinatorConfig(expected_sites={0, 1}, macro_config=MacroConfig(k_gc=3),
                                          epoch_timeout=5.0)).start()
    lcs = [build_local(s, 0, X[s::2][:400], T[s::2][:400], engine)[0] for s in (0, 1)]
    sessions = []
    for s in (0, 1):
        sess = Session(socket.create_connection(coord.address, timeout=5))
        sess.send(hello(s))
        assert sess.recv().kind == Kind.ACK
        sessions.append(sess)
    acks = []
    for sess, lc in ((sessions[0], lcs[0]), (sessions[0], lcs[0]), (sessions[1], lcs[1])):
        sess.send(Message(Kind.PUSH_LC, 0, wire.serialize(lc)))
        acks.append(sess.recv().kind)
    for sess in sessions:
        sess.send(Message(Kind.BYE, 1))
        sess.close()
    history = coord.join(10)
    expected = macro_cluster(lcs, MacroConfig(k_gc=3))
    dup = {"all acked": acks == [Kind.ACK] * 3, "one GC": len(history) == 1,
           "one snapshot per site": len(coord.locals.get(0, [])) == 2 and coord.duplicates == 1,
           "GC unchanged": bool(history) and history[0].to_bytes() == expected.to_bytes()}
    verdict("AC7 barrier and de-duplication", {**silent, **dup}, time.perf_counter() - t0, 15,
            f"silent site: {'epoch timeout logged' if silent['error logged'] else 'nothing logged'}; "
            f"duplicates discarded: {coord.duplicates}")


def test_ac8_interleaved_quality(verdict):
    t0 = time.perf_counter()
    blocks = site_blocks(BLOBS)
    dist = run_distributed(BLOBS, blocks)
    inter = run_interleaved_baseline(BLOBS, blocks)
    worst_mc = worst_pt = 0.0
    for gc in dist.history:
        other = inter.by_epoch()[gc.epoch]
        locals_ = dist.locals[gc.epoch]
        worst_mc = max(worst_mc, nearest_ssq(gc.centroids, locals_) / nearest_ssq(other.centroids, locals_))
        Xe = np.concatenate([b[gc.epoch][0] for b in blocks])
        worst_pt = max(worst_pt, point_ssq(gc.centroids, Xe) / point_ssq(other.centroids, Xe))
    checks = {"epochs": len(dist.history) == len(inter.history) == 4,
              "weighted SSQ ratio <= 1.05": worst_mc <= 1.05, "point SSQ ratio <= 1.05": worst_pt <= 1.05}
    verdict("AC8 interleaved-baseline quality", checks, time.perf_counter() - t0, 30,
            f"worst ratio distributed/interleaved: weighted {worst_mc:.4f}, raw points {worst_pt:.4f}")
