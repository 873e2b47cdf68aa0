"""Command-line entry point.

Exit status: 0 on success, 1 on bad input or configuration, 2 on protocol or
runtime failures.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from . import harness, results
from .errors import DistreamError, ProtocolError
from .macro import MacroConfig
from .micro import EngineConfig
from .protocol import Coordinator, CoordinatorConfig, RemoteState, SessionError, iter_blocks, parse_address, run_remote

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _sites(text: str) -> list[int]:
    ids = _int_list(text)
    if "," not in text and len(ids) == 1:
        return list(range(ids[0]))
    return ids


def _engine_args(p):
    g = p.add_argument_group("micro-clustering")
    g.add_argument("--k", type=int, default=100, help="micro-clusters per site")
    g.add_argument("--boundary-factor", type=float, default=2.0)
    g.add_argument("--recency-horizon", type=float, default=math.inf)
    g.add_argument("--init-points", type=int, default=None, help="default 10*k")


def _macro_args(p):
    g = p.add_argument_group("macro-clustering")
    g.add_argument("--k-gc", type=int, default=5, help="global clusters")
    g.add_argument("--max-iters", type=int, default=100)
    g.add_argument("--tol", type=float, default=1e-9)


def _data_args(p, sites=True):
    g = p.add_argument_group("data")
    g.add_argument("--data", default="blobs:", help="CSV path or blobs:d=..,k=..,sigma=..,n=..,seed=..")
    g.add_argument("--partition", choices=["block", "round_robin"], default="block")
    g.add_argument("--epoch-points", type=int, default=1000, help="points per site per epoch")
    if sites:
        g.add_argument("--n-sites", type=int, default=2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="distream", description=__doc__.splitlines()[0])
    parser.add_argument("--config", type=Path, help="key=value file; command-line flags win")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("coordinator", help="run the coordinator server")
    p.add_argument("--listen", default="127.0.0.1:7300")
    p.add_argument("--sites", type=_sites, required=True, help="site count N, or comma-separated ids")
    p.add_argument("--epoch-points", type=int, default=None)
    p.add_argument("--mode", choices=["push", "pull"], default="push")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--results-dir", type=Path, default=Path("results"))
    p.add_argument("--epoch-timeout-ms", type=float, default=5000.0)
    p.add_argument("--notify-sites", action="store_true", help="send GLOBAL_READY after each epoch")
    _macro_args(p)

    p = sub.add_parser("site", help="run one remote site")
    p.add_argument("--connect", default="127.0.0.1:7300")
    p.add_argument("--site-id", type=int, required=True)
    p.add_argument("--mode", choices=["push", "pull"], default="push")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mic-delay-ms", type=float, default=0.0)
    _data_args(p)
    _engine_args(p)

    for name, text in (("simulate", "coordinator and N sites in one process over loopback"),
                       ("baseline", "centralized run on the same blocks")):
        p = sub.add_parser(name, help=text)
        if name == "simulate":
            p.add_argument("--mode", choices=["push", "pull"], default="push")
            p.add_argument("--epoch-timeout-ms", type=float, default=10000.0)
            p.add_argument("--mic-delay-ms", type=float, default=0.0)
        else:
            p.add_argument("--interleaved", action="store_true",
                           help="one engine over the merged stream instead of per-site engines")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--results-dir", type=Path, default=Path(f"results-{name}"))
        _data_args(p)
        _engine_args(p)
        _macro_args(p)

    p = sub.add_parser("compare", help="compare the global clusterings of two results dirs")
    p.add_argument("dir_a", type=Path)
    p.add_argument("dir_b", type=Path)

    p = sub.add_parser("bench", help="speedup sweep over the number of sites")
    p.add_argument("--n-sites-list", type=_int_list, default=[1, 2, 4, 8])
    p.add_argument("--mic-delay-ms", type=float, default=50.0)
    p.add_argument("--epochs", type=int, default=6, help="epochs per run; the first is warm-up")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--results-dir", type=Path, default=Path("results-bench"))
    _data_args(p, sites=False)
    _engine_args(p)
    _macro_args(p)
    return parser


def read_config(path: Path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    ns, _ = parser.parse_known_args(argv)
    if ns.config is None:
        return
    values = read_config(ns.config)
    sub = parser._subparsers._group_actions[0].choices[ns.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        if key not in actions:
            raise UsageError(f"{ns.config}: unknown option {key!r} for {ns.command}")
        if isinstance(actions[key], argparse._StoreTrueAction):
            defaults[key] = value.lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = value  # string defaults go through the action's type
    sub.set_defaults(**defaults)


def _engine_config(a) -> EngineConfig:
    return EngineConfig(k=a.k, boundary_factor=a.boundary_factor, recency_horizon=a.recency_horizon,
                        init_points=a.init_points, seed=a.seed)


def _macro_config(a) -> MacroConfig:
    return MacroConfig(k_gc=a.k_gc, max_iters=a.max_iters, tol=a.tol, seed=a.seed)


def _run_spec(a, mode: str) -> harness.RunSpec:
    return harness.RunSpec(
        data=a.data, n_sites=getattr(a, "n_sites", 1), window=a.epoch_points,
        engine_config=_engine_config(a),
        macro_config=_macro_config(a) if hasattr(a, "k_gc") else MacroConfig(), mode=mode,
        partition=a.partition, results_dir=getattr(a, "results_dir", None),
        mic_delay=getattr(a, "mic_delay_ms", 0.0) / 1e3,
        epoch_timeout=getattr(a, "epoch_timeout_ms", 10000.0) / 1e3,
    )


def _print_history(history) -> None:
    for gc in history:
        print(f"epoch {gc.epoch}: {len(gc.centroids)} global clusters, weights {list(gc.weights)}")


def cmd_coordinator(a) -> int:
    host, port = parse_address(a.listen)
    coord = Coordinator(CoordinatorConfig(
        expected_sites=frozenset(a.sites), mode=a.mode, macro_config=_macro_config(a),
        epoch_timeout=a.epoch_timeout_ms / 1e3, results_dir=a.results_dir,
        notify_sites=a.notify_sites, epoch_points=a.epoch_points,
    ), host, port)
    coord.on_global = lambda gc: print(f"epoch {gc.epoch}: weights {list(gc.weights)}", flush=True)
    print(f"listening on {coord.address[0]}:{coord.address[1]} for sites {sorted(a.sites)}", flush=True)
    try:
        coord.run()
    except KeyboardInterrupt:
        coord.stop()
    for e in coord.errors:
        print(f"error: {e}", file=sys.stderr)
    return EXIT_OK


def cmd_site(a) -> int:
    spec = _run_spec(a, a.mode)
    streams = harness.site_streams(spec)
    if not 0 <= a.site_id < len(streams):
        raise UsageError(f"--site-id {a.site_id} outside 0..{len(streams) - 1}")
    X, T = streams[a.site_id]
    n = run_remote(RemoteState(site_id=a.site_id, address=parse_address(a.connect),
                               blocks=iter_blocks(X, T, spec.window), engine_config=spec.engine_config,
                               mode=a.mode, mic_delay=spec.mic_delay))
    print(f"site {a.site_id}: {n} epochs")
    return EXIT_OK


def cmd_simulate(a) -> int:
    res = harness.run_distributed(_run_spec(a, a.mode))
    _print_history(res.history)
    for e in res.errors:
        print(f"error: {e}", file=sys.stderr)
    print(f"results in {a.results_dir}")
    return EXIT_OK


def cmd_baseline(a) -> int:
    spec = _run_spec(a, "interleaved" if a.interleaved else "centralized")
    res = harness.run(spec)
    if spec.mode == "interleaved":
        for gc in res.history:
            results.write_global(spec.results_dir, gc)
    _print_history(res.history)
    print(f"results in {a.results_dir}")
    return EXIT_OK


def cmd_compare(a) -> int:
    for d in (a.dir_a, a.dir_b):
        if not results.global_files(d):
            raise UsageError(f"{d}: no global-<epoch>.csv files")
    reports = harness.compare_dirs(a.dir_a, a.dir_b)
    for epoch, rep in reports.items():
        print(f"epoch {epoch}: {rep if rep is not None else 'missing in one run'}")
    same = all(r is not None and r.equal for r in reports.values())
    print("identical" if same else "different")
    return EXIT_OK


def cmd_bench(a) -> int:
    spec = _run_spec(a, "push")
    reports, slope = harness.bench(spec, a.n_sites_list, a.epochs)
    print("n_sites,t_centralized_ms,t_distributed_ms,speedup")
    for r in reports:
        row = r.row()
        print(",".join(str(row[c]) for c in results.BENCH_COLUMNS))
    print(f"fitted slope: speedup = {slope:.3f} * N")
    return EXIT_OK


COMMANDS = {
    "coordinator": cmd_coordinator, "site": cmd_site, "simulate": cmd_simulate,
    "baseline": cmd_baseline, "compare": cmd_compare, "bench": cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        a = parser.parse_args(argv)
    except UsageError as e:
        print(f"distream: error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[a.command](a)
    except FileNotFoundError as e:
        print(f"distream: error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (ProtocolError, SessionError, OSError) as e:
        print(f"distream: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (UsageError, DistreamError, ValueError) as e:
        print(f"distream: error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
