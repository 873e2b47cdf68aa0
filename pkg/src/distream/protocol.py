"""Coordinator and remote-site processes over a reliable byte stream (TCP).

Every message is framed as::

    length u32 | kind u8 | epoch u64 | payload

little-endian, where ``length`` counts the bytes after the length field.
Payloads of PUSH_LC and PULL_RESPONSE are wire-format clusterings.
"""
from __future__ import annotations

import enum
import logging
import math
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from . import results, wire
from .core import Clustering
from .errors import DistreamError, ProtocolError
from .macro import GlobalClustering, MacroConfig, macro_cluster
from .micro import EngineConfig, MicroEngine

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
_FRAME = struct.Struct("<IBQ")
_HELLO = struct.Struct("<IH")
_REPORT = struct.Struct("<dd")
MAX_FRAME = 1 << 30


class Kind(enum.IntEnum):
    HELLO = 1
    PUSH_LC = 2
    PULL_REQUEST = 3
    PULL_RESPONSE = 4
    GLOBAL_READY = 5
    BYE = 6
    ERROR = 7
    ACK = 8
    REPORT = 9


class ErrorCode(enum.IntEnum):
    VERSION = 1
    UNKNOWN_SITE = 2
    DUPLICATE_SESSION = 3
    NOT_READY = 4
    PROTOCOL = 5
    BAD_PAYLOAD = 6


_NEEDS_PAYLOAD = {Kind.PUSH_LC, Kind.PULL_RESPONSE, Kind.HELLO, Kind.ERROR, Kind.REPORT}
_NO_PAYLOAD = {Kind.PULL_REQUEST, Kind.GLOBAL_READY}


@dataclass(frozen=True)
class Message:
    kind: Kind
    epoch: int = 0
    payload: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind in _NEEDS_PAYLOAD and not self.payload:
            raise ProtocolError(f"{self.kind.name} requires a payload")
        if self.kind in _NO_PAYLOAD and self.payload:
            raise ProtocolError(f"{self.kind.name} carries no payload")

    def encode(self) -> bytes:
        return _FRAME.pack(9 + len(self.payload), self.kind, self.epoch) + self.payload


def hello(site_id: int, version: int = PROTOCOL_VERSION) -> Message:
    return Message(Kind.HELLO, 0, _HELLO.pack(site_id, version))


def parse_hello(msg: Message) -> tuple[int, int]:
    if len(msg.payload) != _HELLO.size:
        raise ProtocolError("malformed HELLO")
    return _HELLO.unpack(msg.payload)


def error(code: ErrorCode, text: str = "", epoch: int = 0) -> Message:
    return Message(Kind.ERROR, epoch, struct.pack("<H", code) + text.encode())


def parse_error(msg: Message) -> tuple[ErrorCode, str]:
    (code,) = struct.unpack_from("<H", msg.payload)
    return ErrorCode(code), msg.payload[2:].decode(errors="replace")


def report(epoch: int, t_mic_ms: float, t_transmit_ms: float) -> Message:
    return Message(Kind.REPORT, epoch, _REPORT.pack(t_mic_ms, t_transmit_ms))


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if not buf:
                return None
            raise ConnectionError("connection closed mid-frame")
        buf += chunk
    return bytes(buf)


class Session:
    """A framed connection. Sends are serialized; receives are single-reader."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._send_lock = threading.Lock()

    def send(self, msg: Message) -> int:
        data = msg.encode()
        with self._send_lock:
            self.sock.sendall(data)
        return len(data)

    def recv(self) -> Message | None:
        """Next message, or None on a clean close between frames."""
        head = _recv_exact(self.sock, _FRAME.size)
        if head is None:
            return None
        length, kind, epoch = _FRAME.unpack(head)
        if length < 9 or length > MAX_FRAME:
            raise ProtocolError(f"bad frame length {length}")
        payload = _recv_exact(self.sock, length - 9) if length > 9 else b""
        if payload is None:
            raise ConnectionError("connection closed mid-frame")
        try:
            return Message(Kind(kind), epoch, payload)
        except ValueError as e:
            raise ProtocolError(f"unknown message kind {kind}") from e

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return (host or "127.0.0.1", int(port))


# ---------------------------------------------------------------------------
# coordinator


@dataclass
class CoordinatorConfig:
    expected_sites: frozenset
    mode: str = "push"
    macro_config: MacroConfig = field(default_factory=MacroConfig)
    epoch_timeout: float = 5.0
    idle_timeout: float | None = None  # defaults to epoch_timeout
    results_dir: Path | None = None
    save_locals: bool = True
    notify_sites: bool = False
    epoch_points: int | None = None
    retry_delay: float = 0.02

    def __post_init__(self):
        self.expected_sites = frozenset(self.expected_sites)
        if not self.expected_sites:
            raise DistreamError("at least one expected site is required")
        if self.mode not in ("push", "pull"):
            raise DistreamError(f"unknown mode {self.mode!r}")
        if self.idle_timeout is None:
            self.idle_timeout = self.epoch_timeout


class Coordinator:
    """Collects one local clustering per site per epoch and macro-clusters the union.

    One handler thread per site session. The buffer is guarded by a single
    lock; the handler whose snapshot completes an epoch's barrier runs the
    macro phase for that epoch.
    """

    def __init__(self, config: CoordinatorConfig, host: str = "127.0.0.1", port: int = 0):
        self.config = config
        self._listener = socket.create_server((host, port))
        self._listener.settimeout(0.05)
        self.address = self._listener.getsockname()[:2]
        self._cond = threading.Condition()
        self._buffer: dict[int, dict[int, Clustering]] = {}
        self._deadlines: dict[int, float] = {}
        self._done: set[int] = set()
        self._failed: set[int] = set()
        self._active: dict[int, Session] = {}
        self._byed: set[int] = set()
        self._next_pull: dict[int, int] = {}
        self._handlers: list[threading.Thread] = []
        self._macro_running = 0
        self._ever_connected = False
        self._last_activity = time.monotonic()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.history: list[GlobalClustering] = []
        self.locals: dict[int, list[Clustering]] = {}
        self.errors: list[str] = []
        self.duplicates = 0
        self.stats = wire.WireStats()
        self.site_timings: dict[tuple[int, int], tuple[float, float]] = {}
        self.mac_ms: dict[int, float] = {}
        self.k_lists: dict[int, list[int]] = {}
        self.dims: dict[int, int] = {}
        self.on_global: Callable[[GlobalClustering], None] | None = None

    # -- lifecycle --------------------------------------------------------

    def start(self) -> "Coordinator":
        self._thread = threading.Thread(target=self.run, name="coordinator", daemon=True)
        self._thread.start()
        return self

    def join(self, timeout: float | None = None) -> list[GlobalClustering]:
        if self._thread is not None:
            self._thread.join(timeout)
        return self.history

    def stop(self) -> None:
        self._stop.set()
        with self._cond:
            self._cond.notify_all()

    def run(self) -> list[GlobalClustering]:
        acceptor = threading.Thread(target=self._accept_loop, name="accept", daemon=True)
        acceptor.start()
        try:
            self._supervise()
        finally:
            self._stop.set()
            acceptor.join()
            self._listener.close()
            with self._cond:
                sessions = list(self._active.values())
            for s in sessions:
                s.close()
            for h in list(self._handlers):
                h.join(timeout=2.0)
            self.history.sort(key=lambda g: g.epoch)
            if self.config.results_dir is not None:
                self.write_metrics(Path(self.config.results_dir) / "metrics.csv")
        return self.history

    def _supervise(self) -> None:
        cfg = self.config
        with self._cond:
            while not self._stop.is_set():
                now = time.monotonic()
                for epoch, deadline in list(self._deadlines.items()):
                    if now >= deadline:
                        have = sorted(self._buffer.pop(epoch, {}))
                        del self._deadlines[epoch]
                        self._failed.add(epoch)
                        self._log_error(f"epoch {epoch} timed out with sites {have} of "
                                        f"{sorted(cfg.expected_sites)}; no global clustering")
                pending = self._buffer or self._macro_running
                if not pending and self._ever_connected and not self._active:
                    if self._byed >= cfg.expected_sites:
                        break
                    if now - self._last_activity >= cfg.idle_timeout:
                        missing = sorted(cfg.expected_sites - self._byed)
                        log.info("no open sessions for %.2fs, stopping (never finished: %s)",
                                 cfg.idle_timeout, missing)
                        break
                wait = 0.05
                if self._deadlines:
                    wait = min(wait, max(0.0, min(self._deadlines.values()) - now))
                self._cond.wait(wait)

    def _log_error(self, text: str) -> None:
        log.error(text)
        self.errors.append(text)

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                sock, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            sock.settimeout(None)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            t = threading.Thread(target=self._serve, args=(Session(sock),), daemon=True)
            self._handlers.append(t)
            t.start()

    # -- handshake and buffer --------------------------------------------

    def handshake(self, site_id: int, version: int, session: Session | None = None) -> ErrorCode | None:
        """Register a session for ``site_id``; returns None if accepted, else the reason."""
        if version != PROTOCOL_VERSION:
            return ErrorCode.VERSION
        with self._cond:
            if site_id not in self.config.expected_sites:
                return ErrorCode.UNKNOWN_SITE
            if site_id in self._active:
                return ErrorCode.DUPLICATE_SESSION
            self._active[site_id] = session
            self._ever_connected = True
            self._last_activity = time.monotonic()
        return None

    def _release(self, site_id: int, bye: bool) -> None:
        with self._cond:
            self._active.pop(site_id, None)
            if bye:
                self._byed.add(site_id)
            self._last_activity = time.monotonic()
            self._cond.notify_all()

    def submit(self, site_id: int, lc: Clustering, nbytes: int) -> list[Clustering] | None:
        """Buffer a local clustering. Returns the full epoch union when this
        snapshot completes the barrier, else None."""
        epoch = lc.epoch
        with self._cond:
            self._last_activity = time.monotonic()
            if epoch in self._done or epoch in self._failed:
                self.duplicates += epoch in self._done
                log.info("discarding snapshot for closed epoch %d from site %d", epoch, site_id)
                return None
            buf = self._buffer.setdefault(epoch, {})
            if site_id in buf:
                self.duplicates += 1
                log.info("discarding duplicate snapshot for epoch %d from site %d", epoch, site_id)
                return None
            buf[site_id] = lc
            self.stats.record(site_id, epoch, nbytes)
            if self.config.epoch_points is not None and lc.total_points > self.config.epoch_points:
                log.warning("site %d epoch %d summarizes %d points, more than the window of %d",
                            site_id, epoch, lc.total_points, self.config.epoch_points)
            if len(buf) == 1:
                self._deadlines[epoch] = time.monotonic() + self.config.epoch_timeout
            if self.config.results_dir is not None and self.config.save_locals:
                path = results.local_path(self.config.results_dir, epoch, site_id)
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_bytes(wire.serialize(lc))
            if set(buf) != self.config.expected_sites:
                return None
            del self._buffer[epoch]
            self._deadlines.pop(epoch, None)
            self._done.add(epoch)
            self._macro_running += 1
            return [buf[s] for s in sorted(buf)]

    def _finish_epoch(self, locals_: list[Clustering]) -> None:
        epoch = locals_[0].epoch
        try:
            t0 = time.perf_counter()
            gc = macro_cluster(locals_, self.config.macro_config)
            t_mac = (time.perf_counter() - t0) * 1e3
        except DistreamError as e:
            with self._cond:
                self._done.discard(epoch)
                self._failed.add(epoch)
                self._macro_running -= 1
                self._log_error(f"epoch {epoch}: macro-clustering failed: {e}")
                self._cond.notify_all()
            return
        with self._cond:
            self.history.append(gc)
            self.locals[epoch] = locals_
            self.mac_ms[epoch] = t_mac
            self.k_lists[epoch] = [lc.k for lc in locals_]
            self.dims[epoch] = locals_[0].dim
            self.stats.set_prediction(epoch, self.k_lists[epoch], locals_[0].dim)
            sessions = list(self._active.values()) if self.config.notify_sites else []
        if self.config.results_dir is not None:
            results.write_global(self.config.results_dir, gc)
        for s in sessions:
            try:
                s.send(Message(Kind.GLOBAL_READY, epoch))
            except OSError:
                pass
        if self.on_global is not None:
            self.on_global(gc)
        with self._cond:
            self._macro_running -= 1
            self._cond.notify_all()

    # -- sessions ---------------------------------------------------------

    def _serve(self, session: Session) -> None:
        site_id = None
        bye = False
        try:
            msg = session.recv()
            if msg is None:
                return
            if msg.kind != Kind.HELLO:
                session.send(error(ErrorCode.PROTOCOL, "expected HELLO"))
                return
            site_id, version = parse_hello(msg)
            reason = self.handshake(site_id, version, session)
            if reason is not None:
                log.warning("rejecting site %d: %s", site_id, reason.name)
                session.send(error(reason, reason.name))
                site_id = None
                return
            session.send(Message(Kind.ACK, 0))
            if self.config.mode == "push":
                bye = self._serve_push(session, site_id)
            else:
                bye = self._serve_pull(session, site_id)
        except (OSError, ConnectionError, ProtocolError) as e:
            if not self._stop.is_set():
                log.warning("session for site %s ended: %s", site_id, e)
        finally:
            if site_id is not None:
                self._release(site_id, bye)
            session.close()

    def _accept_payload(self, session: Session, site_id: int, msg: Message):
        """Decode and buffer a snapshot. False if it was rejected, otherwise
        whatever :meth:`submit` returned."""
        try:
            lc = wire.deserialize(msg.payload)
        except DistreamError as e:
            session.send(error(ErrorCode.BAD_PAYLOAD, str(e), msg.epoch))
            return False
        if lc.site_id != site_id or lc.epoch != msg.epoch:
            session.send(error(ErrorCode.BAD_PAYLOAD, "site or epoch mismatch", msg.epoch))
            return False
        return self.submit(site_id, lc, len(msg.payload))

    def _record_report(self, site_id: int, msg: Message, t_transmit_ms: float | None = None) -> None:
        t_mic, t_tx = _REPORT.unpack(msg.payload)
        with self._cond:
            prev = self.site_timings.get((msg.epoch, site_id), (math.nan, math.nan))
            if t_transmit_ms is None:
                t_transmit_ms = t_tx if not math.isnan(t_tx) else prev[1]
            self.site_timings[(msg.epoch, site_id)] = (t_mic, t_transmit_ms)

    def _serve_push(self, session: Session, site_id: int) -> bool:
        while not self._stop.is_set():
            msg = session.recv()
            if msg is None:
                return False
            if msg.kind == Kind.PUSH_LC:
                union = self._accept_payload(session, site_id, msg)
                if union is False:
                    continue
                session.send(Message(Kind.ACK, msg.epoch))
                if union:
                    self._finish_epoch(union)
            elif msg.kind == Kind.REPORT:
                self._record_report(site_id, msg)
            elif msg.kind == Kind.BYE:
                return True
            else:
                session.send(error(ErrorCode.PROTOCOL, f"unexpected {msg.kind.name}", msg.epoch))
        return False

    def _serve_pull(self, session: Session, site_id: int) -> bool:
        with self._cond:
            epoch = self._next_pull.get(site_id, 0)
        while not self._stop.is_set():
            t0 = time.perf_counter()
            session.send(Message(Kind.PULL_REQUEST, epoch))
            while True:
                msg = session.recv()
                if msg is None:
                    return False
                if msg.kind == Kind.REPORT:
                    self._record_report(site_id, msg)
                    continue
                break
            if msg.kind == Kind.BYE:
                return True
            if msg.kind == Kind.ERROR:
                code, text = parse_error(msg)
                if code == ErrorCode.NOT_READY:
                    time.sleep(self.config.retry_delay)
                    continue
                raise ProtocolError(f"site {site_id} answered epoch {epoch} with {code.name}: {text}")
            if msg.kind != Kind.PULL_RESPONSE or msg.epoch != epoch:
                raise ProtocolError(f"expected PULL_RESPONSE for epoch {epoch}, got {msg.kind.name}/{msg.epoch}")
            t_tx = (time.perf_counter() - t0) * 1e3
            union = self._accept_payload(session, site_id, msg)
            with self._cond:
                prev = self.site_timings.get((epoch, site_id), (math.nan, math.nan))
                self.site_timings[(epoch, site_id)] = (prev[0], t_tx)
                epoch += 1
                self._next_pull[site_id] = epoch
            if union:
                self._finish_epoch(union)
        return False

    # -- output -----------------------------------------------------------

    def metric_rows(self) -> list[dict]:
        rows = []
        with self._cond:
            for (site, epoch), nbytes in sorted(self.stats.bytes_sent.items(), key=lambda kv: (kv[0][1], kv[0][0])):
                t_mic, t_tx = self.site_timings.get((epoch, site), (math.nan, math.nan))
                rows.append({
                    "epoch": epoch,
                    "site": site,
                    "bytes": nbytes,
                    "t_mic_ms": _fmt(t_mic),
                    "t_transmit_ms": _fmt(t_tx),
                    "t_mac_ms": _fmt(self.mac_ms.get(epoch, math.nan)),
                    "predicted_bits": _fmt(self.stats.predicted_bits.get(epoch, math.nan)),
                })
        return rows

    def write_metrics(self, path: Path) -> Path:
        return results.write_rows(path, results.METRICS_COLUMNS, self.metric_rows())


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else f"{x:.6g}"


# ---------------------------------------------------------------------------
# remote sites


Block = tuple[np.ndarray, np.ndarray]


@dataclass
class RemoteState:
    site_id: int
    address: tuple[str, int]
    blocks: Iterable[Block]
    engine_config: EngineConfig = field(default_factory=EngineConfig)
    mode: str = "push"
    mic_delay: float = 0.0
    retries: int = 3
    backoff: float = 0.1
    ack_timeout: float = 10.0
    global_ready: list[int] = field(default_factory=list)


class SessionError(DistreamError):
    """The remote site could not (re)establish its session."""


def build_local(site_id: int, epoch: int, X: np.ndarray, T: np.ndarray,
                config: EngineConfig, mic_delay: float = 0.0) -> tuple[Clustering, float]:
    """Run a fresh engine over one block. Returns the snapshot and t_mic in ms.

    t_mic is the engine's CPU time on the calling thread plus ``mic_delay``,
    so co-located sites sharing one machine do not inflate each other's cost.
    """
    c0 = time.thread_time()
    engine = MicroEngine(config, X.shape[1])
    engine.process_block(X, T)
    lc = engine.snapshot(site_id, epoch)
    cpu = time.thread_time() - c0
    if mic_delay > 0:
        time.sleep(mic_delay)
    return lc, (cpu + mic_delay) * 1e3


def connect(state: RemoteState) -> Session:
    """Connect and say HELLO, retrying with exponential backoff."""
    last: Exception | None = None
    for attempt in range(state.retries):
        if attempt:
            time.sleep(state.backoff * 2 ** (attempt - 1))
        try:
            sock = socket.create_connection(state.address, timeout=5.0)
        except OSError as e:
            last = e
            continue
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.settimeout(state.ack_timeout)
        session = Session(sock)
        try:
            session.send(hello(state.site_id))
            reply = session.recv()
        except OSError as e:
            session.close()
            last = e
            continue
        if reply is not None and reply.kind == Kind.ACK:
            return session
        session.close()
        if reply is not None and reply.kind == Kind.ERROR:
            code, text = parse_error(reply)
            last = SessionError(f"coordinator rejected site {state.site_id}: {code.name}")
            if code in (ErrorCode.VERSION, ErrorCode.UNKNOWN_SITE):
                raise last
        else:
            last = SessionError("no reply to HELLO")
    raise SessionError(f"site {state.site_id}: could not connect after {state.retries} attempts: {last}")


def _await_ack(session: Session, epoch: int, state: RemoteState) -> None:
    while True:
        msg = session.recv()
        if msg is None:
            raise ConnectionError("coordinator closed the session")
        if msg.kind == Kind.ACK and msg.epoch == epoch:
            return
        if msg.kind == Kind.GLOBAL_READY:
            state.global_ready.append(msg.epoch)
            continue
        if msg.kind == Kind.ERROR:
            code, text = parse_error(msg)
            raise ProtocolError(f"coordinator refused epoch {epoch}: {code.name} {text}")
        raise ProtocolError(f"unexpected {msg.kind.name} while waiting for ACK")


def remote_run_push(state: RemoteState) -> int:
    """Push one local clustering per block. Returns the number of epochs sent."""
    session = connect(state)
    epoch = -1
    try:
        for epoch, (X, T) in enumerate(state.blocks):
            lc, t_mic = build_local(state.site_id, epoch, X, T, state.engine_config, state.mic_delay)
            payload = wire.serialize(lc)
            failures = 0
            while True:
                try:
                    t0 = time.perf_counter()
                    session.send(Message(Kind.PUSH_LC, epoch, payload))
                    _await_ack(session, epoch, state)
                    t_tx = (time.perf_counter() - t0) * 1e3
                    session.send(report(epoch, t_mic, t_tx))
                    break
                except (OSError, ConnectionError) as e:
                    failures += 1
                    session.close()
                    if failures > state.retries:
                        raise SessionError(f"site {state.site_id}: giving up on epoch {epoch}: {e}") from e
                    log.warning("site %d: resending epoch %d after %s", state.site_id, epoch, e)
                    time.sleep(state.backoff * 2 ** (failures - 1))
                    session = connect(state)
        session.send(Message(Kind.BYE, epoch + 1))
    finally:
        session.close()
    return epoch + 1


def remote_run_pull(state: RemoteState) -> int:
    """Ingest blocks and answer PULL_REQUESTs. Returns the number of epochs served."""
    cond = threading.Condition()
    ready: dict[int, tuple[bytes, float]] = {}
    finished = threading.Event()
    status = {"ingested_all": False, "served": 0, "error": None}

    def serve(session: Session) -> None:
        session.sock.settimeout(None)
        while True:
            msg = session.recv()
            if msg is None:
                raise ConnectionError("coordinator closed the session")
            if msg.kind == Kind.GLOBAL_READY:
                state.global_ready.append(msg.epoch)
                continue
            if msg.kind != Kind.PULL_REQUEST:
                session.send(error(ErrorCode.PROTOCOL, f"unexpected {msg.kind.name}", msg.epoch))
                continue
            e = msg.epoch
            with cond:
                entry = ready.get(e)
                ingesting = len(ready)
                done = status["ingested_all"]
            if entry is not None:
                payload, t_mic = entry
                session.send(Message(Kind.PULL_RESPONSE, e, payload))
                session.send(report(e, t_mic, math.nan))
                status["served"] = max(status["served"], e + 1)
            elif e == ingesting and done:
                session.send(Message(Kind.BYE, e))
                return
            elif e == ingesting:
                session.send(error(ErrorCode.NOT_READY, "block not ingested yet", e))
            else:
                session.send(error(ErrorCode.PROTOCOL, f"epoch {e} requested while ingesting {ingesting}", e))

    def serve_loop() -> None:
        session = None
        failures = 0
        try:
            while True:
                session = connect(state)
                try:
                    serve(session)
                    return
                except (OSError, ConnectionError) as e:
                    failures += 1
                    session.close()
                    if failures > state.retries:
                        raise SessionError(f"site {state.site_id}: session lost: {e}") from e
                    time.sleep(state.backoff * 2 ** (failures - 1))
        except Exception as e:  # surfaced to the caller below
            status["error"] = e
        finally:
            if session is not None:
                session.close()
            finished.set()

    server = threading.Thread(target=serve_loop, name=f"site-{state.site_id}-pull", daemon=True)
    server.start()
    for epoch, (X, T) in enumerate(state.blocks):
        lc, t_mic = build_local(state.site_id, epoch, X, T, state.engine_config, state.mic_delay)
        with cond:
            ready[epoch] = (wire.serialize(lc), t_mic)
        if finished.is_set():
            break
    with cond:
        status["ingested_all"] = True
    server.join()
    if status["error"] is not None:
        raise status["error"]
    return status["served"]


def run_remote(state: RemoteState) -> int:
    if state.mode == "push":
        return remote_run_push(state)
    if state.mode == "pull":
        return remote_run_pull(state)
    raise DistreamError(f"unknown mode {state.mode!r}")


def iter_blocks(X: np.ndarray, T: np.ndarray, m: int) -> Iterator[Block]:
    """Chop a site's stream into consecutive blocks of ``m`` points."""
    for start in range(0, len(X), m):
        yield X[start:start + m], T[start:start + m]
