"""Server tier: the request gate (controller) and the only component that
touches the data store (model).

The controller owns the model; nothing else ever holds a reference to it,
so every store access provably passes through the token check first.  The
TCP front end speaks length-prefixed XML frames (see :mod:`spim.wire`),
one request/response pair per frame, pipelining allowed.  A frame whose
payload fails to decode is answered with an ERROR/MALFORMED response and
the connection stays open; a framing violation (truncated or oversize
frame) kills the connection, since a length-prefixed stream cannot resync.
"""

from __future__ import annotations

import socket
import socketserver
import struct
import threading

from .errors import ConfigError, NotFoundError
from .instrument import EventLog
from .storage import DEFAULT_CACHE_CAPACITY, DataStore, load_store_csv
from .wire import (
    DEFAULT_MAX_FRAME,
    ErrorCode,
    MalformedMessageError,
    OversizeFrameError,
    RequestEnvelope,
    ResponseEnvelope,
    Source,
    decode_request,
    encode_response,
    error_response,
    frame,
    ok_response,
)

_POLL_SECONDS = 0.2  # how often blocked connection reads check for shutdown


class Counters:
    """Named integer counters with atomic increments."""

    names: tuple[str, ...] = ()

    def __init__(self):
        self._lock = threading.Lock()
        for name in self.names:
            setattr(self, name, 0)

    def inc(self, name: str, amount: int = 1) -> None:
        if name not in self.names:
            raise AttributeError(f"unknown counter {name!r}")
        with self._lock:
            setattr(self, name, getattr(self, name) + amount)

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return {name: getattr(self, name) for name in self.names}


class TierCounters(Counters):
    """Structural accounting for the server tier.

    ``dc_reads_attempted_by_sm`` stays 0 forever in spim mode: the model
    is constructed without any cache reference, so there is no code path
    that could advance it.  The duplicated-model baseline does advance it.
    """

    names = ("sc_requests", "sm_invocations", "ds_scans", "dc_reads_attempted_by_sm")


class ServerModel:
    """SM: fetches from the data store on behalf of the controller.

    Constructed privately by :class:`ServerController`; hold no other
    references to instances of this class.
    """

    def __init__(self, store: DataStore, counters: TierCounters):
        self._store = store
        self._counters = counters

    def fetch(self, q) -> list:
        self._counters.inc("sm_invocations")
        scans_before = self._store.scans
        try:
            return self._store.scan(q)
        finally:
            self._counters.inc("ds_scans", self._store.scans - scans_before)


class ServerController:
    """SC: the sole gateway to the model.

    Checks the request token against the accepted set before the model is
    ever invoked; an unauthorized request is answered without touching it.
    """

    def __init__(self, store: DataStore, tokens, counters: TierCounters | None = None):
        tokens = frozenset(tokens)
        if not tokens:
            raise ConfigError("accepted token set must be non-empty")
        self.tokens = tokens
        self.counters = counters if counters is not None else TierCounters()
        self._model = ServerModel(store, self.counters)

    def handle(self, req: RequestEnvelope) -> ResponseEnvelope:
        self.counters.inc("sc_requests")
        if req.token not in self.tokens:
            return error_response(req.request_id, ErrorCode.UNAUTHORIZED)
        try:
            records = self._model.fetch(req.query)
        except NotFoundError:
            return error_response(req.request_id, ErrorCode.NOT_FOUND)
        return ok_response(req.request_id, Source.STORE, records)


# --- TCP front end ------------------------------------------------------


class _FrameConnection:
    """Reads frames off a socket, polling a shutdown flag while blocked."""

    def __init__(self, sock: socket.socket, stop: threading.Event, max_frame: int):
        sock.settimeout(_POLL_SECONDS)
        self._sock = sock
        self._stop = stop
        self._max_frame = max_frame

    def _recv_exact(self, n: int, at_boundary: bool) -> bytes | None:
        buf = bytearray()
        while len(buf) < n:
            if self._stop.is_set() and not buf and at_boundary:
                return None
            try:
                chunk = self._sock.recv(n - len(buf))
            except socket.timeout:
                continue
            except OSError:
                return None
            if not chunk:
                return None  # peer closed; partial frames are abandoned
            buf.extend(chunk)
        return bytes(buf)

    def read_frame(self) -> bytes | None:
        header = self._recv_exact(4, at_boundary=True)
        if header is None:
            return None
        (length,) = struct.unpack(">I", header)
        if length > self._max_frame:
            raise OversizeFrameError(f"frame of {length} bytes refused")
        return self._recv_exact(length, at_boundary=False)

    def send(self, data: bytes) -> None:
        self._sock.sendall(data)


class _SpimTCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = False
    block_on_close = True  # server_close() drains in-flight handlers

    def __init__(self, address, responder, stop_event, max_frame):
        self.responder = responder
        self.stop_event = stop_event
        self.max_frame = max_frame
        super().__init__(address, _ConnectionHandler)


class _ConnectionHandler(socketserver.BaseRequestHandler):
    def handle(self):
        conn = _FrameConnection(self.request, self.server.stop_event,
                                self.server.max_frame)
        while True:
            try:
                payload = conn.read_frame()
            except OversizeFrameError:
                return
            if payload is None:
                return
            try:
                conn.send(self.server.responder(payload))
            except OSError:
                return


def respond_to_frame(controller, payload: bytes) -> bytes:
    """Decode one frame payload, dispatch it, and frame the response."""
    try:
        req = decode_request(payload)
    except MalformedMessageError:
        resp = error_response("", ErrorCode.MALFORMED)
    else:
        resp = controller.handle(req)
    return frame(encode_response(resp))


class ServerHandle:
    """A running server; stop() refuses new connections and drains."""

    def __init__(self, servers: list[_SpimTCPServer], threads: list[threading.Thread],
                 stop_event: threading.Event, controller, store: DataStore):
        self._servers = servers
        self._threads = threads
        self._stop = stop_event
        self.controller = controller
        self.store = store
        self.address = servers[0].server_address
        self.replica_address = servers[1].server_address if len(servers) > 1 else None

    @property
    def counters(self):
        return self.controller.counters

    def stop(self) -> None:
        if self._stop.is_set():
            return
        self._stop.set()
        for server in self._servers:
            server.shutdown()
        for thread in self._threads:
            thread.join()
        for server in self._servers:
            server.server_close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def serve(config, store: DataStore | None = None) -> ServerHandle:
    """Start serving per the config and return a handle once bound.

    ``config`` is a :class:`spim.config.ServerConfig`.  The store may be
    passed preloaded (the benchmark does); otherwise it is bulk-loaded
    from ``config.store_path``.  Startup failures (unreadable store, port
    in use) raise before any handle exists.
    """
    log = EventLog() if config.instrumentation else None
    if store is None:
        store = load_store_csv(config.store_path, log=log)
    elif log is not None and store.log is None:
        store.log = log

    if config.mode == "spim":
        controller = ServerController(store, config.tokens)
    elif config.mode == "dmvc":
        from .dmvc import DmvcServerController

        controller = DmvcServerController(
            store, config.tokens, cache_capacity=config.cache_capacity, cache_log=log)
    else:
        raise ConfigError(f"unknown mode {config.mode!r}")

    stop_event = threading.Event()
    servers = [_SpimTCPServer((config.host, config.port),
                              lambda p: respond_to_frame(controller, p),
                              stop_event, config.max_frame)]
    if config.mode == "dmvc":
        # Model-to-model channel for the duplicated baseline: raw store
        # scans, no token gate, no cache, bypassing the controller.
        from .dmvc import respond_to_replica_frame

        replica_port = config.replica_port
        if replica_port is None:
            replica_port = servers[0].server_address[1] + 1
        servers.append(_SpimTCPServer((config.host, replica_port),
                                      lambda p: respond_to_replica_frame(store, p),
                                      stop_event, config.max_frame))

    threads = []
    for server in servers:
        t = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.1},
                             daemon=True)
        t.start()
        threads.append(t)
    return ServerHandle(servers, threads, stop_event, controller, store)
