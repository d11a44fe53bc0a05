"""Client tier: the client controller (sole entry point for views), the
client model (sole owner of the data cache), and the transaction engine.

Every transaction runs the same 15-step request/response protocol and
records which steps completed:

    S01  request from the view reaches the controller
    S02  controller passes the request to the model
    S03  model consults the cache
    S04  model's answer (result, or miss) returns to the controller
    S05  controller asks the model for the result document   (hit path)
    S06  model serializes and hands the document back        (hit path)
    S07  view delivery, end of transaction                   (hit path)
    S08  controller forwards the request to the server gate  (miss path)
    S09  server gate invokes the server model
    S10  server model fetches from the data store
    S11  response arrives back at the controller
    S12  controller asks the model to cache and serialize the result
    S13  model stores the result and hands the document back
    S14  controller passes the document out to the view
    S15  view delivery, end of transaction

A cache hit therefore traces S01..S07 exactly, a served miss traces
S01-S04 then S08..S15 exactly, and a failed transaction traces the steps
that completed plus the step it died at.
"""

from __future__ import annotations

import os
import socket
from dataclasses import dataclass, replace
from enum import Enum

from .config import ClientConfig
from .errors import (
    ConfigError,
    CacheLockedError,
    ConnectionFailedError,
    MalformedMessageError,
    TruncatedFrameError,
)
from .instrument import RTT, EventLog
from .storage import DEFAULT_CACHE_CAPACITY, DataCache
from .wire import (
    DEFAULT_MAX_FRAME,
    ErrorCode,
    Query,
    RequestEnvelope,
    ResponseEnvelope,
    Status,
    decode_response,
    deframe,
    encode_request,
    encode_response,
    frame,
)

HIT_STEPS = ("S01", "S02", "S03", "S04", "S05", "S06", "S07")
MISS_STEPS = ("S01", "S02", "S03", "S04", "S08", "S09", "S10",
              "S11", "S12", "S13", "S14", "S15")


class Outcome(Enum):
    HIT = "HIT"
    MISS_SERVED = "MISS_SERVED"
    FAILED = "FAILED"


@dataclass(frozen=True)
class StepTrace:
    """Audit record of one transaction: which steps completed, and where
    a failed transaction stopped."""

    transaction_id: str
    steps: tuple[str, ...]
    outcome: Outcome
    failed_at: str | None = None


class ClientModel:
    """CM: owns the data cache; nothing else reads or writes it.

    Has no connection to the server and no path to the data store, which
    is what keeps ``ds_reads_attempted_by_cm`` pinned at zero.
    """

    def __init__(self, cache: DataCache):
        self._cache = cache
        self.ds_reads_attempted_by_cm = 0

    @property
    def cache(self) -> DataCache:
        return self._cache

    def lookup(self, q: Query) -> ResponseEnvelope | None:
        return self._cache.lookup(q)

    def store(self, q: Query, payload: ResponseEnvelope) -> None:
        self._cache.store(q, payload)

    def to_xml(self, payload: ResponseEnvelope) -> bytes:
        return encode_response(payload)


class TcpTransport:
    """Framed XML over one TCP connection, reused across calls."""

    def __init__(self, address: tuple[str, int], timeout: float = 30.0,
                 max_frame: int = DEFAULT_MAX_FRAME, log: EventLog | None = None):
        self.address = address
        self.timeout = timeout
        self.max_frame = max_frame
        self.log = log
        self._sock: socket.socket | None = None
        self._stream = None

    def _connect(self):
        try:
            self._sock = socket.create_connection(self.address, timeout=self.timeout)
            self._stream = self._sock.makefile("rb")
        except OSError as exc:
            self._sock = None
            self._stream = None
            raise ConnectionFailedError(
                f"cannot connect to {self.address[0]}:{self.address[1]}: {exc}") from None

    def roundtrip(self, req: RequestEnvelope) -> ResponseEnvelope:
        if self._sock is None:
            self._connect()
        try:
            self._sock.sendall(frame(encode_request(req)))
        except OSError as exc:
            self.close()
            raise ConnectionFailedError(f"send failed: {exc}") from None
        try:
            payload = deframe(self._stream, max_frame=self.max_frame)
        except socket.timeout:
            self.close()
            raise ConnectionFailedError("timed out waiting for response") from None
        except TruncatedFrameError:
            self.close()
            raise
        if self.log is not None:
            self.log.record(RTT)
        return decode_response(payload)

    def close(self) -> None:
        if self._stream is not None:
            try:
                self._stream.close()
            except OSError:
                pass
            self._stream = None
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None


class DirectTransport:
    """In-process loopback used by the deterministic benchmark and tests.

    Runs the full codec in both directions so the bytes-on-the-wire
    behavior is identical to TCP, minus the sockets.
    """

    def __init__(self, controller, log: EventLog | None = None):
        self._controller = controller
        self.log = log

    def roundtrip(self, req: RequestEnvelope) -> ResponseEnvelope:
        from .server import respond_to_frame

        out = respond_to_frame(self._controller, encode_request(req))
        if self.log is not None:
            self.log.record(RTT)
        return decode_response(deframe(out))

    def close(self) -> None:
        pass


# Where in the protocol each server-signaled error stops a transaction.
_FAIL_STEP = {
    ErrorCode.UNAUTHORIZED: "S09",  # gate refused to invoke the model
    ErrorCode.NOT_FOUND: "S10",     # store had no matching data
    ErrorCode.MALFORMED: "S09",
}
_COMPLETED_BEFORE_FAIL = {
    "S09": ("S01", "S02", "S03", "S04", "S08"),
    "S10": ("S01", "S02", "S03", "S04", "S08", "S09"),
}


class SpimClient:
    """CC plus its model: the one object views talk to.

    A handle serializes its own transactions; run several independent
    handles for concurrency.  When constructed with a cache path it holds
    an advisory lock on the cache file for its lifetime and persists the
    cache (and cumulative usage counters) on close.
    """

    def __init__(self, transport, cache: DataCache | None = None,
                 client_id: str = "client", token: str = "",
                 cache_path: str | None = None,
                 cache_capacity: int | None = None,
                 log: EventLog | None = None):
        self.transport = transport
        self.client_id = client_id
        self.token = token
        self.cache_path = cache_path
        self._lock_fh = None
        if cache_path:
            self._acquire_lock(cache_path)
        if cache is None:
            capacity = cache_capacity or DEFAULT_CACHE_CAPACITY
            if cache_path and os.path.exists(cache_path):
                cache = DataCache.load(cache_path, capacity=capacity, log=log)
            else:
                cache = DataCache(capacity=capacity, log=log)
        self._cm = ClientModel(cache)
        self._seq = 0
        self.last_trace: StepTrace | None = None
        self.counters = dict(transactions=0, hits=0, misses=0, failures=0)
        if cache_path:
            for key, value in load_stats(cache_path).items():
                if key in self.counters:
                    self.counters[key] = value

    # -- lifecycle ---------------------------------------------------

    def _acquire_lock(self, cache_path: str) -> None:
        import fcntl

        lock_path = cache_path + ".lock"
        fh = open(lock_path, "a+")
        try:
            fcntl.flock(fh.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            fh.close()
            raise CacheLockedError(
                f"cache {cache_path} is owned by another client handle") from None
        self._lock_fh = fh

    def close(self) -> None:
        if self.cache_path:
            self._cm.cache.save(self.cache_path)
            save_stats(self.cache_path, self.counters)
        if self._lock_fh is not None:
            import fcntl

            fcntl.flock(self._lock_fh.fileno(), fcntl.LOCK_UN)
            self._lock_fh.close()
            self._lock_fh = None
        self.transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- the transaction engine ---------------------------------------

    @property
    def model(self) -> ClientModel:
        return self._cm

    def _next_txn(self) -> str:
        self._seq += 1
        return f"{self.client_id}-{self._seq}"

    def request(self, q: Query) -> tuple[ResponseEnvelope, StepTrace]:
        """Run one transaction; returns the result envelope and its trace.

        Server-signaled errors (NOT_FOUND, UNAUTHORIZED) come back as
        ERROR envelopes with a FAILED trace; transport failures raise,
        with the partial trace attached to the exception.
        """
        txn = self._next_txn()
        self.counters["transactions"] += 1
        steps = ["S01", "S02"]
        cached = self._cm.lookup(q)
        steps.append("S03")
        if cached is not None:
            steps.append("S04")
            cached = replace(cached, request_id=txn)
            steps.append("S05")
            doc = self._cm.to_xml(cached)
            envelope = decode_response(doc)
            steps.append("S06")
            steps.append("S07")
            trace = StepTrace(txn, tuple(steps), Outcome.HIT)
            self.counters["hits"] += 1
            self.last_trace = trace
            return envelope, trace

        steps.append("S04")  # miss reported; protocol jumps to S08
        req = RequestEnvelope(txn, self.client_id, self.token, q)
        try:
            resp = self.transport.roundtrip(req)
        except ConnectionFailedError as exc:
            self._fail(exc, txn, tuple(steps), "S08")
        except (TruncatedFrameError, MalformedMessageError) as exc:
            self._fail(exc, txn, tuple(steps) + ("S08",), "S11")

        if resp.status is Status.OK:
            steps += ["S08", "S09", "S10", "S11", "S12"]
            self._cm.store(q, resp)
            doc = self._cm.to_xml(resp)
            envelope = decode_response(doc)
            steps.append("S13")
            steps.append("S14")
            steps.append("S15")
            trace = StepTrace(txn, tuple(steps), Outcome.MISS_SERVED)
            self.counters["misses"] += 1
            self.last_trace = trace
            return envelope, trace

        failed_at = _FAIL_STEP.get(resp.error_code, "S09")
        trace = StepTrace(txn, _COMPLETED_BEFORE_FAIL[failed_at], Outcome.FAILED,
                          failed_at=failed_at)
        self.counters["failures"] += 1
        self.last_trace = trace
        return resp, trace

    def _fail(self, exc, txn: str, steps: tuple[str, ...], failed_at: str):
        trace = StepTrace(txn, steps, Outcome.FAILED, failed_at=failed_at)
        self.counters["failures"] += 1
        self.last_trace = trace
        exc.trace = trace
        raise exc

    # -- counters ------------------------------------------------------

    def counter_lines(self) -> list[str]:
        items = dict(self.counters)
        items["cache_hits"] = self._cm.cache.stats.hits
        items["cache_misses"] = self._cm.cache.stats.misses
        items["ds_reads_attempted_by_cm"] = self._cm.ds_reads_attempted_by_cm
        return [f"{key}={value}" for key, value in sorted(items.items())]


def client_from_config(config: ClientConfig, log: EventLog | None = None) -> SpimClient:
    if config.mode != "spim":
        raise ConfigError("client_from_config builds spim-mode clients; "
                          "use spim.dmvc.client_from_config for dmvc mode")
    return SpimClient(
        TcpTransport(config.server, log=log),
        client_id=config.client_id,
        token=config.token,
        cache_path=config.cache_path,
        cache_capacity=config.cache_capacity,
        log=log,
    )


# -- usage-counter sidecar (read by the stats workflow) -----------------

def stats_path_for(cache_path: str) -> str:
    return cache_path + ".stats"


def load_stats(cache_path: str) -> dict[str, int]:
    path = stats_path_for(cache_path)
    values: dict[str, int] = {}
    if not os.path.exists(path):
        return values
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or "=" not in line:
                continue
            key, _, raw = line.partition("=")
            try:
                values[key] = int(raw)
            except ValueError:
                continue
    return values


def save_stats(cache_path: str, counters: dict[str, int]) -> None:
    path = stats_path_for(cache_path)
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in sorted(counters.items()):
            fh.write(f"{key}={value}\n")
