"""Duplicated-model baseline: model and controller replicated on both
tiers, synchronized write-through.

This is a cost model of the duplication overhead, not a faithful port of
any particular duplicated-MVC codebase.  A miss-path transaction performs
four scans where the partitioned architecture performs two:

    1. client model scans its own cache            (miss)
    2. client model scans its store replica view   (remote scan, discarded)
    3. server model scans the server-side cache    (miss when cold)
    4. server model scans the data store           (serves the answer)
    5. the result is written through into both caches (one sync)

A hit-path transaction is a single client cache scan, identical to the
partitioned architecture, which is why the hit case benchmarks at parity.
The record payload returned is always identical to what spim mode returns
for the same query; only the route (and therefore the cost) differs.
"""

from __future__ import annotations

import threading
from dataclasses import replace

from .client import TcpTransport, acquire_cache_lock, load_stats, release_cache_lock, save_stats
from .errors import ConfigError, NotFoundError
from .instrument import RTT, EventLog
from .server import Counters, ServerModel, TierCounters
from .storage import DEFAULT_CACHE_CAPACITY, DataCache, DataStore
from .wire import (
    ErrorCode,
    MalformedMessageError,
    Query,
    RequestEnvelope,
    ResponseEnvelope,
    Source,
    Status,
    decode_request,
    encode_response,
    error_response,
    frame,
    ok_response,
)


class DmvcCounters(Counters):
    """Scan and synchronization accounting for the duplicated baseline.

    A cold miss advances the four scan counters by exactly one each; a
    hit advances only ``cm_cache_scans``.  The client and server halves
    may share one instance (in-process) or keep their own (over TCP).
    """

    names = ("cm_cache_scans", "cm_ds_scans", "sm_cache_scans",
             "sm_ds_scans", "sync_messages")


class DmvcServerController:
    """Server half of the baseline: a cache replica sits in front of the
    store, and every store-served result is written through into it."""

    def __init__(self, store: DataStore, tokens,
                 cache_capacity: int = DEFAULT_CACHE_CAPACITY,
                 counters: DmvcCounters | None = None,
                 cache_log: EventLog | None = None):
        tokens = frozenset(tokens)
        if not tokens:
            raise ConfigError("accepted token set must be non-empty")
        self.tokens = tokens
        self.counters = counters if counters is not None else DmvcCounters()
        self.tier = TierCounters()
        self.cache = DataCache(capacity=cache_capacity, log=cache_log)
        self._model = ServerModel(store, self.tier)
        self._cache_lock = threading.Lock()

    def handle(self, req: RequestEnvelope) -> ResponseEnvelope:
        self.tier.inc("sc_requests")
        if req.token not in self.tokens:
            return error_response(req.request_id, ErrorCode.UNAUTHORIZED)
        with self._cache_lock:
            self.counters.inc("sm_cache_scans")
            self.tier.inc("dc_reads_attempted_by_sm")
            cached = self.cache.lookup(req.query)
            if cached is not None:
                return replace(cached, request_id=req.request_id, source=Source.STORE)
            try:
                records = self._model.fetch(req.query)
            except NotFoundError:
                return error_response(req.request_id, ErrorCode.NOT_FOUND)
            self.counters.inc("sm_ds_scans")
            resp = ok_response(req.request_id, Source.STORE, records)
            self.cache.store(req.query, resp)  # server half of the sync
        return resp


def respond_to_replica_frame(store: DataStore, payload: bytes) -> bytes:
    """Serve one frame on the model-to-model replica channel: a raw store
    scan with no token gate and no cache, mirroring the direct data access
    a duplicated client model enjoys (and the gate it therefore bypasses).
    """
    try:
        req = decode_request(payload)
    except MalformedMessageError:
        return frame(encode_response(error_response("", ErrorCode.MALFORMED)))
    try:
        records = store.scan(req.query)
    except NotFoundError:
        return frame(encode_response(error_response(req.request_id, ErrorCode.NOT_FOUND)))
    return frame(encode_response(ok_response(req.request_id, Source.STORE, records)))


class DirectReplica:
    """In-process replica view: scans the store directly, one rtt charged."""

    def __init__(self, store: DataStore, log: EventLog | None = None):
        self._store = store
        self.log = log

    def scan(self, q: Query) -> None:
        if self.log is not None:
            self.log.record(RTT)
        self._store.scan(q)  # result discarded; NotFoundError propagates

    def close(self) -> None:
        pass


class TcpReplica:
    """Replica view over the baseline server's secondary listener."""

    def __init__(self, address: tuple[str, int], client_id: str = "client",
                 log: EventLog | None = None):
        self._transport = TcpTransport(address, log=log)
        self._client_id = client_id
        self._seq = 0

    def scan(self, q: Query) -> None:
        self._seq += 1
        req = RequestEnvelope(f"{self._client_id}-replica-{self._seq}",
                              self._client_id, "", q)
        resp = self._transport.roundtrip(req)
        if resp.error_code is ErrorCode.NOT_FOUND:
            raise NotFoundError(f"replica scan found nothing for {q.canonical_key}")

    def close(self) -> None:
        self._transport.close()


class DmvcClient:
    """Client half of the baseline: duplicated model with its own cache
    and its own (replica) view of the store."""

    def __init__(self, transport, replica, cache: DataCache | None = None,
                 client_id: str = "client", token: str = "",
                 counters: DmvcCounters | None = None,
                 cache_capacity: int = DEFAULT_CACHE_CAPACITY):
        self.transport = transport
        self.replica = replica
        self.client_id = client_id
        self.token = token
        self.counters = counters if counters is not None else DmvcCounters()
        self._cache = cache if cache is not None else DataCache(capacity=cache_capacity)
        self._seq = 0

    @property
    def cache(self) -> DataCache:
        return self._cache

    def request(self, q: Query) -> tuple[ResponseEnvelope, dict[str, int]]:
        """Run one transaction; returns the envelope and the counter delta
        this transaction caused (client-visible counters only when the
        server half keeps its own instance)."""
        before = self.counters.snapshot()
        self._seq += 1
        txn = f"{self.client_id}-{self._seq}"

        self.counters.inc("cm_cache_scans")
        cached = self._cache.lookup(q)
        if cached is not None:
            envelope = replace(cached, request_id=txn)
            return envelope, self._delta(before)

        # Redundant pre-fetch against the model's own view of the store.
        self.counters.inc("cm_ds_scans")
        try:
            self.replica.scan(q)
        except NotFoundError:
            pass  # the forwarded request is authoritative

        resp = self.transport.roundtrip(
            RequestEnvelope(txn, self.client_id, self.token, q))
        if resp.status is Status.OK:
            self._cache.store(q, resp)  # client half of the sync
            self.counters.inc("sync_messages")
        return resp, self._delta(before)

    def _delta(self, before: dict[str, int]) -> dict[str, int]:
        after = self.counters.snapshot()
        return {key: after[key] - before[key] for key in after}

    def close(self) -> None:
        self.replica.close()
        self.transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def client_from_config(config, log: EventLog | None = None) -> DmvcClient:
    """Build a TCP-backed baseline client from a ClientConfig in dmvc mode."""
    if config.mode != "dmvc":
        raise ConfigError("config is not in dmvc mode")
    cache = None
    if config.cache_path:
        import os

        if os.path.exists(config.cache_path):
            cache = DataCache.load(config.cache_path, capacity=config.cache_capacity, log=log)
    return DmvcClient(
        TcpTransport(config.server, log=log),
        TcpReplica(config.replica_server, client_id=config.client_id, log=log),
        cache=cache,
        client_id=config.client_id,
        token=config.token,
        cache_capacity=config.cache_capacity,
    )
