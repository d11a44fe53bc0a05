"""Server-side Data Store and client-side Data Cache.

The store is the source of truth: named tables of records sorted by
strictly increasing key, bulk-loaded from CSV (header ``key,field1,...``).
Scans are deliberately linear over the whole table; the walked record
count is the benchmark's cost driver, so no index is ever built.

The cache keeps whole query results keyed by the query's canonical string,
evicting least-recently-used entries beyond a fixed entry capacity.
Lookups scan the recency list linearly (again the cost driver).  The cache
persists to a plain text file, one entry per line:

    query_key|stored_at|last_used|base64(response XML)

lines ordered least-recently-used first, so reading the file back in order
reproduces the recency order exactly.
"""

from __future__ import annotations

import base64
import binascii
import csv
from collections import OrderedDict
from dataclasses import dataclass

from .errors import MalformedCacheFileError, MalformedMessageError, NotFoundError
from .instrument import CACHE_SCAN, DS_SCAN, EventLog
from .wire import (
    Query,
    Record,
    ResponseEnvelope,
    Source,
    Status,
    decode_response,
    encode_response,
)

DEFAULT_CACHE_CAPACITY = 64


class DataStore:
    """Named tables of key-sorted records; read-only once loaded."""

    def __init__(self, log: EventLog | None = None):
        self.tables: dict[str, list[Record]] = {}
        self.log = log
        self.scans = 0
        self.records_scanned = 0

    def add_table(self, name: str, records) -> None:
        records = list(records)
        keys = [r.key for r in records]
        if any(b <= a for a, b in zip(keys, keys[1:])):
            raise ValueError(f"table {name!r}: keys must be strictly increasing")
        self.tables[name] = records

    def scan(self, q: Query) -> list[Record]:
        """Return records with key in [key_from, key_to], walking the
        whole table linearly.

        Raises :class:`NotFoundError` if the table does not exist or the
        range matches nothing; either way an existing table is charged a
        full-table scan.
        """
        table = self.tables.get(q.table)
        if table is None:
            raise NotFoundError(f"no such table: {q.table}")
        self.scans += 1
        self.records_scanned += len(table)
        if self.log is not None:
            self.log.record(DS_SCAN, len(table))
        hits = [r for r in table if q.key_from <= r.key <= q.key_to]
        if not hits:
            raise NotFoundError(
                f"range [{q.key_from}, {q.key_to}] matches no records in {q.table!r}")
        return hits


def load_store_csv(path: str, log: EventLog | None = None,
                   table: str = "records") -> DataStore:
    """Bulk-load one table from a CSV file with header ``key,field1,...``."""
    store = DataStore(log=log)
    with open(path, newline="", encoding="utf-8") as fh:
        store.add_table(table, _read_table_csv(fh, path))
    return store


def _read_table_csv(fh, origin: str) -> list[Record]:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError(f"{origin}: empty store file") from None
    if not header or header[0] != "key":
        raise ValueError(f"{origin}: first CSV column must be 'key'")
    field_names = header[1:]
    records = []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != len(header):
            raise ValueError(f"{origin}:{lineno}: expected {len(header)} columns")
        try:
            key = int(row[0], 10)
        except ValueError:
            raise ValueError(f"{origin}:{lineno}: non-integer key {row[0]!r}") from None
        records.append(Record(key, tuple(zip(field_names, row[1:]))))
    return records


@dataclass
class CacheEntry:
    query_key: str
    stored_at: int
    last_used: int
    payload: ResponseEnvelope  # status OK as stored; replayed with source=cache

    def __post_init__(self):
        if self.last_used < self.stored_at:
            raise ValueError("entry last_used precedes stored_at")


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0


class DataCache:
    """LRU map of canonical query key -> cached query result.

    All mutating state lives behind plain method calls; callers that share
    a cache across threads serialize access themselves (lookups mutate
    recency, so reads are writes here).
    """

    def __init__(self, capacity: int = DEFAULT_CACHE_CAPACITY,
                 log: EventLog | None = None):
        if capacity < 1:
            raise ValueError("cache capacity must be >= 1")
        self.capacity = capacity
        self.log = log
        self.stats = CacheStats()
        # least-recently-used first; timestamps from a logical clock
        self._entries: OrderedDict[str, CacheEntry] = OrderedDict()
        self._clock = 0

    def _tick(self) -> int:
        self._clock += 1
        return self._clock

    def __len__(self) -> int:
        return len(self._entries)

    def entry_keys(self) -> list[str]:
        """Keys in recency order, least recently used first."""
        return list(self._entries)

    def lookup(self, q: Query) -> ResponseEnvelope | None:
        """Return the cached result for ``q`` (source rewritten to cache),
        or None on a miss.  Scans entries linearly from the LRU end; the
        number examined is charged to the event log."""
        key = q.canonical_key
        scanned = 0
        found = None
        for entry_key in self._entries:
            scanned += 1
            if entry_key == key:
                found = entry_key
                break
        if self.log is not None:
            self.log.record(CACHE_SCAN, scanned)
        if found is None:
            self.stats.misses += 1
            return None
        entry = self._entries[found]
        entry.last_used = self._tick()
        self._entries.move_to_end(found)
        self.stats.hits += 1
        return entry.payload.with_source(Source.CACHE)

    def store(self, q: Query, payload: ResponseEnvelope) -> None:
        """Insert or refresh the result for ``q``, evicting the LRU entry
        when the capacity would be exceeded."""
        if payload.status is not Status.OK:
            raise ValueError("only OK responses may be cached")
        key = q.canonical_key
        now = self._tick()
        if key in self._entries:
            del self._entries[key]
        elif len(self._entries) >= self.capacity:
            self._entries.popitem(last=False)
        self._entries[key] = CacheEntry(key, now, now, payload)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="ascii", newline="") as fh:
            for entry in self._entries.values():
                doc = base64.b64encode(encode_response(entry.payload)).decode("ascii")
                fh.write(f"{entry.query_key}|{entry.stored_at}|{entry.last_used}|{doc}\n")

    @classmethod
    def load(cls, path: str, capacity: int = DEFAULT_CACHE_CAPACITY,
             log: EventLog | None = None) -> "DataCache":
        """Rebuild a cache from its text file.

        Entries come back in the saved recency order with their original
        timestamps; hit/miss counters start at zero.  Any format violation
        raises :class:`MalformedCacheFileError`.
        """
        cache = cls(capacity=capacity, log=log)
        with open(path, "r", encoding="ascii", errors="strict") as fh:
            prev_used = 0
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    raise MalformedCacheFileError(f"{path}:{lineno}: blank line")
                parts = line.split("|")
                if len(parts) != 4:
                    raise MalformedCacheFileError(
                        f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
                query_key, stored_raw, used_raw, doc_b64 = parts
                try:
                    stored_at = int(stored_raw, 10)
                    last_used = int(used_raw, 10)
                except ValueError:
                    raise MalformedCacheFileError(
                        f"{path}:{lineno}: non-integer timestamp") from None
                try:
                    doc = base64.b64decode(doc_b64, validate=True)
                except (binascii.Error, ValueError):
                    raise MalformedCacheFileError(
                        f"{path}:{lineno}: invalid base64 payload") from None
                try:
                    payload = decode_response(doc)
                except MalformedMessageError as exc:
                    raise MalformedCacheFileError(f"{path}:{lineno}: {exc}") from None
                if query_key in cache._entries:
                    raise MalformedCacheFileError(
                        f"{path}:{lineno}: duplicate entry {query_key!r}")
                if last_used <= prev_used:
                    raise MalformedCacheFileError(
                        f"{path}:{lineno}: recency order violates last_used")
                try:
                    entry = CacheEntry(query_key, stored_at, last_used, payload)
                except ValueError as exc:
                    raise MalformedCacheFileError(f"{path}:{lineno}: {exc}") from None
                if len(cache._entries) >= cache.capacity:
                    cache._entries.popitem(last=False)
                cache._entries[query_key] = entry
                prev_used = last_used
        if cache._entries:
            cache._clock = max(e.last_used for e in cache._entries.values())
        return cache
