"""Flat key=value configuration files.

Every workflow (serve, query, mashup, bench) reads the same trivial
format: one ``key=value`` per line, ``#`` starts a comment, blank lines
ignored, later keys override earlier ones.  Example server config:

    listen=127.0.0.1:7070
    tokens=alpha,beta
    store=/var/data/records.csv
    mode=spim
    instrumentation=off
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError
from .storage import DEFAULT_CACHE_CAPACITY
from .wire import DEFAULT_MAX_FRAME


def read_kv(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, _, value = line.partition("=")
                values[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return values


def _parse_bool(raw: str, key: str) -> bool:
    lowered = raw.lower()
    if lowered in ("on", "true", "yes", "1"):
        return True
    if lowered in ("off", "false", "no", "0"):
        return False
    raise ConfigError(f"{key}={raw!r} is not a boolean (use on/off)")


def _parse_int(raw: str, key: str) -> int:
    try:
        return int(raw, 10)
    except ValueError:
        raise ConfigError(f"{key}={raw!r} is not an integer") from None


def parse_address(raw: str, key: str = "address") -> tuple[str, int]:
    host, sep, port = raw.rpartition(":")
    if not sep or not host:
        raise ConfigError(f"{key}={raw!r} is not host:port")
    return host, _parse_int(port, key)


@dataclass
class ServerConfig:
    host: str
    port: int
    tokens: frozenset[str]
    store_path: str
    mode: str = "spim"
    instrumentation: bool = False
    cache_capacity: int = DEFAULT_CACHE_CAPACITY  # dmvc server-side replica
    replica_port: int | None = None               # dmvc only; default port+1
    max_frame: int = DEFAULT_MAX_FRAME

    def __post_init__(self):
        if self.mode not in ("spim", "dmvc"):
            raise ConfigError(f"mode must be spim or dmvc, got {self.mode!r}")
        if not self.tokens:
            raise ConfigError("tokens must list at least one accepted token")


@dataclass
class ClientConfig:
    server: tuple[str, int]
    client_id: str = "client"
    token: str = ""
    cache_path: str | None = None
    cache_capacity: int = DEFAULT_CACHE_CAPACITY
    mode: str = "spim"
    replica_server: tuple[str, int] | None = None  # dmvc; default port+1

    def __post_init__(self):
        if self.cache_capacity < 1:
            raise ConfigError("cache_capacity must be >= 1")
        if self.mode not in ("spim", "dmvc"):
            raise ConfigError(f"mode must be spim or dmvc, got {self.mode!r}")
        if self.mode == "dmvc" and self.replica_server is None:
            host, port = self.server
            self.replica_server = (host, port + 1)


@dataclass
class MashupPart:
    label: str
    server: tuple[str, int]
    table: str
    key_from: int
    key_to: int
    token: str


@dataclass
class MashupConfig:
    parts: list[MashupPart]
    render: str = "text"


@dataclass
class BenchConfig:
    n_from: int = 1000
    n_to: int = 30000
    step: int = 1000
    cases: tuple[str, ...] = ("cache_fetch", "store_fetch")
    cost_enabled: bool = True
    scan_cost: float = 1.0
    rtt_cost: float = 0.0
    seed: int = 7
    outdir: str = "bench-out"
    transport: str = "direct"  # direct (in-process) or tcp
    replay: str | None = None  # timing CSV to re-analyze instead of running

    def __post_init__(self):
        if self.n_from < 1 or self.n_to < self.n_from or self.step < 1:
            raise ConfigError("invalid record-count range")
        for case in self.cases:
            if case not in ("cache_fetch", "store_fetch"):
                raise ConfigError(f"unknown case {case!r}")
        if self.transport not in ("direct", "tcp"):
            raise ConfigError(f"transport must be direct or tcp, got {self.transport!r}")
        if not self.cost_enabled and self.transport == "direct":
            self.transport = "tcp"  # wall-clock timing implies real transport

    def sizes(self) -> list[int]:
        return list(range(self.n_from, self.n_to + 1, self.step))


def server_config_from_file(path: str) -> ServerConfig:
    kv = read_kv(path)
    try:
        listen = kv["listen"]
        tokens = kv["tokens"]
        store = kv["store"]
    except KeyError as exc:
        raise ConfigError(f"{path}: missing required key {exc.args[0]!r}") from None
    host, port = parse_address(listen, "listen")
    cfg = ServerConfig(
        host=host,
        port=port,
        tokens=frozenset(t for t in tokens.split(",") if t),
        store_path=store,
        mode=kv.get("mode", "spim"),
        instrumentation=_parse_bool(kv.get("instrumentation", "off"), "instrumentation"),
    )
    if "cache_capacity" in kv:
        cfg.cache_capacity = _parse_int(kv["cache_capacity"], "cache_capacity")
    if "replica_listen" in kv:
        cfg.replica_port = parse_address(kv["replica_listen"], "replica_listen")[1]
    return cfg


def client_config_from_file(path: str) -> ClientConfig:
    kv = read_kv(path)
    if "server" not in kv:
        raise ConfigError(f"{path}: missing required key 'server'")
    cfg = ClientConfig(
        server=parse_address(kv["server"], "server"),
        client_id=kv.get("client_id", "client"),
        token=kv.get("token", ""),
        cache_path=kv.get("cache_path") or None,
        mode=kv.get("mode", "spim"),
    )
    if "cache_capacity" in kv:
        cfg.cache_capacity = _parse_int(kv["cache_capacity"], "cache_capacity")
        cfg.__post_init__()
    if "replica_server" in kv:
        cfg.replica_server = parse_address(kv["replica_server"], "replica_server")
    return cfg


def mashup_config_from_file(path: str) -> MashupConfig:
    """Mashup configs list one service per ``part.<i>.*`` key group:

        part.1.label=orders
        part.1.server=127.0.0.1:7070
        part.1.table=orders
        part.1.from=1
        part.1.to=50
        part.1.token=secret     # optional, falls back to global token=
        render=html
    """
    kv = read_kv(path)
    default_token = kv.get("token", "")
    indices = sorted({
        int(key.split(".")[1])
        for key in kv
        if key.startswith("part.") and key.count(".") == 2 and key.split(".")[1].isdigit()
    })
    if not indices:
        raise ConfigError(f"{path}: no part.<i>.* entries")
    parts = []
    for i in indices:
        prefix = f"part.{i}."
        try:
            label = kv[prefix + "label"]
            server = kv[prefix + "server"]
            table = kv[prefix + "table"]
            lo = kv[prefix + "from"]
            hi = kv[prefix + "to"]
        except KeyError as exc:
            raise ConfigError(f"{path}: part {i} missing {exc.args[0]!r}") from None
        parts.append(MashupPart(
            label=label,
            server=parse_address(server, prefix + "server"),
            table=table,
            key_from=_parse_int(lo, prefix + "from"),
            key_to=_parse_int(hi, prefix + "to"),
            token=kv.get(prefix + "token", default_token),
        ))
    render = kv.get("render", "text")
    if render not in ("text", "html", "json"):
        raise ConfigError(f"render must be text, html or json, got {render!r}")
    return MashupConfig(parts=parts, render=render)


def bench_config_from_file(path: str) -> BenchConfig:
    kv = read_kv(path)
    cfg = BenchConfig()
    if "range" in kv:
        raw = kv["range"]
        lo, sep, hi = raw.partition("..")
        if not sep:
            raise ConfigError(f"range={raw!r} is not FROM..TO")
        cfg.n_from = _parse_int(lo, "range")
        cfg.n_to = _parse_int(hi, "range")
    if "step" in kv:
        cfg.step = _parse_int(kv["step"], "step")
    if "cases" in kv:
        cfg.cases = tuple(c for c in kv["cases"].split(",") if c)
    if "modes" in kv:
        modes = {m for m in kv["modes"].split(",") if m}
        if modes != {"spim", "dmvc"}:
            raise ConfigError("modes must list both spim and dmvc (rows compare them)")
    if "cost_model" in kv:
        cfg.cost_enabled = _parse_bool(kv["cost_model"], "cost_model")
    if "scan_cost" in kv:
        cfg.scan_cost = float(kv["scan_cost"])
    if "rtt_cost" in kv:
        cfg.rtt_cost = float(kv["rtt_cost"])
    if "seed" in kv:
        cfg.seed = _parse_int(kv["seed"], "seed")
    if "outdir" in kv:
        cfg.outdir = kv["outdir"]
    if "transport" in kv:
        cfg.transport = kv["transport"]
    if "replay" in kv:
        cfg.replay = kv["replay"]
    cfg.__post_init__()
    return cfg
