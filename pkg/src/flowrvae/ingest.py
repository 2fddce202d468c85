"""Zeek conn/weird log and CSV parsing, plus weird-log host labelling."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Mapping

log = logging.getLogger(__name__)

PROTOCOLS = ("tcp", "udp", "icmp", "other")
SERVICES = ("dns", "http", "ssl", "smtp", "irc", "ftp", "ssh", "mysql", "imap", "dhcp", "none", "other")
CONN_STATES = ("S0", "S1", "SF", "REJ", "S2", "S3", "RSTO", "RSTR", "RSTOS0", "RSTRH", "SH", "SHR", "OTH")

DEFAULT_INDICATORS = frozenset({"irc_line_too_short", "irc_invalid_line"})

# Zeek's default conn.log column order.
ZEEK_CONN_FIELDS = (
    "ts", "uid", "id.orig_h", "id.orig_p", "id.resp_h", "id.resp_p", "proto", "service",
    "duration", "orig_bytes", "resp_bytes", "conn_state", "local_orig", "local_resp",
    "missed_bytes", "history", "orig_pkts", "orig_ip_bytes", "resp_pkts", "resp_ip_bytes",
    "tunnel_parents",
)
ZEEK_WEIRD_FIELDS = (
    "ts", "uid", "id.orig_h", "id.orig_p", "id.resp_h", "id.resp_p", "name", "addl",
    "notice", "peer",
)

# Zeek column -> FlowRecord attribute
_CONN_COLUMNS = {
    "ts": "ts", "id.orig_h": "src_ip", "id.orig_p": "src_port", "id.resp_h": "dst_ip",
    "id.resp_p": "dst_port", "proto": "proto", "service": "service", "duration": "duration",
    "orig_bytes": "orig_bytes", "resp_bytes": "resp_bytes", "missed_bytes": "missed_bytes",
    "orig_pkts": "orig_pkts", "resp_pkts": "resp_pkts", "conn_state": "conn_state",
}
_REQUIRED = ("ts", "src_ip", "dst_ip")
_ABSENT = {"-", "", "(empty)"}


class ParseError(ValueError):
    """Unrecoverable framing problem (bad or missing header)."""


@dataclass(frozen=True)
class Vocabulary:
    protocols: tuple[str, ...] = PROTOCOLS
    services: tuple[str, ...] = SERVICES
    conn_states: tuple[str, ...] = CONN_STATES

    def __post_init__(self):
        for name in ("protocols", "services", "conn_states"):
            values = getattr(self, name)
            if len(set(values)) != len(values):
                raise ValueError(f"duplicate entries in {name}")
        if "other" not in self.protocols or "other" not in self.services:
            raise ValueError("protocol and service vocabularies need an 'other' bucket")
        if "OTH" not in self.conn_states and "other" not in self.conn_states:
            raise ValueError("conn_state vocabulary needs an 'OTH' or 'other' bucket")

    def proto(self, value: str) -> str:
        v = value.lower()
        return v if v in self.protocols else "other"

    def service(self, value: str) -> str:
        if value in _ABSENT:
            return "none" if "none" in self.services else "other"
        # Zeek may report several, e.g. "ssl,http"; keep the first
        v = value.split(",")[0].strip().lower()
        return v if v in self.services else "other"

    def conn_state(self, value: str) -> str:
        v = value.strip().upper()
        if v in self.conn_states:
            return v
        return "other" if "other" in self.conn_states else "OTH"

    def to_dict(self) -> dict:
        return {"protocols": list(self.protocols), "services": list(self.services),
                "conn_states": list(self.conn_states)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Vocabulary":
        return cls(tuple(d["protocols"]), tuple(d["services"]), tuple(d["conn_states"]))


DEFAULT_VOCAB = Vocabulary()


@dataclass(frozen=True, slots=True)
class FlowRecord:
    ts: float
    src_ip: str
    src_port: int
    dst_ip: str
    dst_port: int
    proto: str = "other"
    service: str = "none"
    duration: float = 0.0
    orig_bytes: int = 0
    resp_bytes: int = 0
    missed_bytes: int = 0
    orig_pkts: int = 0
    resp_pkts: int = 0
    conn_state: str = "OTH"


@dataclass(frozen=True, slots=True)
class WeirdEvent:
    ts: float
    src_ip: str
    name: str


class ParseResult(list):
    """Records in input order; ``skipped`` holds (line number, reason) pairs."""

    def __init__(self, records=(), skipped=None):
        super().__init__(records)
        self.skipped: list[tuple[int, str]] = list(skipped or [])


class HostLabelSet:
    """Per-host labels; hosts not present are normal."""

    MALICIOUS = "malicious"
    NORMAL = "normal"

    def __init__(self, labels: Mapping[str, str] | None = None):
        self._labels: dict[str, str] = {}
        for ip, lab in (labels or {}).items():
            self[ip] = lab

    def __setitem__(self, ip: str, label: str):
        if label not in (self.MALICIOUS, self.NORMAL):
            raise ValueError(f"unknown label {label!r}")
        self._labels[ip] = label

    def __getitem__(self, ip: str) -> str:
        return self._labels.get(ip, self.NORMAL)

    def __contains__(self, ip) -> bool:
        return ip in self._labels

    def __len__(self):
        return len(self._labels)

    def __eq__(self, other):
        if isinstance(other, HostLabelSet):
            return self._labels == other._labels
        if isinstance(other, Mapping):
            return self._labels == dict(other)
        return NotImplemented

    def __repr__(self):
        return f"HostLabelSet({self._labels!r})"

    def is_malicious(self, ip: str) -> bool:
        return self[ip] == self.MALICIOUS

    def malicious_hosts(self) -> list[str]:
        return sorted(ip for ip, lab in self._labels.items() if lab == self.MALICIOUS)

    def to_dict(self) -> dict[str, str]:
        return dict(sorted(self._labels.items()))


# ---------------------------------------------------------------- Zeek TSV framing

def _unescape_separator(value: str) -> str:
    value = value.strip()
    if value.startswith("\\x"):
        return bytes.fromhex(value[2:]).decode()
    return value or "\t"


def _iter_zeek(lines: Iterable[str], field_spec: Iterable[str] | None):
    """Yield (line_no, fields, values) for each data line of a Zeek TSV log."""
    sep = "\t"
    fields = list(field_spec) if field_spec is not None else None
    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith("#separator"):
                parts = line.split(None, 1)
                if len(parts) != 2:
                    raise ParseError(f"line {line_no}: malformed #separator header")
                sep = _unescape_separator(parts[1])
            elif line.startswith("#fields"):
                names = line.split(sep)[1:]
                if not names or any(not n for n in names):
                    raise ParseError(f"line {line_no}: malformed #fields header")
                if len(set(names)) != len(names):
                    raise ParseError(f"line {line_no}: duplicate names in #fields header")
                fields = names
            continue
        if fields is None:
            raise ParseError(f"line {line_no}: data before any #fields header and no field spec given")
        yield line_no, fields, line.split(sep)


def _num(value: str, cast=float):
    if value in _ABSENT:
        return cast(0)
    return cast(float(value)) if cast is int else cast(value)


def _make_record(row: Mapping[str, str], vocab: Vocabulary) -> FlowRecord:
    ts = float(row["ts"])
    if not math.isfinite(ts) or ts <= 0:
        raise ValueError(f"invalid timestamp {row['ts']!r}")
    src_port = _num(row.get("src_port", "-"), int)
    dst_port = _num(row.get("dst_port", "-"), int)
    for p in (src_port, dst_port):
        if not 0 <= p <= 65535:
            raise ValueError(f"port out of range: {p}")
    duration = _num(row.get("duration", "-"))
    counts = {k: _num(row.get(k, "-"), int)
              for k in ("orig_bytes", "resp_bytes", "missed_bytes", "orig_pkts", "resp_pkts")}
    if duration < 0 or not math.isfinite(duration) or any(v < 0 for v in counts.values()):
        raise ValueError("negative duration or count")
    src_ip, dst_ip = row["src_ip"], row["dst_ip"]
    if src_ip in _ABSENT or dst_ip in _ABSENT:
        raise ValueError("missing address")
    return FlowRecord(
        ts=ts,
        src_ip=src_ip,
        src_port=src_port,
        dst_ip=dst_ip,
        dst_port=dst_port,
        proto=vocab.proto(row.get("proto", "-")),
        service=vocab.service(row.get("service", "-")),
        duration=duration,
        conn_state=vocab.conn_state(row.get("conn_state", "OTH")),
        **counts,
    )


def parse_conn_log(lines: Iterable[str], field_spec: Iterable[str] | None = None,
                   vocab: Vocabulary = DEFAULT_VOCAB) -> ParseResult:
    """Parse a Zeek conn.log. ``field_spec`` overrides (or stands in for) ``#fields``."""
    out = ParseResult()
    checked: list[str] | None = None
    for line_no, fields, values in _iter_zeek(lines, field_spec):
        if fields is not checked:
            missing = [z for z, a in _CONN_COLUMNS.items() if a in _REQUIRED and z not in fields]
            if missing:
                raise ParseError(f"conn log header lacks required fields {missing}")
            checked = fields
        if len(values) < len(fields):
            out.skipped.append((line_no, f"expected {len(fields)} columns, got {len(values)}"))
            continue
        row = {_CONN_COLUMNS[f]: v for f, v in zip(fields, values) if f in _CONN_COLUMNS}
        try:
            out.append(_make_record(row, vocab))
        except (ValueError, OverflowError) as exc:
            out.skipped.append((line_no, str(exc)))
    if out.skipped:
        log.warning("conn log: skipped %d malformed lines", len(out.skipped))
    return out


def parse_weird_log(lines: Iterable[str], field_spec: Iterable[str] | None = None) -> ParseResult:
    out = ParseResult()
    for line_no, fields, values in _iter_zeek(lines, field_spec):
        if "name" not in fields or "ts" not in fields or "id.orig_h" not in fields:
            raise ParseError("weird log header needs ts, id.orig_h and name")
        if len(values) < len(fields):
            out.skipped.append((line_no, f"expected {len(fields)} columns, got {len(values)}"))
            continue
        row = dict(zip(fields, values))
        name, src = row["name"], row["id.orig_h"]
        try:
            ts = float(row["ts"])
        except ValueError:
            out.skipped.append((line_no, f"invalid timestamp {row['ts']!r}"))
            continue
        if name in _ABSENT:
            out.skipped.append((line_no, "empty indicator name"))
        elif src in _ABSENT:
            out.skipped.append((line_no, "event has no originating host"))
        else:
            out.append(WeirdEvent(ts=ts, src_ip=src, name=name))
    return out


def derive_labels(events: Iterable[WeirdEvent],
                  indicator_set: Iterable[str] = DEFAULT_INDICATORS) -> HostLabelSet:
    """Mark every host that raised at least one indicator event as malicious."""
    indicators = frozenset(indicator_set)
    if not indicators:
        raise ValueError("indicator_set must not be empty")
    labels = HostLabelSet()
    for ev in events:
        if ev.name in indicators:
            labels[ev.src_ip] = HostLabelSet.MALICIOUS
    return labels


# ---------------------------------------------------------------- CSV

# FlowRecord attribute -> CSV column; the identity mapping by default.
DEFAULT_CSV_SCHEMA = {f: f for f in FlowRecord.__slots__}

_CSV_TIME_FORMATS = ("%Y/%m/%d %H:%M:%S.%f", "%Y-%m-%d %H:%M:%S.%f", "%Y/%m/%d %H:%M:%S",
                     "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S.%f", "%Y-%m-%dT%H:%M:%S")


def _csv_ts(value: str) -> str:
    try:
        float(value)
        return value
    except ValueError:
        pass
    for fmt in _CSV_TIME_FORMATS:
        try:
            dt = datetime.strptime(value.strip(), fmt).replace(tzinfo=timezone.utc)
            return repr(dt.timestamp())
        except ValueError:
            continue
    return value


def parse_flow_csv(stream: Iterable[str], schema: Mapping[str, str] | None = None,
                   vocab: Vocabulary = DEFAULT_VOCAB) -> ParseResult:
    """Parse a header-first CSV of flows.

    ``schema`` maps FlowRecord attributes to CSV column names. Columns
    missing from the file fall back to 0 / ``other``; ts, src_ip and dst_ip
    are required.
    """
    schema = dict(DEFAULT_CSV_SCHEMA if schema is None else schema)
    reader = csv.reader(stream)
    out = ParseResult()
    try:
        header = next(reader)
    except StopIteration:
        return out
    header = [h.strip() for h in header]
    index = {h: i for i, h in enumerate(header)}
    for attr in _REQUIRED:
        if schema.get(attr) not in index:
            raise ParseError(f"CSV header lacks required column for {attr!r}")
    cols = {attr: index[col] for attr, col in schema.items() if col in index}
    for line_no, values in enumerate(reader, start=2):
        if not values or all(not v.strip() for v in values):
            continue
        if len(values) < len(header):
            out.skipped.append((line_no, f"expected {len(header)} columns, got {len(values)}"))
            continue
        row = {attr: values[i].strip() for attr, i in cols.items()}
        row["ts"] = _csv_ts(row["ts"])
        try:
            out.append(_make_record(row, vocab))
        except (ValueError, OverflowError) as exc:
            out.skipped.append((line_no, str(exc)))
    return out
