"""Versioned binary caches for parsed flows and aggregated feature vectors.

Both formats are little-endian::

    magic    8 bytes  (b"FRVAEFLW" flows, b"FRVAEFEA" features)
    version  u16
    meta     u32 length + UTF-8 JSON
    records  repeated: u32 payload length + payload

Strings inside payloads are u16 length + UTF-8.
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import AggFlow
from .ingest import FlowRecord

FLOW_MAGIC = b"FRVAEFLW"
FEATURE_MAGIC = b"FRVAEFEA"
VERSION = 1

_FLOW_FIXED = struct.Struct("<dHHdqqqqq")
_AGG_FIXED = struct.Struct("<qdB")
_LABEL_CODE = {"normal": 0, "malicious": 1}
_CODE_LABEL = {v: k for k, v in _LABEL_CODE.items()}


class CacheError(ValueError):
    pass


def _put_str(buf: io.BytesIO, s: str):
    b = s.encode()
    buf.write(struct.pack("<H", len(b)))
    buf.write(b)


def _get_str(view, pos: int) -> tuple[str, int]:
    (n,) = struct.unpack_from("<H", view, pos)
    pos += 2
    return bytes(view[pos : pos + n]).decode(), pos + n


def _header(magic: bytes, meta: dict) -> bytes:
    mb = json.dumps(meta, sort_keys=True).encode()
    return magic + struct.pack("<HI", VERSION, len(mb)) + mb


def _read_header(raw: bytes, magic: bytes) -> tuple[dict, int]:
    if raw[:8] != magic:
        raise CacheError(f"bad magic: expected {magic!r}")
    version, mlen = struct.unpack_from("<HI", raw, 8)
    if version != VERSION:
        raise CacheError(f"unsupported cache version {version}")
    pos = 14
    meta = json.loads(raw[pos : pos + mlen].decode())
    return meta, pos + mlen


def _records(raw: bytes, pos: int):
    view = memoryview(raw)
    while pos < len(raw):
        if pos + 4 > len(raw):
            raise CacheError("truncated record length")
        (n,) = struct.unpack_from("<I", view, pos)
        pos += 4
        if pos + n > len(raw):
            raise CacheError("truncated record")
        yield view[pos : pos + n]
        pos += n


def dump_flows(flows: Sequence[FlowRecord], meta: dict | None = None) -> bytes:
    out = io.BytesIO()
    out.write(_header(FLOW_MAGIC, meta or {}))
    for f in flows:
        rec = io.BytesIO()
        rec.write(_FLOW_FIXED.pack(f.ts, f.src_port, f.dst_port, f.duration, f.orig_bytes,
                                   f.resp_bytes, f.missed_bytes, f.orig_pkts, f.resp_pkts))
        for s in (f.src_ip, f.dst_ip, f.proto, f.service, f.conn_state):
            _put_str(rec, s)
        payload = rec.getvalue()
        out.write(struct.pack("<I", len(payload)))
        out.write(payload)
    return out.getvalue()


def load_flows(raw: bytes) -> tuple[list[FlowRecord], dict]:
    meta, pos = _read_header(raw, FLOW_MAGIC)
    flows = []
    for view in _records(raw, pos):
        ts, sp, dp, dur, ob, rb, mb, op, rp = _FLOW_FIXED.unpack_from(view, 0)
        p = _FLOW_FIXED.size
        strs = []
        for _ in range(5):
            s, p = _get_str(view, p)
            strs.append(s)
        src, dst, proto, service, state = strs
        flows.append(FlowRecord(ts, src, sp, dst, dp, proto, service, dur, ob, rb, mb, op, rp, state))
    return flows, meta


def dump_aggflows(aggs: Sequence[AggFlow], meta: dict | None = None) -> bytes:
    out = io.BytesIO()
    out.write(_header(FEATURE_MAGIC, meta or {}))
    for a in aggs:
        rec = io.BytesIO()
        rec.write(_AGG_FIXED.pack(a.window_index, a.group_first_ts, _LABEL_CODE[a.label]))
        _put_str(rec, a.src_ip)
        _put_str(rec, a.tag)
        feats = np.ascontiguousarray(a.features, dtype="<f8")
        rec.write(struct.pack("<I", feats.size))
        rec.write(feats.tobytes())
        payload = rec.getvalue()
        out.write(struct.pack("<I", len(payload)))
        out.write(payload)
    return out.getvalue()


def load_aggflows(raw: bytes) -> tuple[list[AggFlow], dict]:
    meta, pos = _read_header(raw, FEATURE_MAGIC)
    aggs = []
    for view in _records(raw, pos):
        w, ts, lab = _AGG_FIXED.unpack_from(view, 0)
        p = _AGG_FIXED.size
        src, p = _get_str(view, p)
        tag, p = _get_str(view, p)
        (n,) = struct.unpack_from("<I", view, p)
        p += 4
        feats = np.frombuffer(view, dtype="<f8", count=n, offset=p).astype(np.float64)
        aggs.append(AggFlow(w, src, ts, feats, _CODE_LABEL[lab], tag))
    return aggs, meta


def save_flows(path, flows, meta=None):
    Path(path).write_bytes(dump_flows(flows, meta))


def read_flows(path):
    return load_flows(Path(path).read_bytes())


def save_aggflows(path, aggs, meta=None):
    Path(path).write_bytes(dump_aggflows(aggs, meta))


def read_aggflows(path):
    return load_aggflows(Path(path).read_bytes())
