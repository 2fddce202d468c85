"""Windowed per-source-IP aggregation, min-max scaling and sequence assembly."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .ingest import DEFAULT_VOCAB, FlowRecord, HostLabelSet, Vocabulary

NUMERIC_FEATURES = (
    "n_connections", "n_unique_dst_ip", "n_unique_dst_port", "n_unique_src_port",
    "sum_duration", "mean_duration", "sum_orig_bytes", "sum_resp_bytes", "sum_missed_bytes",
    "sum_orig_pkts", "sum_resp_pkts",
)


def feature_names(vocab: Vocabulary = DEFAULT_VOCAB) -> list[str]:
    return (list(NUMERIC_FEATURES)
            + [f"proto_{p}" for p in vocab.protocols]
            + [f"state_{s}" for s in vocab.conn_states]
            + [f"service_{s}" for s in vocab.services])


@dataclass(frozen=True)
class WindowConfig:
    duration_s: float = 60.0
    windows_per_sequence: int = 3
    max_sequence_len: int = 128

    def __post_init__(self):
        if not self.duration_s > 0:
            raise ValueError("duration_s must be > 0")
        if self.windows_per_sequence < 1 or self.max_sequence_len < 1:
            raise ValueError("windows_per_sequence and max_sequence_len must be >= 1")

    def window_of(self, ts: float) -> int:
        return int(math.floor(ts / self.duration_s))

    def block_of(self, window_index: int) -> int:
        return window_index // self.windows_per_sequence


@dataclass(frozen=True, eq=False)
class AggFlow:
    window_index: int
    src_ip: str
    group_first_ts: float
    features: np.ndarray
    label: str = HostLabelSet.NORMAL
    tag: str = ""

    @property
    def is_malicious(self) -> bool:
        return self.label == HostLabelSet.MALICIOUS

    def sort_key(self):
        return (self.window_index, self.group_first_ts, self.src_ip)


def aggregate_window(flows: Sequence[FlowRecord], window_index: int | None = None,
                     labels: HostLabelSet | None = None, vocab: Vocabulary = DEFAULT_VOCAB,
                     cfg: WindowConfig | None = None) -> list[AggFlow]:
    """One raw (unnormalised) AggFlow per source IP among ``flows``.

    ``window_index`` defaults to the window of the first flow under ``cfg``.
    """
    if not flows:
        return []
    if window_index is None:
        window_index = (cfg or WindowConfig()).window_of(flows[0].ts)
    labels = labels or HostLabelSet()
    proto_ix = {p: i for i, p in enumerate(vocab.protocols)}
    state_ix = {s: i for i, s in enumerate(vocab.conn_states)}
    svc_ix = {s: i for i, s in enumerate(vocab.services)}
    n_num = len(NUMERIC_FEATURES)
    off_state = n_num + len(vocab.protocols)
    off_svc = off_state + len(vocab.conn_states)
    width = off_svc + len(vocab.services)

    groups: dict[str, list[FlowRecord]] = defaultdict(list)
    for f in flows:
        groups[f.src_ip].append(f)

    out = []
    for src, fl in groups.items():
        x = np.zeros(width)
        n = len(fl)
        dur = sum(f.duration for f in fl)
        x[0] = n
        x[1] = len({f.dst_ip for f in fl})
        x[2] = len({f.dst_port for f in fl})
        x[3] = len({f.src_port for f in fl})
        x[4] = dur
        x[5] = dur / n
        x[6] = sum(f.orig_bytes for f in fl)
        x[7] = sum(f.resp_bytes for f in fl)
        x[8] = sum(f.missed_bytes for f in fl)
        x[9] = sum(f.orig_pkts for f in fl)
        x[10] = sum(f.resp_pkts for f in fl)
        for f in fl:
            x[n_num + proto_ix.get(f.proto, proto_ix["other"])] += 1
            x[off_state + state_ix.get(f.conn_state, len(vocab.conn_states) - 1)] += 1
            x[off_svc + svc_ix.get(f.service, svc_ix["other"])] += 1
        out.append(AggFlow(window_index, src, min(f.ts for f in fl), x, labels[src]))
    out.sort(key=AggFlow.sort_key)
    return out


def aggregate_flows(flows: Iterable[FlowRecord], cfg: WindowConfig = WindowConfig(),
                    labels: HostLabelSet | None = None,
                    vocab: Vocabulary = DEFAULT_VOCAB) -> list[AggFlow]:
    """Bucket flows into tumbling windows and aggregate each window."""
    windows: dict[int, list[FlowRecord]] = defaultdict(list)
    for f in flows:
        windows[cfg.window_of(f.ts)].append(f)
    out: list[AggFlow] = []
    for w in sorted(windows):
        out.extend(aggregate_window(windows[w], w, labels, vocab))
    return out


# ---------------------------------------------------------------- normalisation

class NotFittedError(RuntimeError):
    pass


@dataclass
class NormalizerState:
    mins: np.ndarray | None = None
    maxs: np.ndarray | None = None
    feature_names: list[str] = field(default_factory=list)

    @property
    def fitted(self) -> bool:
        return self.mins is not None and self.maxs is not None

    def to_dict(self) -> dict:
        if not self.fitted:
            raise NotFittedError("normalizer has not been fitted")
        return {"feature_names": list(self.feature_names),
                "mins": [float(v) for v in self.mins], "maxs": [float(v) for v in self.maxs]}

    @classmethod
    def from_dict(cls, d) -> "NormalizerState":
        return cls(np.asarray(d["mins"], dtype=float), np.asarray(d["maxs"], dtype=float),
                   list(d.get("feature_names", [])))


def fit_normalizer(aggs: Sequence[AggFlow], names: Sequence[str] | None = None) -> NormalizerState:
    if not aggs:
        raise ValueError("cannot fit a normalizer on zero AggFlows")
    X = np.stack([a.features for a in aggs])
    return NormalizerState(X.min(axis=0), X.max(axis=0), list(names or []))


def normalize_matrix(state: NormalizerState, X: np.ndarray) -> np.ndarray:
    if not state.fitted:
        raise NotFittedError("normalizer has not been fitted")
    if X.shape[-1] != state.mins.shape[0]:
        raise ValueError(f"feature width {X.shape[-1]} != fitted width {state.mins.shape[0]}")
    span = state.maxs - state.mins
    safe = np.where(span > 0, span, 1.0)
    Z = (X - state.mins) / safe
    Z = np.where(span > 0, Z, 0.0)
    return np.clip(Z, 0.0, 1.0)


def apply_normalizer(state: NormalizerState, aggs: Sequence[AggFlow]) -> list[AggFlow]:
    if not state.fitted:
        raise NotFittedError("normalizer has not been fitted")
    if not aggs:
        return []
    Z = normalize_matrix(state, np.stack([a.features for a in aggs]))
    return [replace(a, features=z) for a, z in zip(aggs, Z)]


# ---------------------------------------------------------------- sequences

@dataclass(frozen=True, eq=False)
class FlowSequence:
    agg_flows: tuple[AggFlow, ...]
    max_len: int

    def __post_init__(self):
        if len(self.agg_flows) > self.max_len:
            raise ValueError("sequence longer than max_len")

    def __len__(self):
        return len(self.agg_flows)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.max_len, dtype=bool)
        m[: len(self.agg_flows)] = True
        return m

    @property
    def window_span(self) -> tuple[int, int]:
        return self.agg_flows[0].window_index, self.agg_flows[-1].window_index

    def matrix(self) -> np.ndarray:
        return np.stack([a.features for a in self.agg_flows])

    def labels(self) -> np.ndarray:
        return np.array([a.is_malicious for a in self.agg_flows], dtype=bool)


def build_sequences(aggs: Iterable[AggFlow], cfg: WindowConfig = WindowConfig()) -> list[FlowSequence]:
    """Split AggFlows into blocks of N consecutive windows, chunked to at most L steps."""
    blocks: dict[int, list[AggFlow]] = defaultdict(list)
    for a in aggs:
        blocks[cfg.block_of(a.window_index)].append(a)
    out = []
    L = cfg.max_sequence_len
    for b in sorted(blocks):
        items = sorted(blocks[b], key=AggFlow.sort_key)
        for start in range(0, len(items), L):
            out.append(FlowSequence(tuple(items[start : start + L]), L))
    return out


def feature_matrix(aggs: Sequence[AggFlow], width: int | None = None) -> np.ndarray:
    if not aggs:
        return np.zeros((0, width or 0))
    return np.stack([a.features for a in aggs])


def write_feature_csv(path, aggs: Sequence[AggFlow], names: Sequence[str]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_index", "src_ip", "group_first_ts", "label", "tag", *names])
        for a in aggs:
            w.writerow([a.window_index, a.src_ip, repr(float(a.group_first_ts)), a.label, a.tag,
                        *(repr(float(v)) for v in a.features)])
