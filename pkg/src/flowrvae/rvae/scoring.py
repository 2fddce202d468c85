"""Per-timestep anomaly scores attached to their (source IP, window)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..features import FlowSequence
from .model import SequenceLike, VaeBase, collate


@dataclass(frozen=True)
class ScoreRecord:
    src_ip: str
    window_index: int
    score: float
    label: str | None = None
    tag: str = ""

    def to_dict(self) -> dict:
        return {"src_ip": self.src_ip, "window_index": self.window_index, "score": self.score,
                "label": self.label, "tag": self.tag}


def _records_for(seq: SequenceLike, scores: np.ndarray) -> list[ScoreRecord]:
    if isinstance(seq, FlowSequence):
        return [ScoreRecord(a.src_ip, a.window_index, float(s), a.label, a.tag)
                for a, s in zip(seq.agg_flows, scores)]
    return [ScoreRecord("", i, float(s)) for i, s in enumerate(scores)]


def anomaly_scores(model: VaeBase | None, seq: SequenceLike) -> list[ScoreRecord]:
    """One ScoreRecord per valid timestep of ``seq`` (evaluation mode, z = mu)."""
    if model is None:
        raise ValueError("no model loaded")
    batch = collate([seq])
    scores = model.timestep_scores(batch)[: batch.lengths[0], 0]
    return _records_for(seq, scores)


def score_sequences(model: VaeBase, seqs: Sequence[SequenceLike],
                    batch_size: int = 64) -> list[ScoreRecord]:
    """Score many sequences in batches; output follows input order."""
    out: list[ScoreRecord] = []
    for start in range(0, len(seqs), batch_size):
        chunk = seqs[start : start + batch_size]
        batch = collate(chunk)
        scores = model.timestep_scores(batch)
        for b, seq in enumerate(chunk):
            out.extend(_records_for(seq, scores[: batch.lengths[b], b]))
    return out


def score_matrix(model: VaeBase, seqs: Sequence[SequenceLike], batch_size: int = 64) -> np.ndarray:
    """Flat array of all per-timestep scores in sequence order."""
    return np.array([r.score for r in score_sequences(model, seqs, batch_size)])
