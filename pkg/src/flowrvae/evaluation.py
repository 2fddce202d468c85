"""Ranking and confusion metrics, curves, fold and scenario splitting, reports."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from typing import Callable, Hashable, Iterable, Mapping, Sequence, TypeVar

import numpy as np

log = logging.getLogger(__name__)

Item = TypeVar("Item")

TRAIN_SCENARIOS = frozenset({3, 4, 5, 7, 10, 11, 12, 13})
TEST_SCENARIOS = frozenset({1, 2, 6, 8, 9})

UNDEFINED = "undefined"


def _prepare(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D and of equal length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    if y.all() or not y.any():
        raise ValueError("rank metrics need at least one positive and one negative")
    return s, y


def _threshold_counts(s: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cumulative (tp, fp) at each distinct score, scanning from the highest down."""
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_group = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[last_of_group]
    fp = np.cumsum(~y)[last_of_group]
    return tp, fp, s[last_of_group]


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds), starting at (0, 0) with threshold +inf."""
    s, y = _prepare(scores, labels)
    tp, fp, thr = _threshold_counts(s, y)
    tpr = np.r_[0.0, tp / y.sum()]
    fpr = np.r_[0.0, fp / (~y).sum()]
    return fpr, tpr, np.r_[np.inf, thr]


def auroc(scores, labels) -> float:
    fpr, tpr, _ = roc_curve(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def pr_curve(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(precision, recall, thresholds) at each distinct score, highest first."""
    s, y = _prepare(scores, labels)
    tp, fp, thr = _threshold_counts(s, y)
    return tp / (tp + fp), tp / y.sum(), thr


def auprc(scores, labels) -> float:
    """Average precision: sum of precision weighted by each recall increment."""
    precision, recall, _ = pr_curve(scores, labels)
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, labels, predicted) -> "ConfusionCounts":
        y = np.asarray(labels).astype(bool)
        p = np.asarray(predicted).astype(bool)
        return cls(int(np.sum(y & p)), int(np.sum(~y & p)), int(np.sum(~y & ~p)),
                   int(np.sum(y & ~p)))


def _ratio(num: float, den: float) -> float | None:
    return None if den == 0 else num / den


def precision_recall_f1(c: ConfusionCounts) -> tuple[float | None, float | None, float | None]:
    """None marks a metric whose denominator is zero."""
    p = _ratio(c.tp, c.tp + c.fp)
    r = _ratio(c.tp, c.tp + c.fn)
    f1 = None
    if p is not None and r is not None:
        f1 = _ratio(2 * p * r, p + r)
    return p, r, f1


def rates(c: ConfusionCounts) -> tuple[float | None, float | None, float | None, float | None]:
    """(tpr, fpr, tnr, fnr); None where the class is absent."""
    pos, neg = c.tp + c.fn, c.fp + c.tn
    return _ratio(c.tp, pos), _ratio(c.fp, neg), _ratio(c.tn, neg), _ratio(c.fn, pos)


def tpr_at_fpr(scores, labels, max_fpr: float) -> float:
    """Highest TPR over thresholds whose FPR does not exceed ``max_fpr``."""
    fpr, tpr, _ = roc_curve(scores, labels)
    ok = fpr <= max_fpr + 1e-12
    return float(tpr[ok].max())


# ---------------------------------------------------------------- splitting

def kfold_split(items: Sequence[Item], k: int, seed: int = 0) -> list[tuple[list[Item], list[Item]]]:
    """k (train, validation) partitions from one seeded shuffle."""
    if k < 2:
        raise ValueError("k must be >= 2")
    n = len(items)
    if n < k:
        raise ValueError(f"need at least k={k} items, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(order, k)
    out = []
    for i, val_idx in enumerate(folds):
        train_idx = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        out.append(([items[j] for j in train_idx], [items[j] for j in np.sort(val_idx)]))
    return out


def scenario_split(items: Iterable[Item], scenario_of: Callable[[Item], Hashable | None],
                   train_scenarios: Iterable = TRAIN_SCENARIOS,
                   test_scenarios: Iterable = TEST_SCENARIOS,
                   strict: bool = True) -> tuple[list[Item], list[Item]]:
    """Partition items by scenario tag. Unknown or missing tags raise when strict, else drop."""
    train_ids, test_ids = set(train_scenarios), set(test_scenarios)
    if train_ids & test_ids:
        raise ValueError("train and test scenario sets overlap")
    train, test, dropped = [], [], 0
    for item in items:
        sid = scenario_of(item)
        if sid in train_ids:
            train.append(item)
        elif sid in test_ids:
            test.append(item)
        elif strict:
            raise ValueError(f"item with unknown scenario tag {sid!r}")
        else:
            dropped += 1
    if dropped:
        log.warning("scenario_split dropped %d items with unknown tags", dropped)
    return train, test


# ---------------------------------------------------------------- reports

METRIC_ORDER = ("auroc", "auprc", "precision", "recall", "f1", "tpr", "fpr", "tnr", "fnr")


def metric_report(scores, labels, predicted=None) -> dict:
    """Every metric the package reports; rank metrics are undefined for single-class input."""
    y = np.asarray(labels).astype(bool)
    out: dict[str, float | int | None] = {"n": int(y.size), "n_pos": int(y.sum())}
    try:
        out["auroc"] = auroc(scores, y)
        out["auprc"] = auprc(scores, y)
    except ValueError:
        out["auroc"] = out["auprc"] = None
    if predicted is not None:
        c = ConfusionCounts.from_predictions(y, predicted)
        out.update(tp=c.tp, fp=c.fp, tn=c.tn, fn=c.fn)
        out["precision"], out["recall"], out["f1"] = precision_recall_f1(c)
        out["tpr"], out["fpr"], out["tnr"], out["fnr"] = rates(c)
    return out


def average_reports(reports: Sequence[Mapping]) -> dict:
    """Mean of each scalar metric across runs; undefined if any run left it undefined."""
    keys = [k for k in reports[0] if k not in ("n", "n_pos", "tp", "fp", "tn", "fn")]
    out = {}
    for k in keys:
        vals = [r.get(k) for r in reports]
        out[k] = None if any(v is None for v in vals) else float(np.mean(vals))
    return out


def _fmt(v) -> str:
    if v is None:
        return UNDEFINED
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6f}"


def format_report(rows: Mapping[str, Mapping], metrics: Sequence[str] = METRIC_ORDER) -> str:
    """Fixed-width text table, one row per named result."""
    names = list(rows)
    width = max([len("name")] + [len(n) for n in names])
    cols = [m for m in metrics if any(m in r for r in rows.values())]
    lines = ["name".ljust(width) + "".join(f"  {c:>10}" for c in cols)]
    for n in names:
        lines.append(n.ljust(width) + "".join(f"  {_fmt(rows[n].get(c)):>10}" for c in cols))
    return "\n".join(lines) + "\n"


def report_jsonl(rows: Mapping[str, Mapping]) -> str:
    def clean(v):
        if isinstance(v, (np.floating, float)):
            return round(float(v), 10)
        if isinstance(v, np.integer):
            return int(v)
        return v

    return "".join(json.dumps({"name": n, **{k: clean(v) for k, v in r.items()}}, sort_keys=True)
                   + "\n" for n, r in rows.items())


def write_curve_csv(path, columns: Mapping[str, np.ndarray]):
    names = list(columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*(columns[n] for n in names)):
            w.writerow([f"{float(v):.10g}" for v in row])
