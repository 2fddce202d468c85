"""Best-fit PDF estimation over reconstruction errors and likelihood classification."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy import optimize, stats

from .features import (AggFlow, NormalizerState, WindowConfig, aggregate_window, apply_normalizer,
                       build_sequences)
from .ingest import DEFAULT_VOCAB, FlowRecord, HostLabelSet, Vocabulary

log = logging.getLogger(__name__)

FAMILIES = ("gamma", "generalized_logistic", "folded_cauchy", "mielke", "beta")
MALICIOUS, NORMAL = HostLabelSet.MALICIOUS, HostLabelSet.NORMAL

_SCIPY = {
    "gamma": stats.gamma,
    "generalized_logistic": stats.genlogistic,
    "folded_cauchy": stats.foldcauchy,
    "mielke": stats.mielke,
    "beta": stats.beta,
}
_N_SHAPES = {"gamma": 1, "generalized_logistic": 1, "folded_cauchy": 1, "mielke": 2, "beta": 2}


class FitError(ValueError):
    pass


@dataclass
class FittedPdf:
    family: str
    params: tuple[float, ...]  # shapes..., loc, scale (scipy order)
    sse: float
    bins: int
    range: tuple[float, float]
    converged: bool = True

    def pdf(self, x) -> np.ndarray:
        with np.errstate(all="ignore"):
            p = _SCIPY[self.family].pdf(np.asarray(x, dtype=float), *self.params)
        return np.where(np.isfinite(p), p, 0.0)

    def to_dict(self) -> dict:
        return {"family": self.family, "params": [float(v) for v in self.params],
                "sse": float(self.sse), "bins": self.bins,
                "range": [float(self.range[0]), float(self.range[1])],
                "converged": self.converged}

    @classmethod
    def from_dict(cls, d) -> "FittedPdf":
        if d["family"] not in _SCIPY:
            raise ValueError(f"unknown family {d['family']!r}")
        return cls(d["family"], tuple(d["params"]), d["sse"], d["bins"], tuple(d["range"]),
                   d.get("converged", True))


@dataclass
class DetectorProfile:
    normal_pdf: FittedPdf
    botnet_pdf: FittedPdf
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"version": 1, "normal": self.normal_pdf.to_dict(),
                "botnet": self.botnet_pdf.to_dict(), "meta": self.meta}

    @classmethod
    def from_dict(cls, d) -> "DetectorProfile":
        return cls(FittedPdf.from_dict(d["normal"]), FittedPdf.from_dict(d["botnet"]),
                   d.get("meta", {}))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DetectorProfile":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- fitting

def histogram_density(scores: np.ndarray, bins: int) -> tuple[np.ndarray, np.ndarray, tuple]:
    lo, hi = float(scores.min()), float(scores.max())
    if not hi > lo:
        raise FitError("degenerate histogram: all scores are equal")
    dens, edges = np.histogram(scores, bins=bins, range=(lo, hi), density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return centers, dens, (lo, hi)


def _initial(family: str, x: np.ndarray, lo: float, hi: float) -> tuple[list[float], float, float]:
    """(shapes, loc, scale) starting point: moments where they give shapes, else ones."""
    mean, std = float(x.mean()), float(x.std())
    if family == "gamma":
        return [max((mean - lo) ** 2 / std**2, 1e-3)], lo, std
    if family == "beta":
        u = (x - lo) / (hi - lo)
        m, v = float(u.mean()), float(u.var())
        common = m * (1 - m) / v - 1 if v > 0 else 1.0
        if common <= 0:
            return [1.0, 1.0], lo, hi - lo
        return [max(m * common, 1e-3), max((1 - m) * common, 1e-3)], lo, hi - lo
    return [1.0] * _N_SHAPES[family], lo, std


def _fit_family(family: str, x: np.ndarray, centers: np.ndarray, dens: np.ndarray,
                rng: tuple[float, float], bins: int) -> FittedPdf:
    lo, hi = rng
    dist = _SCIPY[family]
    shapes0, loc0, scale0 = _initial(family, x, lo, hi)
    ns = len(shapes0)
    fixed_support = family == "beta"

    def unpack(u):
        shapes = np.exp(u[:ns])
        if fixed_support:
            return (*shapes, lo, hi - lo)
        return (*shapes, u[ns], np.exp(u[ns + 1]))

    def sse(u):
        with np.errstate(all="ignore"):
            p = dist.pdf(centers, *unpack(u))
        if not np.all(np.isfinite(p)):
            return 1e300
        return float(np.sum((p - dens) ** 2))

    u0 = np.log(shapes0)
    if not fixed_support:
        u0 = np.concatenate([u0, [loc0, np.log(max(scale0, 1e-12))]])
    opts = {"maxiter": 4000 * len(u0), "maxfev": 8000 * len(u0), "xatol": 1e-8, "fatol": 1e-12}
    res = optimize.minimize(sse, u0, method="Nelder-Mead", options=opts)
    # restart from the optimum: simplex search often stalls on the first pass
    res2 = optimize.minimize(sse, res.x, method="Nelder-Mead", options=opts)
    if res2.fun <= res.fun:
        res = res2
    return FittedPdf(family, tuple(float(v) for v in unpack(res.x)), float(res.fun), bins,
                     (lo, hi), bool(res.success))


def _try_fit(args) -> FittedPdf | None:
    fam = args[0]
    try:
        return _fit_family(*args)
    except (ValueError, FloatingPointError) as exc:
        log.warning("fit of %s failed: %s", fam, exc)
        return None


def fit_best_pdf(scores: Sequence[float], families: Iterable[str] = FAMILIES,
                 bins: int = 50, workers: int = 1) -> FittedPdf:
    """Fit every candidate family to the score histogram; keep the lowest SSE.

    ``workers`` > 1 fits families in a bounded process pool; the result does
    not depend on the worker count.
    """
    x = np.asarray(scores, dtype=float)
    x = x[np.isfinite(x)]
    if x.size < 30:
        raise FitError(f"need at least 30 finite scores, got {x.size}")
    if bins < 10:
        raise FitError("bins must be >= 10")
    families = list(families)
    unknown = [f for f in families if f not in _SCIPY]
    if unknown or not families:
        raise FitError(f"unknown or empty family list: {unknown or families}")
    centers, dens, rng = histogram_density(x, bins)
    jobs = [(fam, x, centers, dens, rng, bins) for fam in families]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_try_fit, jobs))
    else:
        results = [_try_fit(j) for j in jobs]
    fits = [f for f in results if f is not None and np.isfinite(f.sse) and f.sse < 1e299]
    if not fits:
        raise FitError("no candidate family could be fitted")
    return min(fits, key=lambda f: f.sse)


def fit_profile(normal_scores, botnet_scores, families: Iterable[str] = FAMILIES,
                bins: int = 50, workers: int = 1) -> DetectorProfile:
    families = list(families)
    return DetectorProfile(fit_best_pdf(normal_scores, families, bins, workers),
                           fit_best_pdf(botnet_scores, families, bins, workers))


# ---------------------------------------------------------------- decisions

def classify(profile: DetectorProfile, score: float) -> str:
    """Malicious iff the botnet density is strictly higher; ties go to normal."""
    return MALICIOUS if profile.botnet_pdf.pdf(score) > profile.normal_pdf.pdf(score) else NORMAL


def classify_many(profile: DetectorProfile, scores) -> np.ndarray:
    """Boolean array, True = malicious."""
    s = np.asarray(scores, dtype=float)
    return profile.botnet_pdf.pdf(s) > profile.normal_pdf.pdf(s)


@dataclass(frozen=True)
class Verdict:
    window_index: int
    src_ip: str
    score: float
    verdict: str
    label: str | None = None

    def to_dict(self) -> dict:
        return {"window_index": self.window_index, "src_ip": self.src_ip, "score": self.score,
                "verdict": self.verdict, "label": self.label}


def _score_block(model, profile, aggs: list[AggFlow], normalizer, cfg) -> list[Verdict]:
    from .rvae.scoring import score_sequences

    if not aggs:
        return []
    seqs = build_sequences(apply_normalizer(normalizer, aggs), cfg)
    records = score_sequences(model, seqs)
    flags = classify_many(profile, [r.score for r in records])
    return [Verdict(r.window_index, r.src_ip, r.score, MALICIOUS if f else NORMAL, r.label)
            for r, f in zip(records, flags)]


def detect_stream(model, profile: DetectorProfile, flows: Iterable[FlowRecord],
                  normalizer: NormalizerState, cfg: WindowConfig = WindowConfig(),
                  labels: HostLabelSet | None = None,
                  vocab: Vocabulary = DEFAULT_VOCAB) -> Iterator[Verdict]:
    """Yield verdicts block by block as each group of N windows completes.

    Flows are expected in time order; a flow belonging to an already
    emitted block is dropped with a warning.
    """
    current_block = None
    windows: dict[int, list[FlowRecord]] = {}
    late = 0

    def flush():
        aggs = []
        for w in sorted(windows):
            aggs.extend(aggregate_window(windows[w], w, labels, vocab))
        return _score_block(model, profile, aggs, normalizer, cfg)

    for f in flows:
        w = cfg.window_of(f.ts)
        b = cfg.block_of(w)
        if current_block is None:
            current_block = b
        if b < current_block:
            late += 1
            continue
        if b > current_block:
            yield from flush()
            windows = {}
            current_block = b
        windows.setdefault(w, []).append(f)
    if windows:
        yield from flush()
    if late:
        log.warning("dropped %d out-of-order flows", late)
