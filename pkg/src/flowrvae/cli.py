"""Stage-oriented command line: ingest, label, featurize, train, score, fit-pdf, detect, evaluate.

Every stage reads the resolved config (``--config`` or ``<out>/config.json``),
checks that its inputs were produced under the same config hash, writes its
artifacts into ``--out`` and records their digests in ``manifest.json``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import cache, detect, evaluation, features, ingest, synth
from .config import ConfigError, PipelineConfig
from .neuralcore import checkpoint
from .rvae import (build_model, load_model, save_model, score_sequences, train_semisupervised,
                   train_transfer_with_label, train_transfer_without_label)

log = logging.getLogger("flowrvae")

STAGE_VERSION = 1
SPLITS = ("train", "calib", "test")

FLOWS = "flows.cache"
LABELS = "labels.json"
FEATURES = "features.cache"
NORMALIZER = "normalizer.json"
MODEL = "model.ckpt"
TRAIN_LOG = "train_log.jsonl"
SCORES = "scores.jsonl"
PROFILE = "profile.json"
VERDICTS = "verdicts.jsonl"
REPORT_TXT = "report.txt"
REPORT_JSONL = "report.jsonl"
ROC_CSV = "roc.csv"
PR_CSV = "pr.csv"


class PipelineError(RuntimeError):
    pass


# ---------------------------------------------------------------- run context

class Run:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        self.hash = cfg.config_hash()
        self.warnings: list[str] = []

    def path(self, name: str) -> Path:
        return self.out / name

    def meta(self, stage: str, **extra) -> dict:
        return {"config_hash": self.hash, "seed": self.cfg.seed, "stage": stage,
                "stage_version": STAGE_VERSION, **extra}

    def check(self, meta: dict, name: str):
        if meta.get("stage_version") != STAGE_VERSION:
            raise PipelineError(f"{name} was written by stage version {meta.get('stage_version')}, "
                                f"expected {STAGE_VERSION}; re-run the producing stage")
        if meta.get("config_hash") != self.hash:
            raise PipelineError(f"{name} was produced under config {meta.get('config_hash')}, "
                                f"current config is {self.hash}; re-run the producing stage")

    def need(self, name: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise PipelineError(f"missing input {p}; run the stage that produces it first")
        return p

    def warn(self, msg: str):
        log.warning(msg)
        self.warnings.append(msg)

    # json helpers
    def write_json(self, name: str, stage: str, body: dict):
        doc = {"meta": self.meta(stage), **body}
        self.path(name).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def read_json(self, name: str) -> dict:
        doc = json.loads(self.need(name).read_text())
        self.check(doc.get("meta", {}), name)
        return doc

    def write_jsonl(self, name: str, stage: str, rows):
        lines = [json.dumps({"meta": self.meta(stage)}, sort_keys=True)]
        lines += [json.dumps(r, sort_keys=True) for r in rows]
        self.path(name).write_text("\n".join(lines) + "\n")

    def read_jsonl(self, name: str) -> list[dict]:
        lines = self.need(name).read_text().splitlines()
        if not lines:
            raise PipelineError(f"{name} is empty")
        self.check(json.loads(lines[0]).get("meta", {}), name)
        return [json.loads(x) for x in lines[1:] if x]

    def finish(self, stage: str, artifacts: list[str]):
        """Record the stage in the run manifest with artifact digests."""
        mpath = self.path("manifest.json")
        manifest = json.loads(mpath.read_text()) if mpath.exists() else {}
        if manifest.get("config_hash") != self.hash:
            manifest = {"config_hash": self.hash, "seed": self.cfg.seed, "stages": {}}
        digests = {a: hashlib.sha256(self.path(a).read_bytes()).hexdigest() for a in artifacts}
        manifest["stages"][stage] = {"stage_version": STAGE_VERSION, "artifacts": digests,
                                     "warnings": list(self.warnings)}
        mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        self.warnings = []


# ---------------------------------------------------------------- helpers

def _read_lines(path) -> list[str]:
    p = Path(path)
    if not p.exists():
        raise PipelineError(f"input file {p} does not exist")
    return p.read_text().splitlines()


def _load_labels(run: Run) -> ingest.HostLabelSet:
    doc = run.read_json(LABELS)
    return ingest.HostLabelSet({ip: ingest.HostLabelSet.MALICIOUS for ip in doc["malicious"]})


def _load_features(run: Run) -> list[features.AggFlow]:
    aggs, meta = cache.read_aggflows(run.need(FEATURES))
    run.check(meta, FEATURES)
    return aggs


def _load_normalizer(run: Run) -> features.NormalizerState:
    doc = run.read_json(NORMALIZER)
    if doc["normalizer"] is None:
        raise PipelineError("the normalizer was never fitted (no training AggFlows)")
    return features.NormalizerState.from_dict(doc["normalizer"])


def _load_model(run: Run):
    model, meta = load_model(run.need(MODEL))
    run.check(meta, MODEL)
    return model


def assign_splits(aggs, cfg: PipelineConfig) -> dict[int, str]:
    """Map each sequence block to train/calib/test by its position in time."""
    blocks = sorted({cfg.window.block_of(a.window_index) for a in aggs})
    n = len(blocks)
    n_train = max(1, int(np.floor(cfg.split.train * n))) if n else 0
    n_calib = int(np.floor(cfg.split.calib * n))
    out = {}
    for i, b in enumerate(blocks):
        out[b] = "train" if i < n_train else ("calib" if i < n_train + n_calib else "test")
    return out


def _split(aggs, name: str):
    return [a for a in aggs if a.tag == name]


def _sequences(run: Run, aggs, norm):
    return features.build_sequences(features.apply_normalizer(norm, aggs), run.cfg.window)


# ---------------------------------------------------------------- stages

def cmd_ingest(run: Run, args) -> None:
    cfg = run.cfg
    if not cfg.inputs.conn:
        raise PipelineError("no conn input given (inputs.conn or --conn)")
    lines = _read_lines(cfg.inputs.conn)
    if cfg.inputs.format == "zeek":
        flows = ingest.parse_conn_log(lines, vocab=cfg.vocab)
    else:
        flows = ingest.parse_flow_csv(lines, vocab=cfg.vocab)
    if flows.skipped:
        run.warn(f"skipped {len(flows.skipped)} malformed flow lines")
    if not flows:
        run.warn("no flows parsed from input")
    ordered = sorted(flows, key=lambda f: (f.ts, f.src_ip, f.dst_ip, f.src_port, f.dst_port))
    cache.save_flows(run.path(FLOWS), ordered,
                     run.meta("ingest", n_flows=len(ordered), n_skipped=len(flows.skipped)))
    run.finish("ingest", [FLOWS])


def cmd_label(run: Run, args) -> None:
    cfg = run.cfg
    if cfg.inputs.weird:
        events = ingest.parse_weird_log(_read_lines(cfg.inputs.weird))
        if events.skipped:
            run.warn(f"skipped {len(events.skipped)} weird lines")
        labels = ingest.derive_labels(events, cfg.indicators)
    else:
        run.warn("no weird log given; every host is labelled normal")
        labels = ingest.HostLabelSet()
    run.write_json(LABELS, "label", {"indicators": list(cfg.indicators),
                                     "malicious": labels.malicious_hosts()})
    run.finish("label", [LABELS])


def cmd_featurize(run: Run, args) -> None:
    cfg = run.cfg
    flows, meta = cache.read_flows(run.need(FLOWS))
    run.check(meta, FLOWS)
    labels = _load_labels(run)
    aggs = features.aggregate_flows(flows, cfg.window, labels, cfg.vocab)
    split_of = assign_splits(aggs, cfg)
    aggs = [replace(a, tag=split_of[cfg.window.block_of(a.window_index)]) for a in aggs]
    train = _split(aggs, "train")
    norm = None
    if train:
        norm = features.fit_normalizer(train, features.feature_names(cfg.vocab)).to_dict()
    else:
        run.warn("no AggFlows produced; feature cache is empty")
    counts = {s: len(_split(aggs, s)) for s in SPLITS}
    cache.save_aggflows(run.path(FEATURES), aggs, run.meta("featurize", counts=counts,
                                                           feature_names=features.feature_names(cfg.vocab)))
    run.write_json(NORMALIZER, "featurize", {"normalizer": norm})
    run.finish("featurize", [FEATURES, NORMALIZER])


def _new_model(cfg: PipelineConfig, n_features: int):
    return build_model({**cfg.model, "n_features": n_features}, seed=cfg.seed)


def cmd_train(run: Run, args) -> None:
    aggs = _load_features(run)
    norm = _load_normalizer(run)
    normal = [a for a in _split(aggs, "train") if not a.is_malicious]
    if not normal:
        raise PipelineError("training split holds no normal AggFlows")
    seqs = _sequences(run, normal, norm)
    # normal calibration AggFlows pick the best epoch
    val_normal = [a for a in _split(aggs, "calib") if not a.is_malicious]
    val = _sequences(run, val_normal, norm) if val_normal else None
    model = _new_model(run.cfg, len(norm.mins))
    model, tlog = train_semisupervised(model, seqs, run.cfg.train_config(), val)
    save_model(run.path(MODEL), model, run.meta("train", n_sequences=len(seqs),
                                                n_val_sequences=len(val or [])))
    run.path(TRAIN_LOG).write_text(tlog.to_jsonl())
    run.finish("train", [MODEL, TRAIN_LOG])


def cmd_transfer_train(run: Run, args) -> None:
    if not args.source:
        raise PipelineError("transfer-train needs --source DIR (a featurized source-domain run)")
    src = Run(replace(run.cfg, out_dir=args.source))
    src_aggs = _split(_load_features(src), "train")
    src_norm = _load_normalizer(src)
    tgt_aggs = _split(_load_features(run), "train")
    tgt_norm = _load_normalizer(run)
    if len(src_norm.mins) != len(tgt_norm.mins):
        raise PipelineError("source and target feature widths differ")
    src_neg = _sequences(src, [a for a in src_aggs if not a.is_malicious], src_norm)
    src_pos = _sequences(src, [a for a in src_aggs if a.is_malicious], src_norm)
    model = _new_model(run.cfg, len(tgt_norm.mins))
    tcfg = run.cfg.train_config()
    if run.cfg.transfer_variant == "with_label":
        tgt = _sequences(run, [a for a in tgt_aggs if not a.is_malicious], tgt_norm)
        model, tlog = train_transfer_with_label(model, src_neg, src_pos, tgt, tcfg)
    else:
        tgt = _sequences(run, tgt_aggs, tgt_norm)
        model, tlog = train_transfer_without_label(model, src_neg, src_pos, tgt, tcfg)
    save_model(run.path(MODEL), model, run.meta("transfer-train", variant=run.cfg.transfer_variant))
    run.path(TRAIN_LOG).write_text(tlog.to_jsonl())
    run.finish("transfer-train", [MODEL, TRAIN_LOG])


def cmd_score(run: Run, args) -> None:
    aggs = _load_features(run)
    norm = _load_normalizer(run)
    model = _load_model(run)
    rows = []
    for split in ("calib", "test"):
        part = _split(aggs, split)
        if not part:
            run.warn(f"{split} split is empty")
            continue
        for r in score_sequences(model, _sequences(run, part, norm)):
            rows.append({"split": split, **r.to_dict()})
    run.write_jsonl(SCORES, "score", rows)
    run.finish("score", [SCORES])


def cmd_fit_pdf(run: Run, args) -> None:
    rows = [r for r in run.read_jsonl(SCORES) if r["split"] == "calib"]
    normal = [r["score"] for r in rows if r["label"] != ingest.HostLabelSet.MALICIOUS]
    botnet = [r["score"] for r in rows if r["label"] == ingest.HostLabelSet.MALICIOUS]
    det = run.cfg.detection
    try:
        profile = detect.fit_profile(normal, botnet, det.families, det.bins, run.cfg.workers)
    except detect.FitError as exc:
        raise PipelineError(f"cannot fit detection profile on the calibration split: {exc}") from exc
    profile.meta = run.meta("fit-pdf", n_normal=len(normal), n_botnet=len(botnet))
    profile.save(run.path(PROFILE))
    run.finish("fit-pdf", [PROFILE])


def cmd_detect(run: Run, args) -> None:
    cfg = run.cfg
    flows, meta = cache.read_flows(run.need(FLOWS))
    run.check(meta, FLOWS)
    labels = _load_labels(run)
    norm = _load_normalizer(run)
    model = _load_model(run)
    profile = detect.DetectorProfile.load(run.need(PROFILE))
    run.check(profile.meta, PROFILE)
    test_windows = {a.window_index for a in _split(_load_features(run), "test")}
    stream = (f for f in flows if cfg.window.window_of(f.ts) in test_windows)
    verdicts = [v.to_dict() for v in detect.detect_stream(model, profile, stream, norm, cfg.window,
                                                          labels, cfg.vocab)]
    if not verdicts:
        run.warn("no test-split flows to classify")
    run.write_jsonl(VERDICTS, "detect", verdicts)
    run.finish("detect", [VERDICTS])


def cmd_evaluate(run: Run, args) -> None:
    rows = run.read_jsonl(VERDICTS)
    scores = np.array([r["score"] for r in rows], dtype=float)
    y = np.array([r["label"] == ingest.HostLabelSet.MALICIOUS for r in rows], dtype=bool)
    pred = np.array([r["verdict"] == ingest.HostLabelSet.MALICIOUS for r in rows], dtype=bool)
    report = {"test": evaluation.metric_report(scores, y, pred)}
    if report["test"]["auroc"] is None:
        run.warn("test split lacks one class; rank metrics are undefined")
    header = f"# config {run.hash} seed {run.cfg.seed} window {run.cfg.window.duration_s:g}s\n"
    run.path(REPORT_TXT).write_text(header + evaluation.format_report(report))
    run.path(REPORT_JSONL).write_text(evaluation.report_jsonl(report))
    artifacts = [REPORT_TXT, REPORT_JSONL]
    if report["test"]["auroc"] is not None:
        fpr, tpr, thr = evaluation.roc_curve(scores, y)
        evaluation.write_curve_csv(run.path(ROC_CSV), {"threshold": thr, "fpr": fpr, "tpr": tpr})
        prec, rec, thr = evaluation.pr_curve(scores, y)
        evaluation.write_curve_csv(run.path(PR_CSV), {"threshold": thr, "precision": prec,
                                                      "recall": rec})
        artifacts += [ROC_CSV, PR_CSV]
    run.finish("evaluate", artifacts)
    sys.stdout.write(evaluation.format_report(report))


PIPELINE = (("ingest", cmd_ingest), ("label", cmd_label), ("featurize", cmd_featurize),
            ("train", cmd_train), ("score", cmd_score), ("fit-pdf", cmd_fit_pdf),
            ("detect", cmd_detect), ("evaluate", cmd_evaluate))


def cmd_run(run: Run, args) -> None:
    for name, fn in PIPELINE:
        log.info("stage %s", name)
        fn(run, args)


def cmd_synth(run: Run, args) -> None:
    fx = synth.FixtureConfig(n_windows=args.windows, seed=run.cfg.seed)
    conn, weird = synth.write_fixture(run.out, fx)
    log.info("wrote %s and %s", conn, weird)


COMMANDS = dict(PIPELINE, **{"transfer-train": cmd_transfer_train, "run": cmd_run,
                             "synth": cmd_synth})


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline config (default: <out>/config.json)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (overrides out_dir)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="flowrvae", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name in ("ingest", "run"):
            sp.add_argument("--conn", help="conn.log (or flow CSV) path")
            sp.add_argument("--format", choices=("zeek", "csv"))
        if name in ("label", "run"):
            sp.add_argument("--weird", help="weird.log path")
        if name == "transfer-train":
            sp.add_argument("--source", help="run directory of the featurized source domain")
        if name == "synth":
            sp.add_argument("--windows", type=int, default=240, help="number of 60 s windows")
    return p


def resolve_config(args) -> PipelineConfig:
    if args.config:
        if not Path(args.config).exists():
            raise PipelineError(f"config file {args.config} does not exist")
        cfg = PipelineConfig.load(args.config)
    elif args.out and (Path(args.out) / "config.json").exists():
        cfg = PipelineConfig.load(Path(args.out) / "config.json")
    else:
        cfg = PipelineConfig()
    return cfg.with_overrides(seed=args.seed, out_dir=args.out,
                              conn=getattr(args, "conn", None), weird=getattr(args, "weird", None),
                              format=getattr(args, "format", None))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        run = Run(cfg)
        run.out.mkdir(parents=True, exist_ok=True)
        if args.command != "synth":
            cfg.save(run.path("config.json"))
        COMMANDS[args.command](run, args)
    except (PipelineError, ConfigError, ingest.ParseError, cache.CacheError,
            checkpoint.CheckpointError) as exc:
        print(f"flowrvae {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
