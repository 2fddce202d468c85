"""Semi-supervised and transfer trainers for the VAE models."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

from ..features import FlowSequence
from ..neuralcore import tensor as T
from ..neuralcore.optim import Adam
from ..neuralcore.tensor import no_grad
from .model import SequenceLike, VaeBase, collate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 128
    lr: float = 0.01
    beta_final: float = 1.0
    beta_anneal_steps: int = 500
    margin_weight: float = 1.0  # lambda on the source anomaly margin
    r_s: float = 0.1  # fraction of each target minibatch carried forward (without_label)
    warmup_epochs: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.beta_anneal_steps < 1:
            raise ValueError("epochs, batch_size and beta_anneal_steps must be positive")
        if not self.lr > 0 or self.beta_final < 0 or self.margin_weight < 0:
            raise ValueError("lr must be > 0; beta_final and margin_weight must be >= 0")
        if not 0.0 < self.r_s < 1.0:
            raise ValueError("r_s must lie in (0, 1)")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def beta_at(update: int, cfg: TrainConfig) -> float:
    """KL weight for the ``update``-th gradient update (0-based), linear 0 -> beta_final."""
    return cfg.beta_final * min(1.0, update / cfg.beta_anneal_steps)


@dataclass
class TrainingLog:
    records: list[dict] = field(default_factory=list)
    source_updates: int = 0
    target_updates: int = 0

    def add(self, **rec):
        self.records.append(rec)

    def epoch_losses(self, phase: str = "train") -> list[float]:
        return [r["loss"] for r in self.records if r.get("phase") == phase]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


def _check_normal(seqs: Sequence[SequenceLike], what: str):
    for s in seqs:
        if isinstance(s, FlowSequence) and s.labels().any():
            raise ValueError(f"{what} must contain only normal-labelled AggFlows")


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _cycle(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    while True:
        yield from _batches(n, batch_size, rng)


def _take(seqs: Sequence[SequenceLike], idx) -> list[SequenceLike]:
    return [seqs[i] for i in idx]


def _sgd_step(model: VaeBase, opt: Adam, loss: T.Tensor):
    opt.zero_grad()
    loss.backward()
    opt.step()


def validation_loss(model: VaeBase, seqs: Sequence[SequenceLike], beta: float,
                    batch_size: int = 128) -> float:
    """Evaluation-mode loss (z = mu), weighted by instance count."""
    total, count = 0.0, 0
    with no_grad():
        for i in range(0, len(seqs), batch_size):
            recon, kl = model.instance_losses(collate(seqs[i : i + batch_size]), None)
            total += float(np.sum(recon.data + beta * kl.data))
            count += recon.data.size
    return total / max(count, 1)


def train_semisupervised(model: VaeBase, sequences: Sequence[SequenceLike], cfg: TrainConfig,
                         val_sequences: Sequence[SequenceLike] | None = None
                         ) -> tuple[VaeBase, TrainingLog]:
    """Fit ``model`` on normal-only sequences with KL-annealed VAE loss and Adam.

    When ``val_sequences`` is given the parameters with the lowest
    validation loss are restored at the end.
    """
    if not sequences:
        raise ValueError("empty training set")
    _check_normal(sequences, "training sequences")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.named_parameters(), lr=cfg.lr)
    tlog = TrainingLog()
    update = 0
    best = (np.inf, None)
    for epoch in range(1, cfg.epochs + 1):
        sums = np.zeros(3)
        nb = 0
        for idx in _batches(len(sequences), cfg.batch_size, rng):
            beta = beta_at(update, cfg)
            total, recon, kl = model.loss(collate(_take(sequences, idx)), beta, rng)
            _sgd_step(model, opt, total)
            update += 1
            sums += (total.item(), recon.item(), kl.item())
            nb += 1
        sums /= nb
        rec = dict(phase="train", epoch=epoch, step=update, loss=sums[0], recon=sums[1],
                   kl=sums[2], beta=beta)
        if val_sequences:
            vl = validation_loss(model, val_sequences, cfg.beta_final)
            rec["val_loss"] = vl
            if vl < best[0]:
                best = (vl, model.state_dict())
        tlog.add(**rec)
        log.debug("epoch %d loss %.5f", epoch, sums[0])
    tlog.source_updates = update
    if best[1] is not None:
        model.load_state_dict(best[1])
    return model, tlog


def source_loss(model: VaeBase, neg: Sequence[SequenceLike], pos: Sequence[SequenceLike],
                beta: float, margin_weight: float, rng) -> tuple[T.Tensor, dict]:
    """Source-domain objective: normal reconstruction minus a sigmoid ranking margin, plus KL.

    The margin is the mean over all (normal, anomalous) pairs of
    sigmoid(err(anomalous) - err(normal)).
    """
    recon_n, kl_n = model.instance_losses(collate(neg), rng)
    recon_term = T.mean(recon_n)
    kl_term = T.mean(kl_n)
    total = T.add(recon_term, T.mul(kl_term, beta))
    margin_val = 0.0
    if margin_weight > 0:
        recon_p, _ = model.instance_losses(collate(pos), rng)
        diff = T.sub(T.reshape(recon_p, (1, -1)), T.reshape(recon_n, (-1, 1)))
        margin = T.mean(T.sigmoid(diff))
        margin_val = margin.item()
        total = T.sub(total, T.mul(margin, margin_weight))
    return total, {"recon": recon_term.item(), "kl": kl_term.item(), "margin": margin_val}


def target_loss(model: VaeBase, seqs: Sequence[SequenceLike], beta: float, rng
                ) -> tuple[T.Tensor, dict]:
    """Mean reconstruction over the given target instances plus KL (duplicates count twice)."""
    recon, kl = model.instance_losses(collate(seqs), rng)
    recon_term = T.mean(recon)
    kl_term = T.mean(kl)
    total = T.add(recon_term, T.mul(kl_term, beta))
    return total, {"recon": recon_term.item(), "kl": kl_term.item(), "m_t": len(seqs)}


def carry_lowest(scores: np.ndarray, r_s: float) -> np.ndarray:
    """Indices of the ``max(1, floor(r_s * n))`` lowest scores (stable order)."""
    n = len(scores)
    k = min(n, max(1, int(np.floor(r_s * n + 1e-9))))
    return np.argsort(scores, kind="stable")[:k]


def _transfer(model, src_neg, src_pos, tgt, cfg: TrainConfig, carry: bool,
              ) -> tuple[VaeBase, TrainingLog]:
    for name, s in (("source normal", src_neg), ("source anomalous", src_pos), ("target", tgt)):
        if not s:
            raise ValueError(f"{name} set is empty")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.named_parameters(), lr=cfg.lr)
    tlog = TrainingLog()
    update = 0
    bs = cfg.batch_size
    pos_stream = _cycle(len(src_pos), bs, rng)
    for epoch in range(1, cfg.epochs + 1):
        neg_batches = _batches(len(src_neg), bs, rng)
        tgt_batches = _batches(len(tgt), bs, rng)
        n_iter = max(len(neg_batches), len(tgt_batches))
        neg_stream = _cycle_list(neg_batches, len(src_neg), bs, rng)
        tgt_stream = _cycle_list(tgt_batches, len(tgt), bs, rng)
        carried: list[SequenceLike] = []
        sums = np.zeros(2)
        for _ in range(n_iter):
            beta = beta_at(update, cfg)
            loss_s, _ = source_loss(model, _take(src_neg, next(neg_stream)),
                                    _take(src_pos, next(pos_stream)), beta, cfg.margin_weight, rng)
            _sgd_step(model, opt, loss_s)
            update += 1
            tlog.source_updates += 1

            beta = beta_at(update, cfg)
            fresh = _take(tgt, next(tgt_stream))
            use_carry = carry and epoch > cfg.warmup_epochs
            loss_t, _ = target_loss(model, fresh + carried if use_carry else fresh, beta, rng)
            _sgd_step(model, opt, loss_t)
            update += 1
            tlog.target_updates += 1
            if use_carry:
                scores = model.instance_scores(collate(fresh))
                carried = [fresh[i] for i in carry_lowest(scores, cfg.r_s)]
            sums += (loss_s.item(), loss_t.item())
        sums /= n_iter
        tlog.add(phase="train", epoch=epoch, step=update, loss=float(sums.sum()),
                 source_loss=sums[0], target_loss=sums[1], beta=beta)
    return model, tlog


def _cycle_list(first: list[np.ndarray], n: int, bs: int, rng) -> Iterator[np.ndarray]:
    yield from first
    yield from _cycle(n, bs, rng)


def train_transfer_with_label(model: VaeBase, source_normal: Sequence[SequenceLike],
                              source_anomalous: Sequence[SequenceLike],
                              target_normal: Sequence[SequenceLike], cfg: TrainConfig
                              ) -> tuple[VaeBase, TrainingLog]:
    """Alternate one source update and one target-normal update per iteration."""
    return _transfer(model, source_normal, source_anomalous, target_normal, cfg, carry=False)


def train_transfer_without_label(model: VaeBase, source_normal: Sequence[SequenceLike],
                                 source_anomalous: Sequence[SequenceLike],
                                 target: Sequence[SequenceLike], cfg: TrainConfig
                                 ) -> tuple[VaeBase, TrainingLog]:
    """As with_label, but the target set is unlabelled.

    After the warm-up epochs each target minibatch is joined by the
    lowest-error ``r_s`` fraction of the previous minibatch, so likely-normal
    instances are seen twice. The carried set is reset at every epoch.
    """
    return _transfer(model, source_normal, source_anomalous, target, cfg, carry=True)
