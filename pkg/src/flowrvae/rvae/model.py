"""Recurrent VAE over AggFlow sequences and the per-flow MLP-VAE baseline."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from ..features import FlowSequence
from ..neuralcore import checkpoint
from ..neuralcore import tensor as T
from ..neuralcore.layers import GruCell, Linear, Module, gru_autoregressive, gru_sequence
from ..neuralcore.tensor import Tensor, no_grad

PROB_CLAMP = 1e-7

SequenceLike = Union[FlowSequence, np.ndarray]


@dataclass
class SeqBatch:
    """Zero-padded batch: x [T, B, F], mask [T, B] (1 = valid), lengths [B]."""

    x: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray

    @property
    def steps(self) -> int:
        return self.x.shape[0]

    @property
    def size(self) -> int:
        return self.x.shape[1]


def as_matrix(seq: SequenceLike) -> np.ndarray:
    m = seq.matrix() if isinstance(seq, FlowSequence) else np.asarray(seq, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0:
        raise ValueError("a sequence must be a non-empty [steps, features] matrix")
    return m


def collate(seqs: Sequence[SequenceLike]) -> SeqBatch:
    mats = [as_matrix(s) for s in seqs]
    if not mats:
        raise ValueError("empty batch")
    lengths = np.array([m.shape[0] for m in mats])
    steps, width = int(lengths.max()), mats[0].shape[1]
    x = np.zeros((steps, len(mats), width))
    mask = np.zeros((steps, len(mats)))
    for b, m in enumerate(mats):
        if m.shape[1] != width:
            raise ValueError("all sequences in a batch need the same feature width")
        x[: m.shape[0], b] = m
        mask[: m.shape[0], b] = 1.0
    return SeqBatch(x, mask, lengths)


def kl_divergence(mu: Tensor, log_var: Tensor) -> Tensor:
    """Closed-form KL(N(mu, exp(log_var)) || N(0, I)) per row, shape [B]."""
    inner = T.sub(T.sub(T.add(1.0, log_var), T.square(mu)), T.exp(log_var))
    return T.mul(T.sum_(inner, axis=1), -0.5)


def clamped_bce(y: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Per-element BCE with probabilities clamped to [1e-7, 1 - 1e-7]."""
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def binary_entropy(y: np.ndarray) -> np.ndarray:
    """Lower bound of :func:`clamped_bce` for target y, under the same clamp."""
    return clamped_bce(y, y)


def reparameterize(mu: Tensor, log_var: Tensor, rng: np.random.Generator | None) -> Tensor:
    """z = mu + exp(log_var / 2) * eps; with ``rng=None`` (evaluation) z = mu."""
    if rng is None:
        return mu
    eps = rng.standard_normal(mu.shape)
    return T.add(mu, T.mul(T.exp(T.mul(log_var, 0.5)), eps))


class VaeBase(Module):
    kind = "base"

    def config(self) -> dict:
        raise NotImplementedError

    def instance_losses(self, batch: SeqBatch, rng) -> tuple[Tensor, Tensor]:
        """Per-instance reconstruction error and KL, both shape [n_instances]."""
        raise NotImplementedError

    def timestep_scores(self, batch: SeqBatch) -> np.ndarray:
        """Evaluation-mode per-timestep BCE, [T, B]; NaN at padded positions."""
        raise NotImplementedError

    def loss(self, batch: SeqBatch, beta: float, rng=None) -> tuple[Tensor, Tensor, Tensor]:
        recon, kl = self.instance_losses(batch, rng)
        recon_term = T.mean(recon)
        kl_term = T.mean(kl)
        total = T.add(recon_term, T.mul(kl_term, beta))
        return total, recon_term, kl_term

    def instance_scores(self, batch: SeqBatch) -> np.ndarray:
        """Evaluation-mode per-instance reconstruction error (no sampling)."""
        with no_grad():
            recon, _ = self.instance_losses(batch, None)
        return recon.data.copy()


class RvaeModel(VaeBase):
    """Bidirectional multi-layer GRU encoder, GRU decoder seeded with the latent code."""

    kind = "rvae"

    def __init__(self, n_features: int, hidden: int = 512, latent: int = 100, layers: int = 2,
                 seed: int | np.random.Generator = 0):
        super().__init__()
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.n_features, self.hidden, self.latent, self.layers = n_features, hidden, latent, layers
        self.enc_fwd: list[GruCell] = []
        self.enc_bwd: list[GruCell] = []
        for layer in range(layers):
            n_in = n_features if layer == 0 else 2 * hidden
            self.enc_fwd.append(self.add_child(f"enc{layer}_fwd", GruCell(n_in, hidden, rng)))
            self.enc_bwd.append(self.add_child(f"enc{layer}_bwd", GruCell(n_in, hidden, rng)))
        self.w_mu = self.add_child("w_mu", Linear(2 * hidden, latent, rng))
        self.w_sigma = self.add_child("w_sigma", Linear(2 * hidden, latent, rng))
        self.dec = self.add_child("dec", GruCell(n_features, latent, rng))
        self.w_s = self.add_child("w_s", Linear(latent, n_features, rng))

    def config(self) -> dict:
        return {"kind": self.kind, "n_features": self.n_features, "hidden": self.hidden,
                "latent": self.latent, "layers": self.layers}

    def encode_batch(self, batch: SeqBatch) -> tuple[Tensor, Tensor]:
        x: Tensor = Tensor(batch.x)
        h_final = None
        for fwd, bwd in zip(self.enc_fwd, self.enc_bwd):
            hf = gru_sequence(fwd, x, batch.mask)
            hb = gru_sequence(bwd, x, batch.mask, reverse=True)
            x = T.concat([hf, hb], axis=2)
            # forward state is carried to the last row; backward finishes at row 0
            h_final = T.concat([hf[-1], hb[0]], axis=1)
        return self.w_mu(h_final), self.w_sigma(h_final)

    def decode_logits(self, z: Tensor, steps: int) -> Tensor:
        return gru_autoregressive(self.dec, self.w_s, z, steps)

    def instance_losses(self, batch, rng):
        mu, log_var = self.encode_batch(batch)
        z = reparameterize(mu, log_var, rng)
        logits = self.decode_logits(z, batch.steps)
        per_step = T.sum_(T.bce_with_logits(logits, batch.x), axis=2)  # [T, B]
        masked = T.mul(per_step, batch.mask)
        recon = T.mul(T.sum_(masked, axis=0), 1.0 / batch.lengths)
        return recon, kl_divergence(mu, log_var)

    def timestep_scores(self, batch):
        with no_grad():
            mu, _ = self.encode_batch(batch)
            probs = T.sigmoid_np(self.decode_logits(mu, batch.steps).data)
        scores = clamped_bce(batch.x, probs).sum(axis=2)
        return np.where(batch.mask > 0, scores, np.nan)


class MlpVaeModel(VaeBase):
    """Per-AggFlow dense VAE; every valid timestep is an independent instance."""

    kind = "mlp_vae"

    def __init__(self, n_features: int, hidden: Sequence[int] = (512, 512, 1024),
                 latent: int = 100, seed: int | np.random.Generator = 0):
        super().__init__()
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.n_features, self.hidden, self.latent = n_features, tuple(hidden), latent
        sizes = [n_features, *self.hidden]
        self.enc = [self.add_child(f"enc{i}", Linear(a, b, rng))
                    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]
        self.w_mu = self.add_child("w_mu", Linear(sizes[-1], latent, rng))
        self.w_sigma = self.add_child("w_sigma", Linear(sizes[-1], latent, rng))
        dsizes = [latent, *reversed(self.hidden)]
        self.dec = [self.add_child(f"dec{i}", Linear(a, b, rng))
                    for i, (a, b) in enumerate(zip(dsizes[:-1], dsizes[1:]))]
        self.out = self.add_child("out", Linear(dsizes[-1], n_features, rng))

    def config(self) -> dict:
        return {"kind": self.kind, "n_features": self.n_features, "hidden": list(self.hidden),
                "latent": self.latent}

    @staticmethod
    def _flatten(batch: SeqBatch) -> tuple[np.ndarray, np.ndarray]:
        valid = batch.mask > 0
        return batch.x[valid], valid

    def _encode(self, x: Tensor) -> tuple[Tensor, Tensor]:
        h = x
        for layer in self.enc:
            h = T.relu(layer(h))
        return self.w_mu(h), self.w_sigma(h)

    def _decode_logits(self, z: Tensor) -> Tensor:
        h = z
        for layer in self.dec:
            h = T.relu(layer(h))
        return self.out(h)

    def instance_losses(self, batch, rng):
        x, _ = self._flatten(batch)
        mu, log_var = self._encode(Tensor(x))
        logits = self._decode_logits(reparameterize(mu, log_var, rng))
        recon = T.sum_(T.bce_with_logits(logits, x), axis=1)
        return recon, kl_divergence(mu, log_var)

    def timestep_scores(self, batch):
        x, valid = self._flatten(batch)
        with no_grad():
            mu, _ = self._encode(Tensor(x))
            probs = T.sigmoid_np(self._decode_logits(mu).data)
        out = np.full(batch.mask.shape, np.nan)
        out[valid] = clamped_bce(x, probs).sum(axis=1)
        return out


def build_model(config: dict, seed=0) -> VaeBase:
    cfg = dict(config)
    kind = cfg.pop("kind")
    if kind == RvaeModel.kind:
        return RvaeModel(seed=seed, **cfg)
    if kind == MlpVaeModel.kind:
        return MlpVaeModel(seed=seed, **cfg)
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(path, model: VaeBase, meta: dict | None = None, optimizer=None):
    tensors = model.state_dict()
    if optimizer is not None:
        for name in optimizer.params:
            tensors[f"adam.m.{name}"] = optimizer.state.m[name]
            tensors[f"adam.v.{name}"] = optimizer.state.v[name]
    full_meta = {"model": model.config(), **(meta or {})}
    if optimizer is not None:
        s = optimizer.state
        full_meta["adam"] = {"lr": s.lr, "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps,
                             "step": s.step}
    checkpoint.save(path, tensors, full_meta)


def load_model(path) -> tuple[VaeBase, dict]:
    tensors, meta = checkpoint.load(path)
    model = build_model(meta["model"])
    params = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    model.load_state_dict(params)
    return model, meta


# Single-sequence conveniences.

def encode(model: RvaeModel, seq: SequenceLike) -> tuple[np.ndarray, np.ndarray]:
    with no_grad():
        mu, log_var = model.encode_batch(collate([seq]))
    return mu.data[0], log_var.data[0]


def decode(model: RvaeModel, z, steps: int) -> np.ndarray:
    """Reconstruction probabilities [steps, F] for one latent vector."""
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    with no_grad():
        logits = model.decode_logits(Tensor(z), steps)
    return T.sigmoid_np(logits.data[:, 0, :])


def loss(model: VaeBase, seq: SequenceLike, beta: float, rng=None) -> tuple[float, float, float]:
    with no_grad():
        total, recon, kl = model.loss(collate([seq]), beta, rng)
    return total.item(), recon.item(), kl.item()
