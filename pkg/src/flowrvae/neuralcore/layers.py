"""Parameterised layers: linear maps, GRU cells and fused GRU sequence ops."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .backend import kernels
from .tensor import Tensor, make_node


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Module:
    """Minimal parameter container; children and tensors are kept in insertion order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def add_param(self, name: str, t: Tensor) -> Tensor:
        self._params[name] = t
        return t

    def add_child(self, name: str, m: "Module") -> "Module":
        self._children[name] = m
        return m

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.w = self.add_param("w", uniform_init(rng, (n_in, n_out), n_in))
        self.b = self.add_param("b", uniform_init(rng, (n_out,), n_in))

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.w), self.b)


class GruCell(Module):
    """GRU weights. Columns of each 3H block are ordered [update, reset, candidate]."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        H = hidden_size
        self.w_ih = self.add_param("w_ih", uniform_init(rng, (input_size, 3 * H), input_size))
        self.w_hh = self.add_param("w_hh", uniform_init(rng, (H, 3 * H), H))
        self.b = self.add_param("b", uniform_init(rng, (3 * H,), H))


def gru_step(cell: GruCell, x_t: Tensor, h_prev: Tensor) -> Tensor:
    """One GRU update assembled from primitive ops (reference path)."""
    H = cell.hidden_size
    if x_t.shape[-1] != cell.input_size or h_prev.shape[-1] != H:
        raise ValueError(
            f"gru_step shape mismatch: x {x_t.shape}, h {h_prev.shape}, "
            f"cell ({cell.input_size} -> {H})"
        )
    gx = T.add(T.matmul(x_t, cell.w_ih), cell.b)
    u_zr = T.slice_(cell.w_hh, (slice(None), slice(0, 2 * H)))
    u_n = T.slice_(cell.w_hh, (slice(None), slice(2 * H, 3 * H)))
    gh = T.matmul(h_prev, u_zr)
    z = T.sigmoid(T.add(gx[:, 0:H], gh[:, 0:H]))
    r = T.sigmoid(T.add(gx[:, H : 2 * H], gh[:, H : 2 * H]))
    n = T.tanh(T.add(gx[:, 2 * H :], T.matmul(T.mul(r, h_prev), u_n)))
    return T.add(T.mul(T.sub(1.0, z), h_prev), T.mul(z, n))


def gru_recurrence(xp: Tensor, h0: Tensor, w_hh: Tensor, mask: np.ndarray) -> Tensor:
    """Fused time loop over precomputed input projections ``xp`` [T, B, 3H].

    Returns every hidden state [T, B, H]; where ``mask`` is 0 the state is
    carried unchanged, so the last row always holds the final valid state.
    """
    k = kernels()
    mask = np.ascontiguousarray(mask, dtype=np.float64)
    hs, zs, rs, ns = k.gru_scan_forward(xp.data, h0.data, w_hh.data, mask)

    def backward(g):
        dxp, dh0, dw = k.gru_scan_backward(g, h0.data, w_hh.data, mask, hs, zs, rs, ns)
        return dxp, dh0, dw

    return make_node(hs, (xp, h0, w_hh), backward, "gru_recurrence")


def gru_sequence(cell: GruCell, x: Tensor, mask: np.ndarray, h0: Tensor | None = None,
                 reverse: bool = False) -> Tensor:
    """Run ``cell`` over x [T, B, I]; returns hidden states [T, B, H] in input order."""
    steps, batch, n_in = x.shape
    H = cell.hidden_size
    if n_in != cell.input_size:
        raise ValueError(f"expected input width {cell.input_size}, got {n_in}")
    if h0 is None:
        h0 = Tensor(np.zeros((batch, H)))
    if reverse:
        x = T.flip(x, 0)
        mask = mask[::-1]
    xp = T.add(T.matmul(T.reshape(x, (steps * batch, n_in)), cell.w_ih), cell.b)
    hs = gru_recurrence(T.reshape(xp, (steps, batch, 3 * H)), h0, cell.w_hh, mask)
    return T.flip(hs, 0) if reverse else hs


def gru_autoregressive(cell: GruCell, out: Linear, h0: Tensor, steps: int) -> Tensor:
    """Decoder loop: zero first input, each later input is the previous sigmoid output.

    Returns output logits [steps, B, F]; the reconstruction is their sigmoid.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    k = kernels()
    logits, ys, hs, zs, rs, ns = k.gru_decode_forward(
        h0.data, cell.w_ih.data, cell.w_hh.data, cell.b.data, out.w.data, out.b.data, steps
    )

    def backward(g):
        dh0, dw_ih, dw_hh, db, dw_out, db_out = k.gru_decode_backward(
            g, h0.data, cell.w_ih.data, cell.w_hh.data, out.w.data, ys, hs, zs, rs, ns
        )
        return dh0, dw_ih, dw_hh, db, dw_out, db_out

    return make_node(
        logits, (h0, cell.w_ih, cell.w_hh, cell.b, out.w, out.b), backward, "gru_autoregressive"
    )


def gru_autoregressive_reference(cell: GruCell, out: Linear, h0: Tensor, steps: int) -> Tensor:
    """Same as :func:`gru_autoregressive` but unrolled with primitive ops."""
    batch = h0.shape[0]
    x = Tensor(np.zeros((batch, out.n_out)))
    h = h0
    logits = []
    for _ in range(steps):
        h = gru_step(cell, x, h)
        a = out(h)
        logits.append(T.reshape(a, (1, batch, out.n_out)))
        x = T.sigmoid(a)
    return T.concat(logits, axis=0)
