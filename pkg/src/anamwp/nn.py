"""Layers built on the autodiff primitives: embeddings, linear maps, GRU."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor

__all__ = ["uniform_init", "Embedding", "Linear", "GRUCell", "run_gru"]


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Embedding:
    """Lookup table (n_tokens, dim); ids index rows."""

    def __init__(self, rng, n_tokens: int, dim: int, name: str):
        self.table = Parameter(uniform_init(rng, (n_tokens, dim), dim), f"{name}.table")

    def __call__(self, ids) -> Tensor:
        return ad.take_rows(self.table, ids)

    def params(self) -> list[Parameter]:
        return [self.table]


class Linear:
    """x @ W + b with W (in, out). zero_init gives an all-zero layer,
    used for scoring heads so a fresh model produces exactly-neutral
    outputs."""

    def __init__(self, rng, in_dim: int, out_dim: int, name: str,
                 bias: bool = True, zero_init: bool = False):
        if zero_init:
            w = np.zeros((in_dim, out_dim))
        else:
            w = uniform_init(rng, (in_dim, out_dim), in_dim)
        self.w = Parameter(w, f"{name}.w")
        self.b = Parameter(np.zeros(out_dim), f"{name}.b") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, self.w)
        if self.b is not None:
            y = ad.add(y, self.b)
        return y

    def params(self) -> list[Parameter]:
        return [self.w] if self.b is None else [self.w, self.b]


class GRUCell:
    """Gated recurrent unit step.

        r = sigmoid(x Wr + h Ur + br)
        z = sigmoid(x Wz + h Uz + bz)
        n = tanh(x Wn + r * (h Un) + bn)
        h' = z * h + (1 - z) * n
    """

    def __init__(self, rng, in_dim: int, hidden_dim: int, name: str):
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim

        def mat(nm, rows, fan):
            return Parameter(uniform_init(rng, (rows, hidden_dim), fan), f"{name}.{nm}")

        self.wr = mat("wr", in_dim, in_dim)
        self.wz = mat("wz", in_dim, in_dim)
        self.wn = mat("wn", in_dim, in_dim)
        self.ur = mat("ur", hidden_dim, hidden_dim)
        self.uz = mat("uz", hidden_dim, hidden_dim)
        self.un = mat("un", hidden_dim, hidden_dim)
        self.br = Parameter(np.zeros(hidden_dim), f"{name}.br")
        self.bz = Parameter(np.zeros(hidden_dim), f"{name}.bz")
        self.bn = Parameter(np.zeros(hidden_dim), f"{name}.bn")

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        r = ad.sigmoid(ad.add(ad.add(ad.matmul(x, self.wr), ad.matmul(h, self.ur)), self.br))
        z = ad.sigmoid(ad.add(ad.add(ad.matmul(x, self.wz), ad.matmul(h, self.uz)), self.bz))
        n = ad.tanh(ad.add(ad.add(ad.matmul(x, self.wn), ad.mul(r, ad.matmul(h, self.un))), self.bn))
        # z*h + (1-z)*n, written as z*h + n - z*n to avoid a ones constant
        zn = ad.mul(z, n)
        return ad.add(ad.mul(z, h), ad.sub(n, zn))

    def params(self) -> list[Parameter]:
        return [self.wr, self.wz, self.wn, self.ur, self.uz, self.un,
                self.br, self.bz, self.bn]


def run_gru(cell: GRUCell, steps, mask: np.ndarray | None = None,
            h0: Tensor | None = None):
    """Drive a GRUCell over a list of (B, in_dim) step inputs.

    mask (B, T) of 0/1 floats freezes padded rows: where mask is 0 the
    previous state carries through unchanged. Returns (states, final)
    where states is the list of per-step (B, hidden) tensors.
    """
    if not steps:
        raise ad.ShapeError("run_gru: empty input sequence")
    batch = steps[0].data.shape[0]
    h = h0 if h0 is not None else Tensor(np.zeros((batch, cell.hidden_dim)))
    states = []
    for t, x in enumerate(steps):
        hn = cell(x, h)
        if mask is not None:
            m = mask[:, t : t + 1]
            h = ad.add(ad.mul(hn, Tensor(m)), ad.mul(h, Tensor(1.0 - m)))
        else:
            h = hn
        states.append(h)
    return states, h
