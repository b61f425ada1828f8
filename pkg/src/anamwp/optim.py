"""Decoupled-weight-decay Adam over Parameter lists."""

from __future__ import annotations

import numpy as np

from .autodiff import NonFiniteError, Parameter

__all__ = ["AdamW"]


class AdamW:
    """AdamW with bias-corrected moments and decoupled decay.

    Update per parameter:

        m <- b1*m + (1-b1)*g           v <- b2*v + (1-b2)*g^2
        p <- p - lr*wd*p - lr*mhat/(sqrt(vhat)+eps)

    Defaults: b1=0.9, b2=0.999, eps=1e-8, weight_decay=0.01. The decay is
    applied uniformly to every parameter in the group. State (m, v, step
    count) belongs to this instance; two optimizers over disjoint
    parameter sets never interact.
    """

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.params: list[Parameter] = list(params)
        if len({id(p) for p in self.params}) != len(self.params):
            raise ValueError("AdamW: duplicate parameter in group")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self._t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = np.zeros_like(p.data)

    def step(self, lr: float | None = None) -> None:
        """Apply one update using current .grad values.

        lr overrides the stored learning rate for this step (used by
        schedules); moment state advances either way.
        """
        if lr is None:
            lr = self.lr
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self._t
        bc2 = 1.0 - b2 ** self._t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"AdamW: non-finite gradient for {p.name or 'parameter'}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p.data -= lr * self.weight_decay * p.data
            p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)
