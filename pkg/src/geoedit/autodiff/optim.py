"""Gradient-descent optimizers over Parameter lists."""

import numpy as np

from ..errors import ContractError


class Adam:
    """Adam with bias-corrected moment estimates.

    Moment buffers live per parameter (keyed by identity), so a parameter
    set must stay fixed across steps.  A step with no gradients raises; a
    parameter whose gradient is identically zero is left unchanged.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        if not self.params:
            raise ContractError("Adam requires at least one parameter")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        if all(p.grad is None for p in self.params):
            raise ContractError("Adam.step called but no parameter has a gradient")
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self._m[i] / b1t
            v_hat = self._v[i] / b2t
            new = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.data = new
            p.data.setflags(write=False)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
