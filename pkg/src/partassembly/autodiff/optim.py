"""In-engine Adam optimizer and fan-in parameter initialization."""

import numpy as np

from .tensor import Tensor


def init_linear(rng, n_in, n_out):
    """Weight and bias Tensors, uniform in +-sqrt(1/n_in)."""
    bound = np.sqrt(1.0 / n_in)
    w = Tensor(rng.uniform(-bound, bound, size=(n_out, n_in)))
    b = Tensor(rng.uniform(-bound, bound, size=(n_out,)))
    return w, b


class Adam:
    """Adam with bias correction; update order follows parameter order."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        # params: ordered mapping name -> Tensor
        self.params = list(params.items())
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for _, p in self.params]
        self._v = [np.zeros_like(p.data) for _, p in self.params]

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for i, (_, p) in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self._m[i] = b1 * self._m[i] + (1.0 - b1) * g
            self._v[i] = b2 * self._v[i] + (1.0 - b2) * (g * g)
            m_hat = self._m[i] / bc1
            v_hat = self._v[i] / bc2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
