"""Dense ReLU network with hand-written backpropagation."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def dueling_combine(value, advantages):
    """Q_a = V + A_a - mean(A). Works on a single vector or a batch."""
    advantages = np.asarray(advantages, dtype=float)
    if advantages.shape[-1] == 0:
        raise ShapeError("advantages must be non-empty")
    value = np.asarray(value, dtype=float)
    return value[..., None] + advantages - advantages.mean(axis=-1, keepdims=True)


class Mlp:
    """Affine + ReLU stack; the last layer is linear.

    All parameters live in one flat float64 vector ``params``; ``weights[l]``
    (shape ``(n_in, n_out)``) and ``biases[l]`` are views into it, stored layer
    by layer with each weight matrix row-major and followed by its bias.
    With ``dueling=True`` output column 0 is the state value and the rest
    are action advantages.
    """

    def __init__(self, layer_sizes, dueling=True, rng=None, params=None):
        self.layer_sizes = [int(n) for n in layer_sizes]
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ShapeError(f"bad layer sizes {layer_sizes!r}")
        if dueling and self.layer_sizes[-1] < 2:
            raise ShapeError("a dueling net needs a value and at least one advantage output")
        self.dueling = dueling
        self.params = np.zeros(self.n_params)
        self._bind()
        if params is not None:
            params = np.asarray(params, dtype=float)
            if params.shape != self.params.shape:
                raise ShapeError(f"expected {self.n_params} parameters, got {params.shape}")
            self.params[:] = params
        elif rng is not None:
            self.init(rng)
        self._cache = None

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum((a + 1) * b for a, b in zip(s[:-1], s[1:]))

    @property
    def n_actions(self) -> int:
        return self.layer_sizes[-1] - 1 if self.dueling else self.layer_sizes[-1]

    def _bind(self):
        self.weights, self.biases = [], []
        off = 0
        for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            self.weights.append(self.params[off:off + a * b].reshape(a, b))
            off += a * b
            self.biases.append(self.params[off:off + b])
            off += b

    def init(self, rng):
        last = len(self.weights) - 1
        for l, W in enumerate(self.weights):
            scale = np.sqrt(2.0 / W.shape[0])
            if l == last:
                scale *= 0.1
            W[:] = rng.standard_normal(W.shape) * scale
            self.biases[l][:] = 0.0

    def copy(self) -> Mlp:
        return Mlp(self.layer_sizes, self.dueling, params=self.params.copy())

    def forward(self, x, cache=False):
        """Raw head outputs for ``x`` of shape (n_in,) or (batch, n_in)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.layer_sizes[0]:
            raise ShapeError(f"input shape {x.shape} does not match first layer {self.layer_sizes[0]}")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if l < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        if cache:
            self._cache = acts
        return h[0] if single else h

    def q_values(self, x, cache=False):
        out = self.forward(x, cache=cache)
        if not self.dueling:
            return out
        return dueling_combine(out[..., 0], out[..., 1:])

    def backward(self, grad_out) -> np.ndarray:
        """Gradient of the flat parameters, given d(loss)/d(raw output).

        Uses the activations cached by the last ``forward(..., cache=True)``.
        """
        if self._cache is None:
            raise RuntimeError("backward() needs a cached forward pass")
        acts = self._cache
        g = np.asarray(grad_out, dtype=float)
        if g.ndim == 1:
            g = g[None, :]
        grad = np.empty_like(self.params)
        off_end = self.n_params
        for l in range(len(self.weights) - 1, -1, -1):
            W = self.weights[l]
            a, b = W.shape
            h_in = acts[l]
            gb = g.sum(axis=0)
            gW = h_in.T @ g
            grad[off_end - b:off_end] = gb
            grad[off_end - b - a * b:off_end - b] = gW.ravel()
            off_end -= a * b + b
            if l > 0:
                g = (g @ W.T) * (h_in > 0.0)
        return grad

    def backward_q(self, grad_q) -> np.ndarray:
        """Like :meth:`backward` but starting from d(loss)/dQ."""
        grad_q = np.asarray(grad_q, dtype=float)
        if not self.dueling:
            return self.backward(grad_q)
        gv = grad_q.sum(axis=-1, keepdims=True)
        ga = grad_q - grad_q.mean(axis=-1, keepdims=True)
        return self.backward(np.concatenate([gv, ga], axis=-1))


def mlp_forward(net: Mlp, x):
    """(value, advantages) for dueling nets, raw outputs otherwise."""
    out = net.forward(x)
    if net.dueling:
        return out[..., 0], out[..., 1:]
    return out


def mlp_backward(net: Mlp, x, grad_out) -> np.ndarray:
    net.forward(x, cache=True)
    return net.backward(grad_out)


class RMSProp:
    def __init__(self, n, lr=3e-4, decay=0.99, eps=1e-8):
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.sq = np.zeros(n)

    def step(self, params, grad):
        self.sq *= self.decay
        self.sq += (1.0 - self.decay) * grad * grad
        params -= self.lr * grad / (np.sqrt(self.sq) + self.eps)
