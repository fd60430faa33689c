"""Small dense networks with hand-written reverse mode and an Adam optimizer.

The networks here stand in for both the stage-1 generator and the
time-conditioned stage-2 debiasing network.  They are plain multilayer
perceptrons with an optional input-to-output skip connection and an
optional sinusoidal step embedding concatenated to the input.

Arrays are float64 numpy arrays throughout.  Inputs may be a single vector
of shape ``(d,)`` or a batch of shape ``(batch, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "ACTIVATIONS",
    "MlpSpec",
    "TimeConditionedNet",
    "AdamState",
    "time_embedding",
    "net_forward",
    "net_backward",
    "adam_step",
    "grad_check",
    "max_relative_error",
]

ACTIVATIONS = ("tanh", "relu")


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal step embedding.

    Entry ``2i`` is ``sin(t / 10000**(2i/dim))`` and entry ``2i+1`` the
    matching cosine.  ``t`` may be a scalar (result shape ``(dim,)``) or a
    1-d array of steps (result shape ``(len(t), dim)``).
    """
    dim = int(dim)
    if dim <= 0 or dim % 2:
        raise ValueError(f"embedding dim must be a positive even integer, got {dim}")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise ValueError("time step must be nonnegative")
    freqs = 10000.0 ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    angles = t_arr[..., None] * freqs
    out = np.empty(t_arr.shape + (dim,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a :class:`TimeConditionedNet`.

    ``layer_widths`` lists the data input width, hidden widths and output
    width.  The step embedding (when ``time_embed_dim > 0``) is concatenated
    to the input, so the first weight matrix has ``layer_widths[0] +
    time_embed_dim`` columns.  Hidden layers use ``activation``; the output
    layer is linear.
    """

    layer_widths: tuple[int, ...]
    activation: str = "tanh"
    skip_connection: bool = False
    time_embed_dim: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError("an MLP needs at least an input and an output width")
        if any(w <= 0 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.skip_connection and widths[0] != widths[-1]:
            raise ValueError("skip connection needs equal input and output widths")
        if self.time_embed_dim < 0 or self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be a nonnegative even integer")

    @property
    def input_width(self) -> int:
        return self.layer_widths[0]

    @property
    def output_width(self) -> int:
        return self.layer_widths[-1]

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_out, fan_in) of every weight matrix."""
        fan_ins = [self.layer_widths[0] + self.time_embed_dim, *self.layer_widths[1:-1]]
        return list(zip(self.layer_widths[1:], fan_ins))

    @property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes)


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _act_grad(name, z, a):
    if name == "tanh":
        return 1.0 - a * a
    return (z > 0.0).astype(np.float64)


class TimeConditionedNet:
    """MLP ``u(x, t)`` whose parameters live in one flat vector.

    The layout is every weight matrix (row-major, layer order) followed by
    every bias vector (layer order).  Forward and backward never modify
    ``params``.
    """

    def __init__(self, spec: MlpSpec, params=None):
        self.spec = spec
        if params is None:
            params = np.zeros(spec.n_params)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (spec.n_params,):
            raise ValueError(
                f"expected {spec.n_params} parameters, got shape {params.shape}"
            )
        self.params = params

    @classmethod
    def zeros(cls, spec: MlpSpec) -> "TimeConditionedNet":
        return cls(spec, np.zeros(spec.n_params))

    @classmethod
    def glorot(cls, spec: MlpSpec, rng: np.random.Generator) -> "TimeConditionedNet":
        """Weights uniform in +-sqrt(6/(fan_in+fan_out)), zero biases."""
        chunks = []
        for fan_out, fan_in in spec.layer_shapes:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            chunks.append(rng.uniform(-limit, limit, size=fan_out * fan_in))
        chunks.append(np.zeros(sum(o for o, _ in spec.layer_shapes)))
        return cls(spec, np.concatenate(chunks))

    def copy(self) -> "TimeConditionedNet":
        return TimeConditionedNet(self.spec, self.params.copy())

    def _split(self, flat):
        weights, biases = [], []
        pos = 0
        for fan_out, fan_in in self.spec.layer_shapes:
            weights.append(flat[pos:pos + fan_out * fan_in].reshape(fan_out, fan_in))
            pos += fan_out * fan_in
        for fan_out, _ in self.spec.layer_shapes:
            biases.append(flat[pos:pos + fan_out])
            pos += fan_out
        return weights, biases

    @property
    def weights(self) -> list[np.ndarray]:
        return self._split(self.params)[0]

    @property
    def biases(self) -> list[np.ndarray]:
        return self._split(self.params)[1]

    def _prepare(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = x[None, :] if single else x
        if xb.ndim != 2 or xb.shape[1] != self.spec.input_width:
            raise ValueError(
                f"input shape {x.shape} does not match width {self.spec.input_width}"
            )
        h = xb
        if self.spec.time_embed_dim:
            emb = time_embedding(t, self.spec.time_embed_dim)
            emb = np.broadcast_to(emb, (xb.shape[0], self.spec.time_embed_dim))
            h = np.concatenate([xb, emb], axis=1)
        elif np.any(np.asarray(t) < 0):
            raise ValueError("time step must be nonnegative")
        return xb, h, single

    def forward_cached(self, x, t=0):
        """Forward pass that also returns what :meth:`backward` needs."""
        xb, h, single = self._prepare(x, t)
        weights, biases = self._split(self.params)
        inputs, pre, post = [], [], []
        n_layers = len(weights)
        for i, (w, b) in enumerate(zip(weights, biases)):
            inputs.append(h)
            z = h @ w.T + b
            if i < n_layers - 1:
                h = _act(self.spec.activation, z)
                pre.append(z)
                post.append(h)
            else:
                h = z
        out = h + xb if self.spec.skip_connection else h
        cache = (inputs, pre, post, single)
        return (out[0] if single else out), cache

    def forward(self, x, t=0) -> np.ndarray:
        return self.forward_cached(x, t)[0]

    def __call__(self, x, t=0) -> np.ndarray:
        return self.forward(x, t)

    def backward(self, cache, upstream):
        """Reverse-mode pass.

        Returns ``(param_grad, input_grad)``: the gradient of
        ``sum(upstream * forward(x, t))`` with respect to the flat parameter
        vector (summed over the batch) and with respect to ``x``.
        """
        inputs, pre, post, single = cache
        g = np.asarray(upstream, dtype=np.float64)
        g = g[None, :] if single and g.ndim == 1 else g
        batch = inputs[0].shape[0]
        if g.shape != (batch, self.spec.output_width):
            raise ValueError(
                f"upstream shape {np.shape(upstream)} does not match output"
            )
        weights, _ = self._split(self.params)
        grad = np.zeros_like(self.params)
        gw, gb = self._split(grad)
        g_skip = g
        for i in range(len(weights) - 1, -1, -1):
            gw[i][...] = g.T @ inputs[i]
            gb[i][...] = g.sum(axis=0)
            g = g @ weights[i]
            if i > 0:
                g = g * _act_grad(self.spec.activation, pre[i - 1], post[i - 1])
        g_in = g[:, : self.spec.input_width]
        if self.spec.skip_connection:
            g_in = g_in + g_skip
        return grad, (g_in[0] if single else g_in)


def net_forward(net: TimeConditionedNet, x, t=0) -> np.ndarray:
    return net.forward(x, t)


def net_backward(net: TimeConditionedNet, x, t, upstream) -> np.ndarray:
    """Parameter gradient of ``sum(upstream * net(x, t))``."""
    _, cache = net.forward_cached(x, t)
    return net.backward(cache, upstream)[0]


@dataclass
class AdamState:
    """Adam moments and hyperparameters (bias-corrected update)."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.eps <= 0:
            raise ValueError("lr and eps must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")

    def update(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        """Advance one step in place and return the new parameter vector."""
        params = np.asarray(params, dtype=np.float64)
        grads = np.asarray(grads, dtype=np.float64)
        if params.shape != grads.shape:
            raise ValueError("params and grads differ in length")
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        elif self.m.shape != params.shape:
            raise ValueError("moment vectors do not match the parameter vector")
        self.step += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads * grads
        m_hat = self.m / (1.0 - self.beta1 ** self.step)
        v_hat = self.v / (1.0 - self.beta2 ** self.step)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(state: AdamState, params, grads):
    """Functional form of :meth:`AdamState.update`; returns ``(params, state)``."""
    return state.update(params, grads), state


def max_relative_error(analytic, numeric, floor: float = 1e-12) -> float:
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / denom))


def central_differences(fun: Callable[[np.ndarray], float], params, fd_step):
    params = np.array(params, dtype=np.float64)
    out = np.empty_like(params)
    for i in range(params.size):
        orig = params[i]
        params[i] = orig + fd_step
        f_plus = fun(params)
        params[i] = orig - fd_step
        f_minus = fun(params)
        params[i] = orig
        out[i] = (f_plus - f_minus) / (2.0 * fd_step)
    return out


def grad_check(net: TimeConditionedNet, x, t=0, fd_step: float = 1e-5) -> float:
    """Compare :func:`net_backward` against central differences.

    The scalar probed is ``0.5 * ||net(x, t)||**2``.  Returns the maximum
    over parameters of ``|analytic - fd| / max(|analytic|, |fd|, 1e-12)``.
    """
    if not 0 < fd_step <= 1e-2:
        raise ValueError("fd_step must lie in (0, 1e-2]")
    out, cache = net.forward_cached(x, t)
    analytic = net.backward(cache, out)[0]

    def loss(p):
        return 0.5 * float(np.sum(TimeConditionedNet(net.spec, p).forward(x, t) ** 2))

    return max_relative_error(analytic, central_differences(loss, net.params, fd_step))
