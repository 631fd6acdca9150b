"""Spiking (LIF) and dense feed-forward networks with hand-written gradients.

Both networks take a batch ``x`` of shape (B, M0) (a single vector is treated
as B = 1) and expose the same ``forward`` / ``backward`` / ``params`` surface,
so the actor-critic code is indifferent to the backend.

Spiking dynamics, per hidden layer and internal step t::

    V(t) = (1 - leak) * U(t-1) + leak * (W^T s_in(t) + b)
    S(t) = 1{V(t) >= U_th}
    U(t) = U_r where S(t) else V(t)

The input vector is injected unchanged at every step. The last layer has no
threshold; its potential is averaged over the steps to form the output.
Backward passes replace dS/dV by the arctan surrogate derivative.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class StaleTraceError(RuntimeError):
    """A trace was replayed against a network it was not produced by."""


@dataclass(frozen=True)
class LifParams:
    leak: float = 0.5
    threshold: float = 1.0
    reset: float = 0.0
    steps: int = 6
    sharpness: float = 3.0
    # hard reset is treated as a constant in backward unless this is False
    detach_reset: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.leak <= 1.0:
            raise ValueError(f"leak must lie in (0, 1], got {self.leak}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not self.threshold > self.reset:
            raise ValueError("threshold must exceed reset potential")
        if not self.sharpness > 0:
            raise ValueError("sharpness must be > 0")


def surrogate(psi, sharpness: float = 3.0):
    """Smooth spike function ``arctan(pi*eta/2 * psi)/pi + 1/2``."""
    return np.arctan(0.5 * np.pi * sharpness * np.asarray(psi)) / np.pi + 0.5


def surrogate_grad(psi, sharpness: float = 3.0):
    """Derivative of :func:`surrogate` with respect to ``psi``."""
    z = 0.5 * np.pi * sharpness * np.asarray(psi, dtype=float)
    return 0.5 * sharpness / (1.0 + z * z)


def lif_step(params: LifParams, u_prev: np.ndarray, current: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One leaky integrate-and-fire update. Returns (potential after reset, spikes)."""
    v = (1.0 - params.leak) * np.asarray(u_prev, dtype=float) + params.leak * np.asarray(current, dtype=float)
    spikes = (v >= params.threshold).astype(float)
    return np.where(spikes > 0, params.reset, v), spikes


@dataclass
class ForwardTrace:
    """Everything a backward pass needs, plus spike statistics.

    ``potentials[l]`` and ``spikes[l]`` have shape (T, B, M_l) for hidden layer l
    (``potentials`` holds the pre-reset value V). ``layer_inputs[l]`` is what
    layer l saw at each step.
    """

    layer_dims: tuple[int, ...]
    layer_inputs: list[np.ndarray]
    potentials: list[np.ndarray]
    spikes: list[np.ndarray]
    output_potentials: np.ndarray
    smooth: bool = False
    owner: int = 0

    @property
    def spike_counts(self) -> list[float]:
        return [float(s.sum()) for s in self.spikes]

    @property
    def batch_size(self) -> int:
        return self.output_potentials.shape[1]


def firing_rates(trace: ForwardTrace) -> np.ndarray:
    """Spikes emitted / (neurons * steps * batch) for each hidden layer."""
    return np.array([s.mean() if s.size else 0.0 for s in trace.spikes])


def _uniform_init(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float):
    bound = gain * np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)), rng.uniform(-bound, bound, size=fan_out)


def _outer_sum(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum over (t, batch) of outer(a[t, n], b[t, n])."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def _as_batch(x: np.ndarray, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"expected input of width {dim}, got shape {x.shape}")
    return x


class SpikingNetwork:
    """Layered LIF network; hidden layers spike, the output layer integrates."""

    kind = "spiking"

    def __init__(self, layer_dims: Sequence[int], lif: LifParams | None = None,
                 rng: np.random.Generator | None = None, init_gain: float = 1.0):
        self.layer_dims = tuple(int(d) for d in layer_dims)
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ValueError(f"bad layer_dims {layer_dims!r}")
        self.lif = lif or LifParams()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            w, b = _uniform_init(rng, fan_in, fan_out, init_gain)
            self.weights.append(w)
            self.biases.append(b)

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def set_params(self, values: Sequence[np.ndarray]) -> None:
        values = list(values)
        for i in range(len(self.weights)):
            self.weights[i][...] = values[2 * i]
            self.biases[i][...] = values[2 * i + 1]

    def forward(self, x: np.ndarray, smooth: bool = False) -> tuple[np.ndarray, ForwardTrace]:
        """Run all internal steps. ``smooth`` replaces the spike step by the surrogate."""
        p = self.lif
        T = p.steps
        decay = 1.0 - p.leak
        x = _as_batch(x, self.layer_dims[0])
        s_in = x[None].repeat(T, axis=0)
        inputs, potentials, spikes = [], [], []
        for i, (w, b) in enumerate(zip(self.weights[:-1], self.biases[:-1])):
            inputs.append(s_in)
            if i == 0:
                # same input every step
                d0 = p.leak * (x @ w + b)
                drive = (d0 for _ in range(T))
            else:
                drive = p.leak * (s_in @ w + b)
            shape = (T, x.shape[0], w.shape[1])
            v_all = np.empty(shape)
            s_all = np.empty(shape)
            u = 0.0
            for t, d in enumerate(drive):
                v = v_all[t]
                np.multiply(u, decay, out=v)
                v += d
                if smooth:
                    s = surrogate(v - p.threshold, p.sharpness)
                    u = v * (1.0 - s) + p.reset * s
                else:
                    s = v >= p.threshold
                    u = np.where(s, p.reset, v)
                s_all[t] = s
            potentials.append(v_all)
            spikes.append(s_all)
            s_in = s_all
        inputs.append(s_in)
        drive = p.leak * (s_in @ self.weights[-1] + self.biases[-1])
        # linear leaky integration: V(t) = sum_{j<=t} decay^(t-j) * drive(j)
        out_v = np.empty_like(drive)
        v = 0.0
        for t in range(T):
            v = decay * v + drive[t]
            out_v[t] = v
        trace = ForwardTrace(self.layer_dims, inputs, potentials, spikes, out_v, smooth, id(self))
        return out_v.mean(axis=0), trace

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, trace: ForwardTrace, grad_out: np.ndarray) -> list[np.ndarray]:
        """Backpropagation through the unrolled steps; returns grads aligned with ``params``."""
        if trace.owner != id(self) or trace.layer_dims != self.layer_dims:
            raise StaleTraceError("trace was not produced by this network")
        p = self.lif
        T = p.steps
        g = np.asarray(grad_out, dtype=float).reshape(trace.batch_size, self.layer_dims[-1])
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))  # type: ignore[list-item]

        # output layer: V(t) = (1-leak) V(t-1) + leak * I(t), out = mean_t V(t)
        d_drive = np.empty_like(trace.output_potentials)
        acc = np.zeros_like(g)
        for t in range(T - 1, -1, -1):
            acc = g / T + (1.0 - p.leak) * acc
            d_drive[t] = p.leak * acc
        L = len(self.weights) - 1
        grads[2 * L] = _outer_sum(trace.layer_inputs[L], d_drive)
        grads[2 * L + 1] = d_drive.sum(axis=(0, 1))
        d_spikes = d_drive @ self.weights[L].T

        decay = 1.0 - p.leak
        for l in range(L - 1, -1, -1):
            v_all, s_all = trace.potentials[l], trace.spikes[l]
            sg_all = surrogate_grad(v_all - p.threshold, p.sharpness)
            keep = 1.0 - s_all
            if not p.detach_reset:
                # d U / d V through the reset branch, folded into the carry term
                keep = keep + sg_all * (p.reset - v_all)
            direct = d_spikes * sg_all
            d_v_all = np.empty_like(v_all)
            g_u = 0.0
            for t in range(T - 1, -1, -1):
                d_v = d_v_all[t]
                np.multiply(g_u, keep[t], out=d_v)
                d_v += direct[t]
                g_u = decay * d_v
            d_drive = p.leak * d_v_all
            grads[2 * l] = _outer_sum(trace.layer_inputs[l], d_drive)
            grads[2 * l + 1] = d_drive.sum(axis=(0, 1))
            if l > 0:
                d_spikes = d_drive @ self.weights[l].T
        return grads


@dataclass
class DenseCache:
    activations: list[np.ndarray] = field(default_factory=list)
    owner: int = 0


class DenseNetwork:
    """Conventional MLP with the same layer_dims; tanh hidden units, linear output."""

    kind = "dense"

    def __init__(self, layer_dims: Sequence[int], rng: np.random.Generator | None = None,
                 activation: str = "tanh", init_gain: float = 1.0):
        self.layer_dims = tuple(int(d) for d in layer_dims)
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ValueError(f"bad layer_dims {layer_dims!r}")
        if activation not in ("tanh", "linear"):
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            w, b = _uniform_init(rng, fan_in, fan_out, init_gain)
            self.weights.append(w)
            self.biases.append(b)

    params = SpikingNetwork.params
    set_params = SpikingNetwork.set_params

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, DenseCache]:
        h = _as_batch(x, self.layer_dims[0])
        cache = DenseCache([h], id(self))
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last and self.activation == "tanh":
                h = np.tanh(h)
            cache.activations.append(h)
        return h, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: DenseCache, grad_out: np.ndarray) -> list[np.ndarray]:
        if cache.owner != id(self):
            raise StaleTraceError("cache was not produced by this network")
        acts = cache.activations
        g = np.asarray(grad_out, dtype=float).reshape(acts[-1].shape)
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))  # type: ignore[list-item]
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
                if self.activation == "tanh":
                    g = g * (1.0 - acts[i] ** 2)
        return grads
