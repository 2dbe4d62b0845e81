"""Dense ReLU networks with hand-written reverse mode, Adam and Polyak averaging.

Every learned function in the package (quasi-metric critic, continuous actor,
aimer, Q-network) is a :class:`ParameterSet` driven through these functions.
Inputs may be a single vector ``(d_in,)`` or a batch ``(B, d_in)``; parameter
gradients are summed over the batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

HIDDEN_ACTIVATIONS = ("relu",)
OUTPUT_ACTIVATIONS = ("linear", "sigmoid", "tanh")


class DivergenceError(FloatingPointError):
    """Raised when a loss, gradient or parameter becomes non-finite."""


@dataclass
class ParameterSet:
    layer_sizes: Tuple[int, ...]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("number of weight/bias arrays does not match layer_sizes")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[l + 1], self.layer_sizes[l])
            if w.shape != expected:
                raise ValueError(f"weights[{l}] has shape {w.shape}, expected {expected}")
            if b.shape != (self.layer_sizes[l + 1],):
                raise ValueError(f"biases[{l}] has shape {b.shape}, expected ({self.layer_sizes[l + 1]},)")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def arrays(self) -> List[np.ndarray]:
        """Weights and biases interleaved layer by layer (W0, b0, W1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "ParameterSet":
        return ParameterSet(
            self.layer_sizes,
            [np.asarray(a, dtype=np.float64) for a in arrays[0::2]],
            [np.asarray(a, dtype=np.float64) for a in arrays[1::2]],
            self.hidden_activation,
            self.output_activation,
        )

    def copy(self) -> "ParameterSet":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def equals(self, other: "ParameterSet") -> bool:
        """Bit-identical comparison of architecture and values."""
        if (self.layer_sizes, self.hidden_activation, self.output_activation) != (
            other.layer_sizes, other.hidden_activation, other.output_activation
        ):
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


@dataclass
class Gradient:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    input_gradient: Optional[np.ndarray] = None

    def arrays(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def __add__(self, other: "Gradient") -> "Gradient":
        ig = None
        if self.input_gradient is not None and other.input_gradient is not None:
            ig = self.input_gradient + other.input_gradient
        return Gradient(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
            ig,
        )

    def scaled(self, factor: float) -> "Gradient":
        ig = None if self.input_gradient is None else self.input_gradient * factor
        return Gradient([w * factor for w in self.weights], [b * factor for b in self.biases], ig)


@dataclass
class AdamState:
    first_moment: List[np.ndarray]
    second_moment: List[np.ndarray]
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def copy(self) -> "AdamState":
        return AdamState(
            [m.copy() for m in self.first_moment],
            [v.copy() for v in self.second_moment],
            self.step_count, self.learning_rate, self.beta1, self.beta2, self.epsilon,
        )


def mlp_init(layer_sizes, hidden_activation="relu", output_activation="linear", seed=0) -> ParameterSet:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``.

    ``seed`` may be an integer or a ``numpy.random.Generator``.
    """
    sizes = [int(n) for n in layer_sizes]
    if len(sizes) < 2 or any(n < 1 for n in sizes):
        raise ValueError(f"layer_sizes must have >= 2 positive entries, got {list(layer_sizes)}")
    if hidden_activation not in HIDDEN_ACTIVATIONS:
        raise ValueError(f"unknown hidden activation {hidden_activation!r}")
    if output_activation not in OUTPUT_ACTIVATIONS:
        raise ValueError(f"unknown output activation {output_activation!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ParameterSet(tuple(sizes), weights, biases, hidden_activation, output_activation)


def _output(z, kind):
    if kind == "linear":
        return z
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return np.tanh(z)


def _output_derivative(y, kind):
    if kind == "linear":
        return np.ones_like(y)
    if kind == "sigmoid":
        return y * (1.0 - y)
    return 1.0 - y * y


def _as_batch(params: ParameterSet, x) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.n_in:
        raise ValueError(f"input has shape {np.shape(x)}, network expects {params.n_in} features")
    return x, single


@dataclass
class ForwardCache:
    """Activations kept from a forward pass for a later backward pass."""

    inputs: List[np.ndarray] = field(default_factory=list)  # input to every layer
    pre_output: Optional[np.ndarray] = None  # last layer before the output activation
    output: Optional[np.ndarray] = None
    single: bool = False


def forward_cached(params: ParameterSet, x) -> ForwardCache:
    x, single = _as_batch(params, x)
    cache = ForwardCache(single=single)
    h = x
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(h)
        z = h @ w.T + b
        if l < last:
            h = np.maximum(z, 0.0)
        else:
            cache.pre_output = z
            h = _output(z, params.output_activation)
    cache.output = h
    return cache


def backward_cached(params: ParameterSet, cache: ForwardCache, cotangent, pre_activation_cotangent=None) -> Gradient:
    """Reverse pass using a cache from :func:`forward_cached`.

    ``pre_activation_cotangent`` is an optional extra cotangent on the last
    layer's pre-activation (used by the actor's pre-activation penalty).
    """
    g = np.asarray(cotangent, dtype=np.float64).reshape(cache.output.shape)
    delta = g * _output_derivative(cache.output, params.output_activation)
    if pre_activation_cotangent is not None:
        delta = delta + np.asarray(pre_activation_cotangent, dtype=np.float64).reshape(delta.shape)
    n = len(params.weights)
    gw: List[np.ndarray] = [None] * n
    gb: List[np.ndarray] = [None] * n
    for l in range(n - 1, -1, -1):
        h = cache.inputs[l]
        gw[l] = delta.T @ h
        gb[l] = delta.sum(axis=0)
        back = delta @ params.weights[l]
        if l > 0:
            delta = back * (h > 0.0)
    ig = back[0] if cache.single else back
    return Gradient(gw, gb, ig)


def mlp_forward(params: ParameterSet, x) -> np.ndarray:
    cache = forward_cached(params, x)
    return cache.output[0] if cache.single else cache.output


def mlp_backward(params: ParameterSet, x, output_cotangent) -> Gradient:
    """Exact gradient of ``<mlp_forward(params, x), output_cotangent>``.

    Parameter gradients are summed over the batch; ``input_gradient`` has the
    shape of ``x``.
    """
    cache = forward_cached(params, x)
    cot = np.asarray(output_cotangent, dtype=np.float64)
    if cot.size != cache.output.size:
        raise ValueError(f"cotangent has {cot.size} entries, output has {cache.output.size}")
    return backward_cached(params, cache, cot)


def adam_init(params: ParameterSet, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8) -> AdamState:
    zeros = [np.zeros_like(a) for a in params.arrays()]
    return AdamState(zeros, [z.copy() for z in zeros], 0, learning_rate, beta1, beta2, epsilon)


def adam_step(state: AdamState, params: ParameterSet, grad: Gradient) -> Tuple[AdamState, ParameterSet]:
    """One bias-corrected Adam step. Inputs are left untouched."""
    garrs = grad.arrays()
    parrs = params.arrays()
    if len(garrs) != len(parrs) or any(g.shape != p.shape for g, p in zip(garrs, parrs)):
        raise ValueError("gradient shapes do not match parameters")
    if not grad.is_finite():
        raise DivergenceError("non-finite gradient passed to adam_step")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(parrs, garrs, state.first_moment, state.second_moment):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        step = state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        new_m.append(m)
        new_v.append(v)
        new_p.append(p - step)
    new_state = AdamState(new_m, new_v, t, state.learning_rate, b1, b2, state.epsilon)
    return new_state, params.with_arrays(new_p)


def polyak_update(target: ParameterSet, online: ParameterSet, decay: float) -> ParameterSet:
    """``decay * target + (1 - decay) * online``; ``decay`` is the retained fraction."""
    if not 0.0 <= decay <= 1.0:
        raise ValueError(f"decay must be in [0, 1], got {decay}")
    if target.layer_sizes != online.layer_sizes:
        raise ValueError("target and online networks have different shapes")
    return target.with_arrays(
        [decay * t + (1.0 - decay) * o for t, o in zip(target.arrays(), online.arrays())]
    )
