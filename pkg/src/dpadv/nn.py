"""Dense-layer networks with hand-written reverse-mode gradients.

Parameters live in one flat float64 vector; per-layer weights and biases are
views into it, laid out layer by layer as ``W`` (fan_in x fan_out, row-major)
followed by ``b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

ACTIVATIONS = ("relu", "identity")


class ShapeError(ValueError):
    """Input dimensions do not chain with the model."""


class NonFiniteGradient(FloatingPointError):
    def __init__(self, layer: int, what: str = "gradient"):
        super().__init__(f"non-finite {what} in layer {layer}")
        self.layer = layer


@dataclass
class Model:
    dims: tuple[int, ...]
    activations: tuple[str, ...]
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.activations = tuple(self.activations)
        if len(self.dims) < 2 or any(d <= 0 for d in self.dims):
            raise ShapeError(f"invalid layer dims {self.dims}")
        if len(self.activations) != len(self.dims) - 1:
            raise ShapeError("need one activation per layer")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        if self.params.shape != (param_count(self.dims),):
            raise ShapeError(
                f"expected {param_count(self.dims)} parameters, got {self.params.shape}"
            )

    @property
    def n_inputs(self) -> int:
        return self.dims[0]

    @property
    def n_classes(self) -> int:
        return self.dims[-1]

    @property
    def n_params(self) -> int:
        return self.params.size

    def layers(self) -> Iterator[tuple[np.ndarray, np.ndarray, str]]:
        """Yield ``(W, b, activation)`` views into ``params``."""
        offset = 0
        for (fan_in, fan_out), act in zip(_pairs(self.dims), self.activations):
            w = self.params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = self.params[offset:offset + fan_out]
            offset += fan_out
            yield w, b, act

    def with_params(self, params: np.ndarray) -> "Model":
        return Model(self.dims, self.activations, np.array(params, dtype=np.float64))

    def copy(self) -> "Model":
        return self.with_params(self.params.copy())


def _pairs(dims: Sequence[int]):
    return list(zip(dims[:-1], dims[1:]))


def param_count(dims: Sequence[int]) -> int:
    return sum(i * o + o for i, o in _pairs(dims))


def mlp(dims: Sequence[int], params: np.ndarray) -> Model:
    """Model with ReLU on every hidden layer and identity logits."""
    acts = ("relu",) * (len(dims) - 2) + ("identity",)
    return Model(tuple(dims), acts, params)


def init_params(seed: int, dims: Sequence[int], activations: Sequence[str] | None = None) -> Model:
    """Glorot-uniform weights and zero biases, fully determined by ``seed``."""
    dims = tuple(int(d) for d in dims)
    if activations is None:
        activations = ("relu",) * (len(dims) - 2) + ("identity",)
    rng = np.random.Generator(np.random.PCG64(seed))
    chunks = []
    for fan_in, fan_out in _pairs(dims):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return Model(dims, tuple(activations), np.concatenate(chunks))


def _as_inputs(model: Model, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.n_inputs:
        raise ShapeError(f"model expects {model.n_inputs} input features, got shape {x.shape}")
    return x


def _as_labels(labels, n: int, k: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim == 0:
        y = y[None]
    if y.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(y == np.floor(y)):
            raise ValueError("labels must be integers")
        y = y.astype(np.int64)
    if n and (y.min() < 0 or y.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    return y.astype(np.int64, copy=False)


def _forward_cache(model: Model, x: np.ndarray):
    """Return layer inputs and pre-activations for a backward pass."""
    layer_inputs, preacts = [], []
    h = x
    for w, b, act in model.layers():
        layer_inputs.append(h)
        z = h @ w + b
        preacts.append(z)
        h = np.maximum(z, 0.0) if act == "relu" else z
    return layer_inputs, preacts, h


def forward(model: Model, inputs) -> np.ndarray:
    """Logits, shape (n, K)."""
    x = _as_inputs(model, inputs)
    return _forward_cache(model, x)[2]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits) -> np.ndarray:
    return np.exp(_log_softmax(np.asarray(logits, dtype=np.float64)))


def loss_ce(logits, labels) -> tuple[np.ndarray, float]:
    """Softmax cross-entropy per example and its mean."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError("logits must be 2-D")
    y = _as_labels(labels, z.shape[0], z.shape[1])
    per_example = -_log_softmax(z)[np.arange(z.shape[0]), y]
    # log-softmax of the argmax entry can round to a tiny positive value
    per_example = np.maximum(per_example, 0.0)
    return per_example, float(per_example.mean()) if per_example.size else 0.0


class _Backward:
    """One forward/backward sweep holding per-example deltas for every layer.

    ``deltas[l][i]`` is dL_i/dz_l for example ``i`` (un-averaged), so the
    per-example gradient of layer ``l`` is ``outer(inputs[l][i], deltas[l][i])``
    for the weights and ``deltas[l][i]`` for the bias.
    """

    def __init__(self, model: Model, inputs, labels, need_input_grad: bool = False):
        x = _as_inputs(model, inputs)
        if x.shape[0] == 0:
            raise ValueError("empty batch")
        y = _as_labels(labels, x.shape[0], model.n_classes)
        self.model = model
        self.inputs, preacts, logits = _forward_cache(model, x)
        log_p = _log_softmax(logits)
        self.loss = np.maximum(-log_p[np.arange(len(y)), y], 0.0)
        delta = np.exp(log_p)
        delta[np.arange(len(y)), y] -= 1.0
        layers = list(model.layers())
        self.deltas: list[np.ndarray] = [None] * len(layers)
        self.input_grad = None
        for idx in range(len(layers) - 1, -1, -1):
            w, _, act = layers[idx]
            if act == "relu":
                delta = delta * (preacts[idx] > 0)
            if not np.all(np.isfinite(delta)):
                raise NonFiniteGradient(idx)
            self.deltas[idx] = delta
            if idx > 0 or need_input_grad:
                delta = delta @ w.T
        if need_input_grad:
            self.input_grad = delta

    def sq_norms(self) -> np.ndarray:
        """Squared L2 norm of each example's full parameter gradient."""
        total = np.zeros(len(self.loss))
        for a, d in zip(self.inputs, self.deltas):
            d2 = np.einsum("ij,ij->i", d, d)
            total += np.einsum("ij,ij->i", a, a) * d2 + d2
        return total

    def rows(self) -> np.ndarray:
        parts = []
        for a, d in zip(self.inputs, self.deltas):
            parts.append(np.einsum("ni,nj->nij", a, d).reshape(len(d), -1))
            parts.append(d)
        return np.concatenate(parts, axis=1)

    def weighted_sum(self, weights: np.ndarray | None = None) -> np.ndarray:
        """Sum of per-example gradients, each scaled by ``weights[i]``."""
        parts = []
        for a, d in zip(self.inputs, self.deltas):
            if weights is not None:
                d = d * weights[:, None]
            parts.append((a.T @ d).ravel())
            parts.append(d.sum(axis=0))
        return np.concatenate(parts)


@dataclass
class PerSampleGrads:
    grads: np.ndarray
    per_example_loss: np.ndarray


def grads_per_sample(model: Model, inputs, labels) -> PerSampleGrads:
    """Row ``i`` is the gradient of example ``i``'s loss alone."""
    bw = _Backward(model, inputs, labels)
    return PerSampleGrads(bw.rows(), bw.loss)


def batch_gradient(model: Model, inputs, labels) -> tuple[np.ndarray, np.ndarray]:
    """Summed parameter gradient and per-example losses, without materializing rows."""
    bw = _Backward(model, inputs, labels)
    return bw.weighted_sum(), bw.loss


def clipped_gradient_sum(model: Model, inputs, labels, clip_norm: float):
    """Sum of per-example gradients after scaling each to L2 norm <= ``clip_norm``.

    Equal to clipping the rows of :func:`grads_per_sample` and summing, but uses
    ``||outer(a, d)|| = ||a|| ||d||`` so rows are never built.  Returns
    ``(grad_sum, per_example_loss, per_example_norm)``.
    """
    bw = _Backward(model, inputs, labels)
    norms = np.sqrt(bw.sq_norms())
    over = norms > clip_norm
    if np.any(over):
        factors = np.where(over, clip_norm / np.where(over, norms, 1.0), 1.0)
        total = bw.weighted_sum(factors)
    else:
        total = bw.weighted_sum()
    return total, bw.loss, norms


def grad_wrt_input(model: Model, inputs, labels) -> np.ndarray:
    """Gradient of the mean cross-entropy with respect to the inputs."""
    x = _as_inputs(model, inputs)
    bw = _Backward(model, x, labels, need_input_grad=True)
    g = bw.input_grad / x.shape[0]
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient(0, "input gradient")
    return g.reshape(np.shape(inputs)) if np.ndim(inputs) == 1 else g


def predict(model: Model, inputs) -> np.ndarray:
    """Argmax class; ties go to the lowest index."""
    return forward(model, inputs).argmax(axis=1)
