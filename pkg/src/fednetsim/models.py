"""Dense softmax classifier: flat parameter vectors, manual backprop, local SGD.

Model parameters live in a single float64 vector (weights then bias per
layer, layers in order), which is the unit every other module works with:
local updates are parameter-vector deltas, aggregation averages them, and
clipping bounds their norm. Evaluation sorts per-example losses before
summing so reported means are exactly invariant to batch order.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from fednetsim.datasets import ExampleSet
from fednetsim.seeding import spawn_rng

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of the classifier: layer widths and hidden activation.

    An empty ``hidden_dims`` gives multinomial logistic regression.
    """

    input_dim: int
    hidden_dims: tuple[int, ...] = ()
    class_count: int = 2
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden layer widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.class_count)

    def param_count(self) -> int:
        dims = self.layer_dims
        return sum((dims[i] + 1) * dims[i + 1] for i in range(len(dims) - 1))


class EvalResult(NamedTuple):
    mean_loss: float
    accuracy: float


def _layer_views(params: np.ndarray, spec: ModelSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """(weight, bias) views into the flat vector, one pair per layer."""
    dims = spec.layer_dims
    out = []
    offset = 0
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        w = params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = params[offset : offset + fan_out]
        offset += fan_out
        out.append((w, b))
    return out


def init_model(spec: ModelSpec, seed: int) -> np.ndarray:
    """Fan-scaled uniform weights, zero biases; deterministic per (spec, seed)."""
    rng = spawn_rng(seed, 3)
    chunks = []
    dims = spec.layer_dims
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks)


def _check_batch(spec: ModelSpec, batch: ExampleSet, context: str):
    if len(batch) == 0:
        raise ValueError(f"empty {context}")
    if batch.x.shape[1] != spec.input_dim:
        raise ValueError(
            f"feature dimension {batch.x.shape[1]} does not match input_dim {spec.input_dim}"
        )
    if batch.y.min() < 0 or batch.y.max() >= spec.class_count:
        raise ValueError("labels out of range for class_count")


def _forward(params: np.ndarray, spec: ModelSpec, x: np.ndarray):
    """Logits plus per-layer (input, pre-activation) pairs for backprop."""
    if params.shape != (spec.param_count(),):
        raise ValueError(
            f"parameter vector length {params.shape} does not match spec ({spec.param_count()})"
        )
    layers = _layer_views(params, spec)
    h = x
    cache = []
    for w, b in layers[:-1]:
        z = h @ w + b
        cache.append((h, z))
        h = np.maximum(z, 0.0) if spec.activation == "relu" else np.tanh(z)
    w, b = layers[-1]
    cache.append((h, None))
    return h @ w + b, cache


def _per_example_losses(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    zmax = logits.max(axis=1)
    lse = zmax + np.log(np.exp(logits - zmax[:, None]).sum(axis=1))
    return lse - logits[np.arange(len(y)), y]


def forward_eval(params: np.ndarray, spec: ModelSpec, batch: ExampleSet) -> EvalResult:
    """Mean softmax cross-entropy and argmax accuracy on a batch.

    Ties in the argmax go to the lowest class id. The loss mean is computed
    over value-sorted per-example losses, so permuting the batch cannot
    change the result.
    """
    _check_batch(spec, batch, "evaluation set")
    logits, _ = _forward(params, spec, batch.x)
    losses = _per_example_losses(logits, batch.y)
    mean_loss = float(np.sort(losses).sum() / len(batch))
    accuracy = float((logits.argmax(axis=1) == batch.y).sum() / len(batch))
    return EvalResult(mean_loss, accuracy)


def loss_gradient(params: np.ndarray, spec: ModelSpec, batch: ExampleSet) -> np.ndarray:
    """Gradient of the mean cross-entropy over the batch, as a flat vector."""
    _check_batch(spec, batch, "gradient batch")
    logits, cache = _forward(params, spec, batch.x)
    n = len(batch)

    zmax = logits.max(axis=1, keepdims=True)
    expz = np.exp(logits - zmax)
    probs = expz / expz.sum(axis=1, keepdims=True)
    dz = probs
    dz[np.arange(n), batch.y] -= 1.0
    dz /= n

    layers = _layer_views(params, spec)
    grads: list[np.ndarray | None] = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        h_in, z_in = cache[i]
        w, _ = layers[i]
        gw = h_in.T @ dz
        gb = dz.sum(axis=0)
        grads[i] = np.concatenate([gw.ravel(), gb])
        if i > 0:
            dh = dz @ w.T
            _, z_prev = cache[i - 1]
            if spec.activation == "relu":
                dz = dh * (z_prev > 0)
            else:
                dz = dh * (1.0 - np.tanh(z_prev) ** 2)
    return np.concatenate(grads)


def local_train(
    global_params: np.ndarray,
    spec: ModelSpec,
    shard: ExampleSet,
    epochs: int,
    lr: float,
    batch_size: int | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Delta from ``epochs`` of seeded mini-batch SGD starting at the global model.

    batch_size of None (the default) takes the whole shard in one step per
    epoch. The per-epoch shuffle order is fixed by the seed, so the result
    is bit-reproducible.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if lr <= 0:
        raise ValueError("learning rate must be > 0")
    if epochs == 0:
        return np.zeros_like(global_params)
    if len(shard) == 0:
        raise ValueError("empty local dataset")
    _check_batch(spec, shard, "local dataset")

    rng = spawn_rng(seed, 4)
    n = len(shard)
    step = n if batch_size is None or batch_size <= 0 else min(batch_size, n)
    theta = global_params.copy()
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, step):
            idx = order[start : start + step]
            theta -= lr * loss_gradient(theta, spec, ExampleSet(shard.x[idx], shard.y[idx]))
    return theta - global_params
