"""Dense-network numerics: forward pass, softmax cross-entropy, exact backprop, SGD.

Everything is float64 numpy. A batch is an (n_samples, n_features) matrix in
row-major order; layer weights are (out, in), so a layer computes
``a @ W.T + b``. Weight and bias gradients are batch means; activation
gradients are kept per sample, unreduced, because those per-sample vectors are
what crosses the boundary in split training.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class Activation(Enum):
    RELU = "relu"
    IDENTITY = "identity"

    @classmethod
    def parse(cls, name: str) -> "Activation":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown activation {name!r} (expected 'relu' or 'identity')")


def require_finite(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray     # (out,)
    activation: Activation

    @property
    def in_width(self) -> int:
        return self.weights.shape[1]

    @property
    def out_width(self) -> int:
        return self.weights.shape[0]


@dataclass
class NetworkSpec:
    """Widths from input to class count; hidden-layer activations; init seed.

    ``layer_widths[0]`` is the input width and ``layer_widths[-1]`` the class
    count. The final layer always emits raw logits (identity activation);
    ``activations`` covers only the hidden layers and defaults to ReLU.
    """

    layer_widths: tuple[int, ...]
    activations: tuple[Activation, ...] | None = None
    init_seed: int = 0

    def __post_init__(self):
        self.layer_widths = tuple(int(w) for w in self.layer_widths)
        if len(self.layer_widths) < 2:
            raise ValueError(f"need at least 2 layer widths, got {list(self.layer_widths)}")
        if any(w <= 0 for w in self.layer_widths):
            raise ValueError(f"layer widths must be positive, got {list(self.layer_widths)}")
        n_hidden = len(self.layer_widths) - 2
        if self.activations is None:
            self.activations = tuple([Activation.RELU] * n_hidden)
        else:
            self.activations = tuple(self.activations)
            if len(self.activations) != n_hidden:
                raise ValueError(
                    f"expected {n_hidden} hidden activations for widths "
                    f"{list(self.layer_widths)}, got {len(self.activations)}"
                )

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def n_classes(self) -> int:
        return self.layer_widths[-1]


@dataclass
class Network:
    layers: list[DenseLayer]

    @property
    def input_width(self) -> int:
        return self.layers[0].in_width

    @property
    def output_width(self) -> int:
        return self.layers[-1].out_width

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_width,) + tuple(l.out_width for l in self.layers)


@dataclass
class ForwardTrace:
    """Per-layer pre-activations and activations for one batch."""

    inputs: np.ndarray
    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]

    @property
    def batch_size(self) -> int:
        return self.inputs.shape[0]

    @property
    def logits(self) -> np.ndarray:
        return self.activations[-1]


@dataclass
class GradientSet:
    """Batch-mean weight/bias gradients plus unreduced per-sample activation gradients.

    ``activation_grads[l][i]`` is d(loss of sample i)/d(post-activation output
    of layer l) with no 1/batch factor; ``input_grads`` is the same quantity
    taken at the network input.
    """

    weight_grads: list[np.ndarray]
    bias_grads: list[np.ndarray]
    activation_grads: list[np.ndarray]
    input_grads: np.ndarray


def init_network(spec: NetworkSpec) -> Network:
    """Build a network with uniform(+-1/sqrt(fan_in)) weights and zero biases.

    Fully determined by ``spec.init_seed``: the same spec yields bit-identical
    weights on every call.
    """
    rng = np.random.default_rng(spec.init_seed)
    widths = spec.layer_widths
    layers = []
    for l in range(spec.n_layers):
        fan_in, fan_out = widths[l], widths[l + 1]
        bound = 1.0 / np.sqrt(fan_in)
        weights = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        bias = np.zeros(fan_out)
        if l < spec.n_layers - 1:
            act = spec.activations[l]
        else:
            act = Activation.IDENTITY
        layers.append(DenseLayer(weights, bias, act))
    return Network(layers)


def forward(network: Network, batch: np.ndarray) -> ForwardTrace:
    """Run the batch through every layer, keeping all intermediate activations."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise ValueError(f"batch must be 2-D, got shape {batch.shape}")
    if batch.shape[1] != network.input_width:
        raise ValueError(
            f"batch width {batch.shape[1]} does not match network input width "
            f"{network.input_width}"
        )
    require_finite(batch, "batch")
    pre_activations = []
    activations = []
    a = batch
    for layer in network.layers:
        pre = a @ layer.weights.T + layer.bias
        if layer.activation is Activation.RELU:
            a = np.maximum(pre, 0.0)
        else:
            a = pre
        pre_activations.append(pre)
        activations.append(a)
    return ForwardTrace(batch, pre_activations, activations)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch-mean cross-entropy of softmax(logits) against integer labels.

    Stabilized by subtracting the row max before exponentiation. Returns
    (loss, probabilities); probability rows sum to 1.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch of {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1)
    probs = exp / total[:, None]
    per_sample = np.log(total) - shifted[np.arange(n), labels]
    return float(per_sample.mean()), probs


def _check_trace(network: Network, trace: ForwardTrace) -> None:
    if len(trace.activations) != len(network.layers):
        raise ValueError(
            f"trace has {len(trace.activations)} layers, network has {len(network.layers)}"
        )
    for l, layer in enumerate(network.layers):
        if trace.activations[l].shape[1] != layer.out_width:
            raise ValueError(f"trace layer {l} width {trace.activations[l].shape[1]} "
                             f"does not match network width {layer.out_width}")


def backward_from_output(network: Network, trace: ForwardTrace,
                         output_grads: np.ndarray) -> GradientSet:
    """Backpropagate per-sample gradients given at the network's final output.

    ``output_grads[i]`` is d(loss of sample i)/d(final post-activation),
    unreduced. Weight/bias gradients come out as batch means; activation
    gradients stay per sample. This is the client-side half of split training,
    where the gradient at the cut arrives from the other party.
    """
    _check_trace(network, trace)
    output_grads = np.asarray(output_grads, dtype=np.float64)
    if output_grads.shape != trace.activations[-1].shape:
        raise ValueError(f"output_grads shape {output_grads.shape} does not match "
                         f"final activations {trace.activations[-1].shape}")
    n_layers = len(network.layers)
    batch = trace.batch_size
    weight_grads: list[np.ndarray] = [np.empty(0)] * n_layers
    bias_grads: list[np.ndarray] = [np.empty(0)] * n_layers
    activation_grads: list[np.ndarray] = [np.empty(0)] * n_layers
    activation_grads[-1] = output_grads
    g_post = output_grads
    for l in reversed(range(n_layers)):
        layer = network.layers[l]
        if layer.activation is Activation.RELU:
            g_pre = g_post * (trace.pre_activations[l] > 0)
        else:
            g_pre = g_post
        below = trace.activations[l - 1] if l > 0 else trace.inputs
        weight_grads[l] = g_pre.T @ below / batch
        bias_grads[l] = g_pre.mean(axis=0)
        g_post = g_pre @ layer.weights
        if l > 0:
            activation_grads[l - 1] = g_post
    return GradientSet(weight_grads, bias_grads, activation_grads, g_post)


def backward(network: Network, trace: ForwardTrace, labels: np.ndarray,
             sample_scale: np.ndarray | None = None) -> GradientSet:
    """Exact backprop of the softmax cross-entropy loss through the network.

    The per-sample logit gradient is probs - onehot(label), so each row sums
    to zero and is negative exactly at the true label. ``sample_scale``
    optionally multiplies each sample's contribution at the source (used for
    per-sample clipped updates); it scales every returned gradient of that
    sample.
    """
    _, probs = softmax_cross_entropy(trace.logits, labels)
    n = probs.shape[0]
    delta = probs.copy()
    delta[np.arange(n), np.asarray(labels, dtype=np.int64)] -= 1.0
    if sample_scale is not None:
        sample_scale = np.asarray(sample_scale, dtype=np.float64)
        if sample_scale.shape != (n,):
            raise ValueError(f"sample_scale shape {sample_scale.shape} != ({n},)")
        delta = delta * sample_scale[:, None]
    return backward_from_output(network, trace, delta)


def sgd_step(network: Network, grads: GradientSet, lr: float) -> None:
    """In-place W <- W - lr * grad update (gradients are already batch means)."""
    if len(grads.weight_grads) != len(network.layers):
        raise ValueError("gradient set does not match network layer count")
    for layer, wg, bg in zip(network.layers, grads.weight_grads, grads.bias_grads):
        if wg.shape != layer.weights.shape or bg.shape != layer.bias.shape:
            raise ValueError(f"gradient shape {wg.shape}/{bg.shape} does not match "
                             f"layer {layer.weights.shape}/{layer.bias.shape}")
    for layer, wg, bg in zip(network.layers, grads.weight_grads, grads.bias_grads):
        layer.weights -= lr * wg
        layer.bias -= lr * bg


def classify(network: Network, batch: np.ndarray) -> np.ndarray:
    """Argmax-of-logits labels for a batch."""
    return np.argmax(forward(network, batch).logits, axis=1)


def accuracy(network: Network, features: np.ndarray, labels: np.ndarray,
             chunk: int = 4096) -> float:
    """Fraction of samples the network classifies correctly."""
    labels = np.asarray(labels, dtype=np.int64)
    hits = 0
    for start in range(0, len(labels), chunk):
        sl = slice(start, start + chunk)
        hits += int(np.sum(classify(network, features[sl]) == labels[sl]))
    return hits / len(labels)


def finite_difference_grads(network: Network, batch: np.ndarray, labels: np.ndarray,
                            step: float = 1e-5) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Central-difference gradients of the loss for every weight and bias.

    Numeric oracle for ``backward``: it only ever calls the forward pass and
    the loss. Temporarily mutates the network in place (restored before
    returning), so do not share the network across threads during the call.
    """

    def loss_now() -> float:
        trace = forward(network, batch)
        return softmax_cross_entropy(trace.logits, labels)[0]

    weight_grads = []
    bias_grads = []
    for layer in network.layers:
        for param, grads in ((layer.weights, weight_grads), (layer.bias, bias_grads)):
            g = np.zeros_like(param)
            it = np.nditer(param, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = param[idx]
                param[idx] = orig + step
                lp = loss_now()
                param[idx] = orig - step
                lm = loss_now()
                param[idx] = orig
                g[idx] = (lp - lm) / (2.0 * step)
            grads.append(g)
    return weight_grads, bias_grads
