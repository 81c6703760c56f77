"""Two-party split training: client forward to the cut, server loss and backprop,
gradient return, client backprop — recording everything the non-label party sees.

The recorded per-sample cut gradient is the unscaled d(loss of sample)/d(cut
activation). Under batch-mean training the wire actually carries a uniform
1/batch multiple of it, but uniform positive scaling is invisible to both
cosine similarity and K-means after L2 normalization, so the tape keeps the
unscaled vector. Defenses are applied to exactly what crosses the cut: the
tape records post-defense gradients, and the client trains on them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .defenses import DefenseConfig, clip_and_noise, clip_factor, compress
from .nn import (
    Activation,
    DenseLayer,
    Network,
    NetworkSpec,
    backward,
    backward_from_output,
    forward,
    init_network,
    sgd_step,
)
from .tape import Tape


@dataclass
class SplitModel:
    bottom: Network  # layers [0, cut)
    top: Network     # layers [cut, end)
    cut_index: int

    @property
    def cut_width(self) -> int:
        return self.bottom.output_width

    def combined(self) -> Network:
        return Network(self.bottom.layers + self.top.layers)


@dataclass
class TrainingConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    shuffle_seed: int = 0
    defense: DefenseConfig | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")


def split_at(spec: NetworkSpec, cut_index: int) -> SplitModel:
    """Initialize the network from the spec and cut it after layer ``cut_index - 1``.

    The bottom holds layers [0, cut) and the top [cut, end); concatenating the
    halves reproduces the unsplit seed-initialized network exactly.
    """
    network = init_network(spec)
    total = len(network.layers)
    if not 1 <= cut_index <= total - 1:
        raise ValueError(
            f"cut_index must be in [1, {total - 1}] for a {total}-layer network, "
            f"got {cut_index}"
        )
    bottom = Network(network.layers[:cut_index])
    top = Network(network.layers[cut_index:])
    return SplitModel(bottom, top, cut_index)


def resplit(network: Network, cut_index: int) -> SplitModel:
    """Re-cut an existing (e.g. trained) network at a new position, sharing weights."""
    total = len(network.layers)
    if not 1 <= cut_index <= total - 1:
        raise ValueError(
            f"cut_index must be in [1, {total - 1}] for a {total}-layer network, "
            f"got {cut_index}"
        )
    return SplitModel(Network(network.layers[:cut_index]),
                      Network(network.layers[cut_index:]), cut_index)


def epoch_permutation(shuffle_seed: int, epoch: int, n: int) -> np.ndarray:
    """Deterministic per-epoch sample order, seeded by shuffle_seed XOR epoch."""
    return np.random.default_rng(shuffle_seed ^ epoch).permutation(n)


def _defend_batch(raw: np.ndarray, defense: DefenseConfig | None,
                  noise_rng: np.random.Generator | None) -> np.ndarray:
    if defense is None or not defense.active:
        return raw
    if defense.noise is not None:
        nd = defense.noise
        return np.stack([clip_and_noise(row, nd.clip_norm, nd.sigma, noise_rng)
                         for row in raw])
    cd = defense.compression
    return np.stack([compress(row, cd.ratio) for row in raw])


def train(split: SplitModel, dataset: Dataset, config: TrainingConfig) -> tuple[SplitModel, Tape]:
    """Run the split protocol over the dataset, mutating the model in place.

    Per batch: client forward -> server forward + loss -> server backprop and
    top update -> per-sample cut gradients pass through the active defense ->
    returned to the client -> client backprop and bottom update. One tape
    entry is appended per (epoch, sample), with the cut gradient recorded
    after defenses and the smashed data recorded as sent.

    With the noise defense active the top model's own update also applies the
    per-sample clip factors computed at the cut, mirroring a label party that
    trains its half with per-sample clipped gradients.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    if dataset.features.shape[1] != split.bottom.input_width:
        raise ValueError(
            f"dataset width {dataset.features.shape[1]} does not match model input "
            f"width {split.bottom.input_width}"
        )
    defense = config.defense
    noise_rng = None
    if defense is not None and defense.noise is not None:
        noise_rng = np.random.default_rng(defense.noise.rng_seed)

    epochs_col, batches_col, samples_col, labels_col = [], [], [], []
    grads_col, smashed_col = [], []

    for epoch in range(config.epochs):
        perm = epoch_permutation(config.shuffle_seed, epoch, n)
        for batch_index, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start:start + config.batch_size]
            xb = dataset.features[idx]
            yb = dataset.labels[idx]

            bottom_trace = forward(split.bottom, xb)
            smashed = bottom_trace.activations[-1]
            top_trace = forward(split.top, smashed)
            top_grads = backward(split.top, top_trace, yb)
            raw_cut = top_grads.input_grads  # per-sample, unscaled

            sent = _defend_batch(raw_cut, defense, noise_rng)
            if defense is not None and defense.noise is not None:
                factors = np.array([clip_factor(row, defense.noise.clip_norm)
                                    for row in raw_cut])
                top_update = backward(split.top, top_trace, yb, sample_scale=factors)
            else:
                top_update = top_grads

            sgd_step(split.top, top_update, config.learning_rate)
            bottom_grads = backward_from_output(split.bottom, bottom_trace, sent)
            sgd_step(split.bottom, bottom_grads, config.learning_rate)

            epochs_col.append(np.full(len(idx), epoch, dtype=np.int64))
            batches_col.append(np.full(len(idx), batch_index, dtype=np.int64))
            samples_col.append(idx.astype(np.int64))
            labels_col.append(yb.astype(np.int64))
            grads_col.append(sent)
            smashed_col.append(smashed)

    tape = Tape(
        epochs=np.concatenate(epochs_col),
        batch_indices=np.concatenate(batches_col),
        sample_ids=np.concatenate(samples_col),
        true_labels=np.concatenate(labels_col),
        smashed=np.vstack(smashed_col),
        cut_gradients=np.vstack(grads_col),
        metadata={
            "cut_index": split.cut_index,
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "learning_rate": config.learning_rate,
            "shuffle_seed": config.shuffle_seed,
            "defended": bool(defense is not None and defense.active),
        },
    )
    return split, tape


def collect_smashed(split: SplitModel, dataset: Dataset, chunk: int = 4096) -> Tape:
    """Forward every sample through the bottom model, recording cut activations.

    Pure: no model mutation, identical tapes on repeated calls. Entries carry
    empty cut gradients (there is no backward pass).
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    if dataset.features.shape[1] != split.bottom.input_width:
        raise ValueError(
            f"dataset width {dataset.features.shape[1]} does not match model input "
            f"width {split.bottom.input_width}"
        )
    blocks = []
    for start in range(0, n, chunk):
        trace = forward(split.bottom, dataset.features[start:start + chunk])
        blocks.append(trace.activations[-1])
    smashed = np.vstack(blocks)
    return Tape(
        epochs=np.zeros(n, dtype=np.int64),
        batch_indices=np.zeros(n, dtype=np.int64),
        sample_ids=np.arange(n, dtype=np.int64),
        true_labels=dataset.labels.astype(np.int64),
        smashed=smashed,
        cut_gradients=None,
        metadata={"cut_index": split.cut_index, "collected": "smashed"},
    )


def save_model(path, split: SplitModel) -> None:
    """Snapshot the full network plus cut position as an .npz archive."""
    network = split.combined()
    arrays = {"cut_index": np.array([split.cut_index], dtype=np.int64),
              "activations": np.array([l.activation.value for l in network.layers])}
    for i, layer in enumerate(network.layers):
        arrays[f"weights_{i}"] = layer.weights
        arrays[f"bias_{i}"] = layer.bias
    np.savez(path, **arrays)


def load_model(path) -> SplitModel:
    with np.load(path, allow_pickle=False) as archive:
        cut_index = int(archive["cut_index"][0])
        activations = [Activation.parse(str(a)) for a in archive["activations"]]
        layers = []
        for i, act in enumerate(activations):
            layers.append(DenseLayer(
                weights=np.array(archive[f"weights_{i}"], dtype=np.float64),
                bias=np.array(archive[f"bias_{i}"], dtype=np.float64),
                activation=act,
            ))
    return resplit(Network(layers), cut_index)
