"""Black-box labeling oracles and the built-in reference network.

An oracle answers one question: given an ordered pair of items, which is
preferred (1), dispreferred (-1), or uncertain (0)?  The toolkit explains
oracles post hoc, so the interface is deliberately minimal and every
implementation is pure: repeated calls on the same pair agree.

Implementations: prediction tables (CSV), external commands speaking a
line protocol, weak-constraint theories (synthetic ground truths for
experiments, optionally with seeded label noise), and a from-scratch
multilayer perceptron trained with plain SGD.
"""

from __future__ import annotations

import json
import random
import subprocess
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .asp import Theory, classify_pair
from .dataset import Item, item_atoms, round_half_away

CLASSES = (-1, 0, 1)

DEFAULT_HIDDEN_SIZES = (64, 64, 64)
HIDDEN_ACTIVATIONS = ("tanh", "relu", "linear")


class OracleError(Exception):
    """Raised for unanswerable queries or malformed oracle replies."""


def pair_vector(first: Item, second: Item, feature_names: Sequence[str]) -> np.ndarray:
    """The network-style encoding of a pair: both items' features, concatenated."""
    return np.array(
        [float(first.values[f]) for f in feature_names]
        + [float(second.values[f]) for f in feature_names],
        dtype=float,
    )


class Oracle:
    """Base interface: deterministic ternary labels for ordered item pairs."""

    def label(self, first: Item, second: Item) -> int:
        raise NotImplementedError

    def label_pairs(self, pairs, items_by_id) -> list:
        """Labels for dataset ``PairSample``s, resolving ids via ``items_by_id``."""
        return [self.label(items_by_id[p.first], items_by_id[p.second]) for p in pairs]


class TableOracle(Oracle):
    """Labels looked up from a prediction table keyed by (first id, second id)."""

    def __init__(self, table) -> None:
        self._table = dict(table)
        for key, value in self._table.items():
            if value not in CLASSES:
                raise OracleError(f"table label for {key} must be in {CLASSES}, got {value}")

    @classmethod
    def from_csv(cls, path) -> "TableOracle":
        import csv

        table = {}
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["id1", "id2", "label"]:
                raise OracleError(f"bad prediction-table header: {header}")
            for row in reader:
                table[(int(row[0]), int(row[1]))] = int(row[2])
        return cls(table)

    def label(self, first: Item, second: Item) -> int:
        try:
            return self._table[(first.id, second.id)]
        except KeyError:
            raise OracleError(f"no prediction for pair ({first.id}, {second.id})") from None


class TheoryOracle(Oracle):
    """A weak-constraint theory acting as the black box (synthetic ground truth).

    Items are rounded onto the oracle's own fixed integer grid (scaled by
    ``factor``) before classification, so the oracle accepts raw
    float-valued items and its labels never depend on how a pipeline
    later quantizes its training samples.
    """

    def __init__(
        self,
        theory: Theory,
        value_features: Sequence[str],
        category_feature: Optional[str] = "category",
        factor: int = 1,
    ) -> None:
        if factor < 1:
            raise OracleError(f"factor must be >= 1, got {factor}")
        self._theory = theory
        self._value_features = tuple(value_features)
        self._category_feature = category_feature
        self._factor = factor

    def _atoms(self, item: Item):
        values = {
            f: round_half_away(float(item.values[f]) * self._factor)
            for f in self._value_features
        }
        cat = self._category_feature
        if cat is not None and cat in item.values:
            values[cat] = int(item.values[cat])
        return item_atoms(item.replace_values(values), self._value_features, cat)

    def label(self, first: Item, second: Item) -> int:
        return classify_pair(self._theory, self._atoms(first), self._atoms(second))


class NoisyOracle(Oracle):
    """Flips a base oracle's label with a fixed probability, deterministically.

    The flip decision is a pure function of (seed, first id, second id),
    so repeated queries agree and runs are reproducible.
    """

    def __init__(self, base: Oracle, flip_prob: float, seed: int = 0) -> None:
        if not 0.0 <= flip_prob <= 1.0:
            raise OracleError(f"flip_prob must lie in [0, 1], got {flip_prob}")
        self._base = base
        self._flip_prob = flip_prob
        self._seed = seed

    def label(self, first: Item, second: Item) -> int:
        clean = self._base.label(first, second)
        pair_seed = (self._seed * 1_000_003 + first.id) * 1_000_003 + second.id
        rng = random.Random(pair_seed)
        if rng.random() >= self._flip_prob:
            return clean
        return rng.choice([c for c in CLASSES if c != clean])


class CommandOracle(Oracle):
    """An external command labeling pairs over a line protocol.

    Each request is one line of space-separated numbers (both items'
    features, concatenated); the command replies with one label per line.
    A nonzero exit status aborts.
    """

    def __init__(self, argv: Sequence[str], feature_names: Sequence[str]) -> None:
        self._argv = list(argv)
        self._feature_names = tuple(feature_names)

    def label(self, first: Item, second: Item) -> int:
        return self.label_many([(first, second)])[0]

    def label_many(self, pairs: Sequence[Tuple[Item, Item]]) -> list:
        request = "".join(
            " ".join(repr(float(v)) for v in pair_vector(a, b, self._feature_names)) + "\n"
            for a, b in pairs
        )
        proc = subprocess.run(
            self._argv, input=request, capture_output=True, text=True
        )
        if proc.returncode != 0:
            raise OracleError(
                f"oracle command exited with status {proc.returncode}: {proc.stderr.strip()}"
            )
        lines = proc.stdout.split()
        if len(lines) != len(pairs):
            raise OracleError(f"expected {len(pairs)} replies, got {len(lines)}")
        labels = []
        for reply in lines:
            try:
                value = int(reply)
            except ValueError:
                raise OracleError(f"malformed oracle reply {reply!r}") from None
            if value not in CLASSES:
                raise OracleError(f"oracle reply {value} outside {CLASSES}")
            labels.append(value)
        return labels


# ---------------------------------------------------------------------------
# Built-in multilayer perceptron
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.0005
    epochs: int = 500
    batch_size: int = 16
    seed: int = 0
    #: Held-out fraction used to snapshot the best epoch's weights;
    #: 0 disables validation and keeps the final weights.
    validation_fraction: float = 0.2


@dataclass(frozen=True, eq=False)
class MlpModel:
    """A dense softmax classifier over pair vectors.

    Hidden layers use tanh, relu, and identity activations in that order;
    the output is a stabilized softmax over the classes (-1, 0, 1).
    """

    weights: tuple
    biases: tuple

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases):
            raise OracleError("weights and biases must pair up")
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != b.shape[0]:
                raise OracleError(f"layer shapes {w.shape} and {b.shape} do not chain")
        for prev, nxt in zip(self.weights, self.weights[1:]):
            if prev.shape[1] != nxt.shape[0]:
                raise OracleError(
                    f"consecutive layers {prev.shape} -> {nxt.shape} do not chain"
                )
        if self.weights[-1].shape[1] != len(CLASSES):
            raise OracleError("output layer must have one unit per class")

    @property
    def input_size(self) -> int:
        return self.weights[0].shape[0]


def init_mlp(
    input_size: int,
    hidden_sizes: Sequence[int] = DEFAULT_HIDDEN_SIZES,
    seed: int = 0,
) -> MlpModel:
    """Seed-deterministic uniform (Glorot) initialization."""
    if len(hidden_sizes) != len(HIDDEN_ACTIVATIONS):
        raise OracleError(f"expected {len(HIDDEN_ACTIVATIONS)} hidden layers")
    rng = np.random.default_rng(seed)
    sizes = [input_size, *hidden_sizes, len(CLASSES)]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(tuple(weights), tuple(biases))


def _forward(model: MlpModel, x: np.ndarray):
    """Activations layer by layer; returns (per-layer activations, logits)."""
    a = np.atleast_2d(np.asarray(x, dtype=float))
    activations = [a]
    for index, (w, b) in enumerate(zip(model.weights[:-1], model.biases[:-1])):
        z = a @ w + b
        kind = HIDDEN_ACTIVATIONS[index]
        if kind == "tanh":
            a = np.tanh(z)
        elif kind == "relu":
            a = np.maximum(z, 0.0)
        else:
            a = z
        activations.append(a)
    logits = a @ model.weights[-1] + model.biases[-1]
    return activations, logits


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def predict_proba(model: MlpModel, x) -> np.ndarray:
    """Class probabilities over (-1, 0, 1); rows sum to 1."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if np.atleast_2d(x).shape[1] != model.input_size:
        raise OracleError(
            f"input width {np.atleast_2d(x).shape[1]} does not match model input {model.input_size}"
        )
    _, logits = _forward(model, x)
    probs = _softmax(logits)
    return probs[0] if single else probs


def predict_label(model: MlpModel, x) -> int:
    """Argmax class, ties broken toward 0 (then toward -1)."""
    probs = predict_proba(model, np.asarray(x, dtype=float))
    best = probs.max()
    candidates = [c for c, p in zip(CLASSES, probs) if p == best]
    return 0 if 0 in candidates else min(candidates)


def loss_and_grads(model: MlpModel, x, y_indices):
    """Mean softmax cross-entropy and its gradients for a batch.

    ``y_indices`` are class indices (label + 1).  Used by training and by
    the finite-difference gradient tests.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y_indices = np.asarray(y_indices, dtype=int)
    batch = x.shape[0]
    activations, logits = _forward(model, x)
    probs = _softmax(logits)
    loss = float(-np.log(probs[np.arange(batch), y_indices] + 1e-300).mean())

    one_hot = np.zeros_like(probs)
    one_hot[np.arange(batch), y_indices] = 1.0
    delta = (probs - one_hot) / batch
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    for layer in range(len(model.weights) - 1, -1, -1):
        grads_w[layer] = activations[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer == 0:
            break
        delta = delta @ model.weights[layer].T
        kind = HIDDEN_ACTIVATIONS[layer - 1]
        if kind == "tanh":
            delta = delta * (1.0 - activations[layer] ** 2)
        elif kind == "relu":
            delta = delta * (activations[layer] > 0)
        # identity: unchanged
    return loss, grads_w, grads_b


def train_mlp(
    x,
    y,
    config: TrainConfig = TrainConfig(),
    hidden_sizes: Sequence[int] = DEFAULT_HIDDEN_SIZES,
    initial: Optional[MlpModel] = None,
) -> MlpModel:
    """Plain minibatch SGD on softmax cross-entropy.

    With a validation fraction, the epoch with the lowest validation loss
    is the returned snapshot; otherwise the final weights are returned.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=int)
    if x.shape[0] != y.shape[0]:
        raise OracleError("x and y row counts differ")
    present = set(int(v) for v in y)
    if not present <= set(CLASSES):
        raise OracleError(f"labels must lie in {CLASSES}, got {sorted(present)}")
    if len(present) < 2:
        raise OracleError("training data must contain at least 2 classes")
    y_indices = y + 1

    model = initial if initial is not None else init_mlp(x.shape[1], hidden_sizes, config.seed)
    if config.epochs == 0:
        return model

    rng = np.random.default_rng(config.seed + 1)
    n = x.shape[0]
    n_val = int(round(config.validation_fraction * n))
    order = rng.permutation(n)
    val_idx, train_idx = order[:n_val], order[n_val:]
    if len(train_idx) == 0:
        train_idx, val_idx = order, order[:0]

    weights = [w.copy() for w in model.weights]
    biases = [b.copy() for b in model.biases]
    best = (np.inf, None)
    for _epoch in range(config.epochs):
        perm = rng.permutation(len(train_idx))
        for start in range(0, len(perm), config.batch_size):
            batch = train_idx[perm[start : start + config.batch_size]]
            current = MlpModel(tuple(weights), tuple(biases))
            _, grads_w, grads_b = loss_and_grads(current, x[batch], y_indices[batch])
            for layer in range(len(weights)):
                weights[layer] -= config.learning_rate * grads_w[layer]
                biases[layer] -= config.learning_rate * grads_b[layer]
        if len(val_idx):
            snapshot = MlpModel(tuple(w.copy() for w in weights), tuple(b.copy() for b in biases))
            val_loss, _, _ = loss_and_grads(snapshot, x[val_idx], y_indices[val_idx])
            if val_loss < best[0]:
                best = (val_loss, snapshot)
    if best[1] is not None:
        return best[1]
    return MlpModel(tuple(weights), tuple(biases))


class MlpOracle(Oracle):
    """The built-in network as a labeling oracle."""

    def __init__(self, model: MlpModel, feature_names: Sequence[str]) -> None:
        if model.input_size != 2 * len(feature_names):
            raise OracleError(
                f"model expects {model.input_size} inputs, got {2 * len(feature_names)} features"
            )
        self._model = model
        self._feature_names = tuple(feature_names)

    def label(self, first: Item, second: Item) -> int:
        return predict_label(self._model, pair_vector(first, second, self._feature_names))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def mlp_to_dict(model: MlpModel) -> dict:
    return {
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }


def mlp_from_dict(data) -> MlpModel:
    return MlpModel(
        tuple(np.array(w, dtype=float) for w in data["weights"]),
        tuple(np.array(b, dtype=float) for b in data["biases"]),
    )


def save_mlp(path, model: MlpModel) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(mlp_to_dict(model), fh)
        fh.write("\n")


def load_mlp(path) -> MlpModel:
    with open(path, "r", encoding="utf-8") as fh:
        return mlp_from_dict(json.load(fh))
