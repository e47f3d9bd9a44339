"""
Fully connected networks trained with mean squared error and SGD with L2 regularization, written once
and executed by one of two backends.

* :class:`PlaintextBackend` runs the layer math on ``float64`` NumPy arrays.
* :class:`SecureBackend` runs the same math on :class:`ppcl.mpc.shares.SharedTensor` values through an
  :class:`ppcl.mpc.session.MPCSession`; every product is followed by a truncation and every activation
  is evaluated with the secure comparison.

Hidden layers use ReLU and the output layer uses the semi-sigmoid ``clamp(z, 0, 1)``. Derivatives are
taken as 0 at the kinks (``z = 0`` and ``z = 1``) in both backends.

The loss of a batch is :math:`\\sum_r w_r \\cdot \\frac{1}{K} \\sum_k (a_{rk} - y_{rk})^2` with row
weights :math:`w_r` that default to :math:`1/B`, i.e. the plain batch mean. Non-uniform row weights
implement the equal-weight mixing of own and shared samples in :func:`train_epochs_mixed`.

A parameter update is :math:`\\theta \\leftarrow (1 - \\eta\\lambda)\\,\\theta - \\eta\\,\\nabla`, which
is :math:`\\theta - \\eta(\\nabla + \\lambda\\theta)` applied to weights and biases alike.

Checkpoints are a short text header (``PPCL-MODEL v1``, layer sizes, activations, feature-extractor
depth, seed, ``END``) followed by little-endian ``float64`` values, layer by layer, weights row-major then
bias.

"""
from dataclasses import dataclass, field
from enum import Enum
import copy
import math
import os
from typing import Sequence
import numpy as np
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support

from ..mpc.session import MPCSession
from ..mpc.shares import (SharedTensor, add_shared, broadcast_rows, concat_shared, sub_shared, sum_rows, take_rows,
                          transpose)
from ..utils.constants import FCN_LAYER_SIZES, TRAINING_DEFAULTS

CHECKPOINT_MAGIC = 'PPCL-MODEL v1'


class Activation(str, Enum):
    RELU = 'relu'
    SEMI_SIGMOID = 'semi_sigmoid'


class BackendKind(str, Enum):
    PLAINTEXT = 'plaintext'
    SECURE = 'secure'


@dataclass
class ModelConfig:
    """
    Dense network shape.

    Attributes:
        layer_sizes (tuple[int]): Widths from input to output, e.g. ``(784, 64, 64, 64, 10)``.
        hidden_activation (Activation): Activation of every layer but the last.
        output_activation (Activation): Activation of the last layer.
        fe_layers (int): Number of leading layers forming the feature extractor.
    """
    layer_sizes: tuple = FCN_LAYER_SIZES
    hidden_activation: Activation = Activation.RELU
    output_activation: Activation = Activation.SEMI_SIGMOID
    fe_layers: int = 3

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        self.hidden_activation = Activation(self.hidden_activation)
        self.output_activation = Activation(self.output_activation)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"A model needs at least an input and an output width, got {self.layer_sizes}.")
        if not 0 <= self.fe_layers < self.n_layers:
            raise ValueError(f"fe_layers must be in [0, {self.n_layers}), got {self.fe_layers}.")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def q(self) -> int:
        """Embedding width (output of the feature extractor)."""
        return self.layer_sizes[self.fe_layers]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def activations(self) -> list[Activation]:
        return [self.hidden_activation] * (self.n_layers - 1) + [self.output_activation]

    def classifier_config(self, input_width: int = None) -> 'ModelConfig':
        """Shape of the classifier head, optionally with a different input width (``p * q`` for LTFE)."""
        sizes = list(self.layer_sizes[self.fe_layers:])
        if input_width is not None:
            sizes[0] = input_width
        return ModelConfig(tuple(sizes), self.hidden_activation, self.output_activation, 0)

    def to_dict(self) -> dict:
        return {'layer_sizes': list(self.layer_sizes), 'hidden_activation': self.hidden_activation.value,
                'output_activation': self.output_activation.value, 'fe_layers': self.fe_layers}

    @classmethod
    def from_dict(cls, data: dict) -> 'ModelConfig':
        return cls(**data)


@dataclass
class TrainConfig:
    """SGD hyperparameters; ``epochs`` applies to every training phase."""
    lr: float = TRAINING_DEFAULTS['lr']
    l2: float = TRAINING_DEFAULTS['l2']
    epochs: int = TRAINING_DEFAULTS['epochs']
    batch_size: int = TRAINING_DEFAULTS['batch_size']
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"Learning rate must be positive, got {self.lr}.")
        if self.l2 < 0:
            raise ValueError(f"L2 weight must be non-negative, got {self.l2}.")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1.")

    def to_dict(self) -> dict:
        return {'lr': self.lr, 'l2': self.l2, 'epochs': self.epochs, 'batch_size': self.batch_size, 'seed': self.seed}

    @classmethod
    def from_dict(cls, data: dict) -> 'TrainConfig':
        return cls(**data)


@dataclass(eq=False)
class DenseLayer:
    """
    Affine layer ``z = x W^T + b`` followed by ``activation``.

    ``W`` (``out x in``) and ``b`` (``out``) are either plaintext arrays or shared tensors.
    """
    W: np.ndarray | SharedTensor
    b: np.ndarray | SharedTensor
    activation: Activation = Activation.RELU

    def __post_init__(self):
        if len(self.W.shape) != 2 or tuple(self.b.shape) != (self.W.shape[0],):
            raise ValueError(f"Inconsistent layer shapes: W {self.W.shape}, b {self.b.shape}.")

    @property
    def fan_in(self) -> int:
        return self.W.shape[1]

    @property
    def fan_out(self) -> int:
        return self.W.shape[0]

    @property
    def is_shared(self) -> bool:
        return isinstance(self.W, SharedTensor)


@dataclass(eq=False)
class Model:
    """
    Stack of :class:`DenseLayer`.

    Attributes:
        layers (list[DenseLayer]): Layers from input to output.
        fe_layers (int): Number of leading layers forming the feature extractor.
        seed (int): Initialization seed, kept for checkpoints.
        version (int): Bumped by every :func:`sgd_step`; caches from older versions are rejected.
    """
    layers: list
    fe_layers: int = 3
    seed: int = 0
    version: int = 0

    def __post_init__(self):
        for prev, nxt in zip(self.layers[:-1], self.layers[1:]):
            if prev.fan_out != nxt.fan_in:
                raise ValueError(f"Layer widths do not chain: {prev.fan_out} -> {nxt.fan_in}.")

    @property
    def layer_sizes(self) -> tuple:
        return (self.layers[0].fan_in,) + tuple(layer.fan_out for layer in self.layers)

    @property
    def activations(self) -> list[Activation]:
        return [layer.activation for layer in self.layers]

    @property
    def is_shared(self) -> bool:
        return self.layers[0].is_shared

    def feature_extractor(self) -> 'Model':
        """The first ``fe_layers`` layers (the layer objects are shared with this model)."""
        return Model(self.layers[:self.fe_layers], fe_layers=self.fe_layers, seed=self.seed)

    def classifier(self) -> 'Model':
        """The layers after the feature extractor (the layer objects are shared with this model)."""
        return Model(self.layers[self.fe_layers:], fe_layers=0, seed=self.seed)

    def copy(self) -> 'Model':
        return copy.deepcopy(self)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Plaintext forward pass."""
        return forward(self, X, PLAINTEXT)[0]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)


@dataclass(eq=False)
class CompositeModel:
    """Classifier over the concatenated embeddings of several extractors: ``h([f_1(x); ...; f_p(x)])``."""
    extractors: list
    classifier: Model

    def embed(self, X: np.ndarray) -> np.ndarray:
        return np.hstack([extractor.predict_proba(X) for extractor in self.extractors])

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.classifier.predict_proba(self.embed(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)


class PlaintextBackend:
    """Layer math on ``float64`` arrays."""
    kind = BackendKind.PLAINTEXT

    def linear(self, x, layer: DenseLayer):
        return x @ layer.W.T + layer.b

    def activate(self, z, activation: Activation):
        if activation == Activation.RELU:
            mask = (z > 0).astype(np.float64)
            return z * mask, mask
        return np.clip(z, 0.0, 1.0), ((z > 0) & (z < 1)).astype(np.float64)

    def output_delta(self, a, mask, y, row_factor: np.ndarray):
        return (a - y) * mask * row_factor[:, None]

    def weight_grad(self, delta, a_prev):
        return delta.T @ a_prev

    def bias_grad(self, delta):
        return delta.sum(axis=0)

    def backprop(self, delta, W, mask):
        return (delta @ W) * mask

    def sgd_update(self, param, grad, lr: float, l2: float):
        return (1.0 - lr * l2) * param - lr * grad

    def take_rows(self, x, rows):
        return x[rows]

    def concat_rows(self, parts):
        return np.concatenate(parts, axis=0)

    def concat_cols(self, parts):
        return np.concatenate(parts, axis=1)

    def n_rows(self, x) -> int:
        return x.shape[0]


class SecureBackend:
    """
    Layer math on shared tensors.

    Args:
        session (MPCSession): Session providing the network and the correlated randomness.
    """
    kind = BackendKind.SECURE

    def __init__(self, session: MPCSession):
        self.session = session

    def linear(self, x: SharedTensor, layer: DenseLayer) -> SharedTensor:
        z = self.session.matmul_fixed(x, transpose(layer.W))
        return add_shared(z, broadcast_rows(layer.b, x.shape[0]))

    def activate(self, z: SharedTensor, activation: Activation):
        return self.session.activate(z, Activation(activation).value)

    def output_delta(self, a: SharedTensor, mask: SharedTensor, y: SharedTensor, row_factor: np.ndarray):
        masked = self.session.mul(sub_shared(a, y), mask)
        return self.session.mul_real(masked, np.broadcast_to(row_factor[:, None], a.shape))

    def weight_grad(self, delta: SharedTensor, a_prev: SharedTensor) -> SharedTensor:
        return self.session.matmul_fixed(transpose(delta), a_prev)

    def bias_grad(self, delta: SharedTensor) -> SharedTensor:
        return sum_rows(delta)

    def backprop(self, delta: SharedTensor, W: SharedTensor, mask: SharedTensor) -> SharedTensor:
        return self.session.mul(self.session.matmul_fixed(delta, W), mask)

    def sgd_update(self, param: SharedTensor, grad: SharedTensor, lr: float, l2: float) -> SharedTensor:
        return sub_shared(self.session.mul_real(param, 1.0 - lr * l2), self.session.mul_real(grad, lr))

    def take_rows(self, x: SharedTensor, rows) -> SharedTensor:
        return take_rows(x, rows)

    def concat_rows(self, parts) -> SharedTensor:
        return concat_shared(parts, axis=0)

    def concat_cols(self, parts) -> SharedTensor:
        return concat_shared(parts, axis=-1)

    def n_rows(self, x: SharedTensor) -> int:
        return x.shape[0]


PLAINTEXT = PlaintextBackend()


@dataclass(eq=False)
class ForwardCache:
    """Inputs and derivative masks of every layer of one forward pass."""
    inputs: list
    masks: list
    output: object
    version: int


def forward(model: Model, x, backend=PLAINTEXT) -> tuple[object, ForwardCache]:
    """
    Forward pass.

    Args:
        model (Model): Network (plaintext for :class:`PlaintextBackend`, shared for :class:`SecureBackend`).
        x (np.ndarray | SharedTensor): ``batch x layer_sizes[0]`` inputs.
        backend: Backend executing the math.

    Returns:
        tuple: Output activations and the :class:`ForwardCache` needed by :func:`backward`.

    Raises:
        ValueError: If the input width does not match the first layer.
    """
    if len(x.shape) != 2 or x.shape[1] != model.layer_sizes[0]:
        raise ValueError(f"Input of shape {tuple(x.shape)} does not fit a model with input width "
                         f"{model.layer_sizes[0]}.")
    inputs, masks = [], []
    a = x
    for layer in model.layers:
        inputs.append(a)
        a, mask = backend.activate(backend.linear(a, layer), layer.activation)
        masks.append(mask)
    return a, ForwardCache(inputs, masks, a, model.version)


def forward_batched(model: Model, X, backend=PLAINTEXT, batch_size: int = 32):
    """Forward pass in consecutive batches of ``batch_size`` rows; outputs are stacked in order."""
    n = backend.n_rows(X)
    outputs = [forward(model, backend.take_rows(X, np.arange(start, min(start + batch_size, n))), backend)[0]
               for start in range(0, n, batch_size)]
    return backend.concat_rows(outputs)


def mse_loss(pred: np.ndarray, onehot: np.ndarray, row_weights: np.ndarray = None) -> float:
    """
    Mean squared error, averaged over classes and (weighted) over rows.

    Raises:
        ValueError: If the shapes differ.
    """
    pred, onehot = np.asarray(pred, dtype=np.float64), np.asarray(onehot, dtype=np.float64)
    if pred.shape != onehot.shape:
        raise ValueError(f"Prediction shape {pred.shape} does not match label shape {onehot.shape}.")
    if pred.size == 0:
        return 0.0
    per_row = np.mean((pred - onehot) ** 2, axis=1)
    if row_weights is None:
        return float(per_row.mean())
    return float(np.dot(row_weights, per_row))


def backward(model: Model, cache: ForwardCache, onehot, backend=PLAINTEXT, row_weights: np.ndarray = None) -> list:
    """
    Gradients of the (row-weighted) MSE loss with respect to every layer's weights and bias.

    Args:
        model (Model): The model the cache was computed with.
        cache (ForwardCache): Result of :func:`forward` on the current model version.
        onehot (np.ndarray | SharedTensor): One-hot labels, same shape as the output.
        backend: Backend executing the math.
        row_weights (np.ndarray, optional): Public per-row loss weights. Defaults to ``1 / batch``.

    Returns:
        list[tuple]: ``(dW, db)`` per layer, input to output.

    Raises:
        RuntimeError: If the model changed since the forward pass.
    """
    if cache.version != model.version:
        raise RuntimeError(f"Stale forward cache (version {cache.version}, model at {model.version}). "
                           f"Run forward again before backward.")
    n_rows = backend.n_rows(cache.output)
    n_classes = model.layer_sizes[-1]
    if row_weights is None:
        row_weights = np.full(n_rows, 1.0 / n_rows)
    delta = backend.output_delta(cache.output, cache.masks[-1], onehot, 2.0 * np.asarray(row_weights) / n_classes)
    grads = [None] * len(model.layers)
    for idx in range(len(model.layers) - 1, -1, -1):
        grads[idx] = (backend.weight_grad(delta, cache.inputs[idx]), backend.bias_grad(delta))
        if idx > 0:
            delta = backend.backprop(delta, model.layers[idx].W, cache.masks[idx - 1])
    return grads


def sgd_step(model: Model, grads: list, train_config: TrainConfig, backend=PLAINTEXT):
    """
    Applies ``theta <- theta - lr * (grad + l2 * theta)`` to every weight and bias, then bumps the version.

    Raises:
        ValueError: If a gradient does not match its parameter's shape.
    """
    if len(grads) != len(model.layers):
        raise ValueError(f"Got {len(grads)} gradients for {len(model.layers)} layers.")
    for layer, (dW, db) in zip(model.layers, grads):
        if tuple(dW.shape) != tuple(layer.W.shape) or tuple(db.shape) != tuple(layer.b.shape):
            raise ValueError(f"Gradient shapes {dW.shape}/{db.shape} do not match {layer.W.shape}/{layer.b.shape}.")
        layer.W = backend.sgd_update(layer.W, dW, train_config.lr, train_config.l2)
        layer.b = backend.sgd_update(layer.b, db, train_config.lr, train_config.l2)
    model.version += 1


def init_weights(config: ModelConfig, seed: int = 0) -> Model:
    """
    Glorot-uniform weights (bound ``sqrt(6 / (fan_in + fan_out))``) and zero biases.

    Example:

        .. code-block:: python

            model = init_weights(ModelConfig(), seed=1)
            model.layer_sizes     # (784, 64, 64, 64, 10)

    """
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, activation in zip(config.layer_sizes[:-1], config.layer_sizes[1:], config.activations):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        layers.append(DenseLayer(rng.uniform(-bound, bound, size=(fan_out, fan_in)), np.zeros(fan_out), activation))
    return Model(layers, fe_layers=config.fe_layers, seed=seed)


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def mixed_batch_sizes(n_own: int, n_other: int, batch_size: int) -> list[tuple[int, int]]:
    """
    ``(own_rows, other_rows)`` of every step of one mixed epoch.

    The epoch has ``ceil(n_own / batch_size)`` steps; the other party's rows are spread over the same
    number of steps in batches of ``ceil(n_other / steps)``.
    """
    steps = math.ceil(n_own / batch_size) if n_own else 0
    if steps == 0:
        return []
    other_batch = math.ceil(n_other / steps) if n_other else 0
    sizes = []
    for step in range(steps):
        own = min(batch_size, n_own - step * batch_size)
        other = max(0, min(other_batch, n_other - step * other_batch))
        sizes.append((own, other))
    return sizes


def train_epochs(model: Model, X, Y, train_config: TrainConfig, backend=PLAINTEXT,
                 rng: np.random.Generator = None, verbose: bool = False) -> list[float]:
    """
    Trains ``model`` in place for ``train_config.epochs`` epochs, reshuffling rows every epoch.

    Args:
        model (Model): Model matching the backend (plaintext or shared).
        X: Inputs, plaintext array or shared tensor.
        Y: One-hot labels, plaintext array or shared tensor.
        train_config (TrainConfig): Hyperparameters.
        backend: Backend executing the math.
        rng (np.random.Generator, optional): Shuffling generator. Defaults to one seeded with
            ``train_config.seed``.
        verbose (bool): Print one line per epoch.

    Returns:
        list[float]: Mean training loss per epoch (plaintext backend only; empty for secure training).
    """
    rng = rng if rng is not None else np.random.default_rng(train_config.seed)
    n = backend.n_rows(X)
    history = []
    for epoch in range(train_config.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, train_config.batch_size):
            rows = order[start:start + train_config.batch_size]
            x_b, y_b = backend.take_rows(X, rows), backend.take_rows(Y, rows)
            out, cache = forward(model, x_b, backend)
            if backend.kind == BackendKind.PLAINTEXT:
                losses.append(mse_loss(out, y_b) * len(rows))
            sgd_step(model, backward(model, cache, y_b, backend), train_config, backend)
        if losses:
            history.append(sum(losses) / n)
        if verbose:
            loss_msg = f", loss {history[-1]:.5f}" if losses else ''
            print(f"(Info): Epoch {epoch + 1}/{train_config.epochs} on {n} samples ({backend.kind.value}){loss_msg}.")
    return history


def train_epochs_mixed(model: Model, X_own, Y_own, X_other, Y_other, train_config: TrainConfig,
                       backend=PLAINTEXT, rng: np.random.Generator = None, verbose: bool = False) -> list[float]:
    """
    Joint training on own and shared samples with equal weight on both empirical risks.

    Every step combines one batch of own rows (weight ``1 / |own batch|`` each) with one batch of the
    other party's rows (weight ``1 / |other batch|`` each), see :func:`mixed_batch_sizes`.

    Returns:
        list[float]: Mean weighted loss per epoch (plaintext backend only).
    """
    rng = rng if rng is not None else np.random.default_rng(train_config.seed)
    n_own, n_other = backend.n_rows(X_own), backend.n_rows(X_other)
    history = []
    for epoch in range(train_config.epochs):
        own_order, other_order = rng.permutation(n_own), rng.permutation(n_other)
        own_start = other_start = 0
        losses = []
        for own_rows, other_rows in mixed_batch_sizes(n_own, n_other, train_config.batch_size):
            own_idx = own_order[own_start:own_start + own_rows]
            other_idx = other_order[other_start:other_start + other_rows]
            own_start += own_rows
            other_start += other_rows
            if other_rows:
                x_b = backend.concat_rows([backend.take_rows(X_own, own_idx), backend.take_rows(X_other, other_idx)])
                y_b = backend.concat_rows([backend.take_rows(Y_own, own_idx), backend.take_rows(Y_other, other_idx)])
                weights = np.concatenate([np.full(own_rows, 1.0 / own_rows), np.full(other_rows, 1.0 / other_rows)])
            else:
                x_b, y_b = backend.take_rows(X_own, own_idx), backend.take_rows(Y_own, own_idx)
                weights = np.full(own_rows, 1.0 / own_rows)
            out, cache = forward(model, x_b, backend)
            if backend.kind == BackendKind.PLAINTEXT:
                losses.append(mse_loss(out, y_b, weights))
            sgd_step(model, backward(model, cache, y_b, backend, weights), train_config, backend)
        if losses:
            history.append(float(np.mean(losses)))
        if verbose:
            print(f"(Info): Mixed epoch {epoch + 1}/{train_config.epochs} on {n_own}+{n_other} samples "
                  f"({backend.kind.value}).")
    return history


def share_model(model: Model, session: MPCSession, owner: int) -> Model:
    """``owner`` secret-shares every weight and bias of a plaintext model."""
    layers = [DenseLayer(session.share_input(layer.W, owner), session.share_input(layer.b, owner), layer.activation)
              for layer in model.layers]
    return Model(layers, fe_layers=model.fe_layers, seed=model.seed)


def reveal_model(model: Model, session: MPCSession, to: int) -> Model:
    """Opens every weight and bias of a shared model to party ``to``."""
    layers = [DenseLayer(session.reveal(layer.W, to), session.reveal(layer.b, to), layer.activation)
              for layer in model.layers]
    return Model(layers, fe_layers=model.fe_layers, seed=model.seed)


@dataclass
class EvaluationReport:
    """
    Per-label one-vs-rest metrics in percent.

    Attributes:
        labels (np.ndarray): Class labels ``0 .. K-1``.
        accuracy, precision, recall, f1 (np.ndarray): Per-label metrics (0-100).
        confusion (np.ndarray): ``K x K`` confusion matrix (rows true, columns predicted).
        overall_accuracy (float): Fraction of correct predictions in percent.
    """
    labels: np.ndarray
    accuracy: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    confusion: np.ndarray
    overall_accuracy: float = field(default=0.0)

    def to_records(self, method: str = '', party: str = '') -> list[dict]:
        return [{'method': method, 'party': party, 'label': int(label),
                 'accuracy': float(self.accuracy[i]), 'precision': float(self.precision[i]),
                 'recall': float(self.recall[i]), 'f1': float(self.f1[i])}
                for i, label in enumerate(self.labels)]


def evaluate(model, dataset) -> EvaluationReport:
    """
    Per-label accuracy, precision, recall and F1 of ``model`` on ``dataset`` (prediction = argmax).

    Args:
        model (Model | CompositeModel): Plaintext model.
        dataset: Object with ``X``, ``y`` and ``n_classes`` (:class:`ppcl.learning.datasets.LabeledDataset`).

    Returns:
        EvaluationReport: Metrics in percent.
    """
    labels = np.arange(dataset.n_classes)
    y_true = np.asarray(dataset.y, dtype=np.int64)
    if not len(y_true):
        zeros = np.zeros(len(labels))
        return EvaluationReport(labels, zeros, zeros, zeros, zeros, np.zeros((len(labels), len(labels)), dtype=np.int64))
    y_pred = model.predict(dataset.X)
    confusion = confusion_matrix(y_true, y_pred, labels=labels)
    precision, recall, f1, _ = precision_recall_fscore_support(y_true, y_pred, labels=labels, zero_division=0)
    total = confusion.sum()
    tp = np.diag(confusion)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    accuracy = (total - fp - fn) / total
    overall = tp.sum() / total
    return EvaluationReport(labels, 100.0 * accuracy, 100.0 * precision, 100.0 * recall, 100.0 * f1, confusion,
                            100.0 * float(overall))


def save_checkpoint(model: Model, path: str):
    """Writes a plaintext model checkpoint."""
    if model.is_shared:
        raise ValueError("Only plaintext models can be checkpointed; reveal the model first.")
    header = [CHECKPOINT_MAGIC,
              'layer_sizes ' + ' '.join(map(str, model.layer_sizes)),
              'activations ' + ' '.join(a.value for a in model.activations),
              f'fe_layers {model.fe_layers}',
              f'seed {model.seed}',
              'END']
    with open(path, 'wb') as ckpt:
        ckpt.write(('\n'.join(header) + '\n').encode('ascii'))
        for layer in model.layers:
            ckpt.write(np.ascontiguousarray(layer.W, dtype='<f8').tobytes())
            ckpt.write(np.ascontiguousarray(layer.b, dtype='<f8').tobytes())


def load_checkpoint(path: str) -> Model:
    """
    Reads a checkpoint written by :func:`save_checkpoint`.

    Raises:
        FileNotFoundError: If the file does not exist.
        ValueError: If the header or payload is malformed.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Checkpoint {path} not found.")
    with open(path, 'rb') as ckpt:
        content = ckpt.read()
    marker = b'\nEND\n'
    end = content.find(marker)
    if end < 0:
        raise ValueError(f"{path} is missing the checkpoint header terminator.")
    lines = content[:end].decode('ascii').split('\n')
    if lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a {CHECKPOINT_MAGIC} checkpoint.")
    fields = {line.split(' ', 1)[0]: line.split(' ', 1)[1] for line in lines[1:]}
    sizes = [int(s) for s in fields['layer_sizes'].split()]
    activations = [Activation(a) for a in fields['activations'].split()]
    values = np.frombuffer(content[end + len(marker):], dtype='<f8').astype(np.float64)
    expected = sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))
    if values.size != expected:
        raise ValueError(f"{path} holds {values.size} parameters, expected {expected}.")
    layers, offset = [], 0
    for fan_in, fan_out, activation in zip(sizes[:-1], sizes[1:], activations):
        W = values[offset:offset + fan_in * fan_out].reshape(fan_out, fan_in)
        offset += fan_in * fan_out
        b = values[offset:offset + fan_out]
        offset += fan_out
        layers.append(DenseLayer(W.copy(), b.copy(), activation))
    return Model(layers, fe_layers=int(fields['fe_layers']), seed=int(fields['seed']))


def stack_features(parts: Sequence, backend=PLAINTEXT):
    """Column-wise concatenation of per-party embeddings (``[f_1(x); f_2(x)]``)."""
    return backend.concat_cols(list(parts))
