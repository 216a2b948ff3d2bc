"""Spectral feature network trained with softmax loss plus center loss.

The network is four affine maps::

    spectrum -> FC -> ReLU -> FC -> ReLU -> FC (feature) -> FC (logits) -> softmax

Center loss acts on the feature layer; the last affine map is the
classification head. Class ids are ``1..C`` everywhere in the public API.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence

import numpy as np

from .errors import DivergenceError, FormatError, LengthError, ShapeError, StateError
from .hsi_data import HsiCube, SampleSet

log = logging.getLogger(__name__)

PROB_EPS = 1e-12
CHECKPOINT_MAGIC = b"DMLW1"


@dataclass
class MlpParams:
    """Weights are stored (fan_in, fan_out) so that ``x @ W + b`` maps a row batch."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activations: List[str] = field(default_factory=lambda: ["relu", "relu", "linear"])

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or len(self.weights) < 2:
            raise ShapeError("need matching weight/bias lists with at least two layers")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i} expects {w.shape[0]} inputs, previous layer gives "
                                 f"{self.weights[i - 1].shape[1]}")
        if len(self.activations) != len(self.weights) - 1:
            raise ShapeError("one activation tag per non-head layer")

    @property
    def layer_dims(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         list(self.activations))


@dataclass
class TrainConfig:
    lam: float = 1.0
    center_rate: float = 0.5
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 400
    seed: int = 0
    center_loss_form: str = "norm"
    hidden: Sequence[int] = (128, 64)
    feature_dim: int = 32
    # "exact" recomputes every center over the whole set after each step (slow; for tests)
    center_update: str = "minibatch"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not 0.0 <= self.center_rate <= 1.0:
            raise ValueError("center_rate must lie in [0, 1]")
        if self.center_loss_form not in ("norm", "squared"):
            raise ValueError("center_loss_form is 'norm' or 'squared'")
        if self.center_update not in ("minibatch", "exact"):
            raise ValueError("center_update is 'minibatch' or 'exact'")


@dataclass
class TrainState:
    centers: np.ndarray
    velocities: list
    epoch: int = 0
    seed: int = 0


@dataclass
class FeatureMap:
    values: np.ndarray  # (H, W, F)

    @property
    def shape(self):
        return self.values.shape


@dataclass
class ProbabilityMap:
    values: np.ndarray  # (H, W, C)

    @property
    def shape(self):
        return self.values.shape

    def argmax_labels(self) -> np.ndarray:
        return np.argmax(self.values, axis=-1) + 1


@dataclass
class EpochLoss:
    epoch: int
    softmax_loss: float
    center_loss: float
    joint_loss: float


# -- construction -------------------------------------------------------------


def init_params(layer_dims: Sequence[int], rng) -> MlpParams:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    n_hidden = len(layer_dims) - 2
    activations = ["relu"] * (n_hidden - 1) + ["linear"]
    return MlpParams(weights, biases, activations)


# -- forward ------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _activate(x, tag):
    if tag == "relu":
        return np.maximum(x, 0.0)
    if tag == "linear":
        return x
    raise ValueError(f"unknown activation {tag!r}")


def _forward_cache(params: MlpParams, x: np.ndarray):
    """Forward pass keeping pre-activations for backprop."""
    inputs, pre = [], []
    h = x
    for w, b, tag in zip(params.weights[:-1], params.biases[:-1], params.activations):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = _activate(z, tag)
    feature = h
    inputs.append(feature)
    logits = feature @ params.weights[-1] + params.biases[-1]
    return feature, logits, inputs, pre


def forward(params: MlpParams, spectrum):
    """Run one spectrum, or a (n, B) batch, through the network.

    Returns ``(feature, logits, prob)``.
    """
    x = np.asarray(spectrum, dtype=np.float64)
    if x.shape[-1] != params.input_dim or x.ndim not in (1, 2):
        raise ShapeError(f"expected spectra of length {params.input_dim}, got shape {x.shape}")
    feature, logits, _, _ = _forward_cache(params, np.atleast_2d(x))
    prob = softmax(logits)
    if x.ndim == 1:
        return feature[0], logits[0], prob[0]
    return feature, logits, prob


# -- losses -------------------------------------------------------------------


def _center_rows(centers, labels):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 1 or labels.max() > len(centers)):
        raise StateError(f"no center for class ids {sorted(set(labels.tolist()) - set(range(1, len(centers) + 1)))}")
    return np.asarray(centers)[labels - 1]


def center_loss(features, labels, centers, form="norm") -> float:
    """Sum over samples of ||f - c_y|| (``norm``) or 0.5 ||f - c_y||^2 (``squared``)."""
    diff = np.atleast_2d(features) - _center_rows(centers, np.atleast_1d(labels))
    if form == "norm":
        return float(np.linalg.norm(diff, axis=1).sum())
    if form == "squared":
        return float(0.5 * (diff * diff).sum())
    raise ValueError(f"unknown center loss form {form!r}")


def softmax_loss(prob, label) -> float:
    return float(-np.log(max(float(prob[int(label) - 1]), PROB_EPS)))


def joint_loss(params: MlpParams, x, labels, centers, lam=1.0, form="norm"):
    """Batch objective: mean cross-entropy + lam * mean center loss.

    Returns ``(joint, softmax_part, center_part)``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    feature, logits, _, _ = _forward_cache(params, np.atleast_2d(x))
    prob = softmax(logits)
    n = len(labels)
    ls = -np.log(np.maximum(prob[np.arange(n), labels - 1], PROB_EPS)).mean()
    lc = center_loss(feature, labels, centers, form) / n
    return ls + lam * lc, ls, lc


# -- gradients ----------------------------------------------------------------


def _center_grad(feature, rows, form):
    diff = feature - rows
    if form == "squared":
        return diff
    norm = np.linalg.norm(diff, axis=1, keepdims=True)
    # the norm is not differentiable at f == c; its subgradient 0 is used there
    safe = np.where(norm > 0.0, norm, 1.0)
    return np.where(norm > 0.0, diff / safe, 0.0)


def backward(params: MlpParams, x, labels, state: TrainState, config: TrainConfig):
    """Gradients of :func:`joint_loss` for every weight and bias.

    Centers are treated as constants. Returns ``(grad_weights, grad_biases,
    cache)`` where ``cache`` holds the batch features, probabilities and the
    loss parts for reuse by the training loop.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    feature, logits, inputs, pre = _forward_cache(params, x)
    prob = softmax(logits)
    rows = _center_rows(state.centers, labels)

    d_logits = prob.copy()
    d_logits[np.arange(n), labels - 1] -= 1.0
    d_logits /= n

    n_layers = len(params.weights)
    grad_w = [None] * n_layers
    grad_b = [None] * n_layers
    grad_w[-1] = inputs[-1].T @ d_logits
    grad_b[-1] = d_logits.sum(axis=0)
    d_h = d_logits @ params.weights[-1].T
    if config.lam:
        d_h = d_h + (config.lam / n) * _center_grad(feature, rows, config.center_loss_form)

    for i in range(n_layers - 2, -1, -1):
        if params.activations[i] == "relu":
            d_z = d_h * (pre[i] > 0.0)
        else:
            d_z = d_h
        grad_w[i] = inputs[i].T @ d_z
        grad_b[i] = d_z.sum(axis=0)
        if i:
            d_h = d_z @ params.weights[i].T

    ls = -np.log(np.maximum(prob[np.arange(n), labels - 1], PROB_EPS))
    diff = feature - rows
    if config.center_loss_form == "norm":
        lc = np.linalg.norm(diff, axis=1)
    else:
        lc = 0.5 * (diff * diff).sum(axis=1)
    cache = {"feature": feature, "prob": prob, "softmax_loss": ls.sum(), "center_loss": lc.sum()}
    return grad_w, grad_b, cache


# -- centers ------------------------------------------------------------------


def update_centers(state: TrainState, features, labels, center_rate) -> TrainState:
    """Damped minibatch center step: c -= rate * sum(c - f) / (1 + count)."""
    features = np.atleast_2d(features)
    labels = np.asarray(labels, dtype=np.int64)
    centers = state.centers.copy()
    for cls in np.unique(labels):
        members = features[labels == cls]
        c = centers[cls - 1]
        delta = (c - members).sum(axis=0) / (1.0 + len(members))
        centers[cls - 1] = c - center_rate * delta
    return TrainState(centers, state.velocities, state.epoch, state.seed)


def class_means(features, labels, num_classes) -> np.ndarray:
    """Exact per-class feature averages; classes without samples get zeros."""
    features = np.atleast_2d(features)
    labels = np.asarray(labels, dtype=np.int64)
    sums = np.zeros((num_classes, features.shape[1]))
    np.add.at(sums, labels - 1, features)
    counts = np.bincount(labels - 1, minlength=num_classes)[:, None]
    return sums / np.maximum(counts, 1)


def within_class_scatter(params: MlpParams, samples: SampleSet) -> float:
    """Mean distance from each feature to its class's mean feature."""
    feature, _, _ = forward(params, samples.spectra)
    means = class_means(feature, samples.labels, params.num_classes)
    return float(np.linalg.norm(feature - means[samples.labels - 1], axis=1).mean())


# -- training -----------------------------------------------------------------


def train(samples: SampleSet, config: TrainConfig):
    """Minibatch SGD with momentum on the joint loss.

    Returns ``(params, state, history)`` where history has one
    :class:`EpochLoss` per epoch holding per-sample mean losses.
    """
    if len(samples) == 0:
        raise ShapeError("empty training set")
    rng = np.random.default_rng(config.seed)
    dims = [samples.dimension, *config.hidden, config.feature_dim, samples.class_count]
    params = init_params(dims, rng)
    feature0, _, _ = forward(params, samples.spectra)
    state = TrainState(
        centers=class_means(feature0, samples.labels, samples.class_count),
        velocities=[(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(params.weights, params.biases)],
        seed=config.seed,
    )
    n = len(samples)
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        tot_s = tot_c = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            x, y = samples.spectra[idx], samples.labels[idx]
            grad_w, grad_b, cache = backward(params, x, y, state, config)
            tot_s += cache["softmax_loss"]
            tot_c += cache["center_loss"]
            for i, (vw, vb) in enumerate(state.velocities):
                vw *= config.momentum
                vw -= config.learning_rate * grad_w[i]
                vb *= config.momentum
                vb -= config.learning_rate * grad_b[i]
                params.weights[i] += vw
                params.biases[i] += vb
            if config.center_update == "exact":
                feats, _, _ = forward(params, samples.spectra)
                state.centers = class_means(feats, samples.labels, samples.class_count)
            else:
                state = update_centers(state, cache["feature"], y, config.center_rate)
        ls, lc = tot_s / n, tot_c / n
        joint = ls + config.lam * lc
        if not np.isfinite(joint):
            raise DivergenceError(epoch)
        state.epoch = epoch
        history.append(EpochLoss(epoch, float(ls), float(lc), float(joint)))
        if epoch % 50 == 0 or epoch == config.epochs:
            log.debug("epoch %d: Ls=%.4f Lc=%.4f L=%.4f", epoch, ls, lc, joint)
    return params, state, history


def predict(params: MlpParams, spectra) -> np.ndarray:
    _, _, prob = forward(params, np.atleast_2d(spectra))
    return np.argmax(prob, axis=1) + 1


def extract(params: MlpParams, cube: HsiCube, chunk=65536):
    """Per-pixel features and class probabilities for a whole cube."""
    if cube.bands != params.input_dim:
        raise ShapeError(f"cube has {cube.bands} bands, network expects {params.input_dim}")
    pixels = cube.pixels()
    n = pixels.shape[0]
    feats = np.empty((n, params.feature_dim))
    probs = np.empty((n, params.num_classes))
    for start in range(0, n, chunk):
        f, _, p = forward(params, pixels[start : start + chunk])
        feats[start : start + chunk] = f
        probs[start : start + chunk] = p
    h, w = cube.height, cube.width
    return FeatureMap(feats.reshape(h, w, -1)), ProbabilityMap(probs.reshape(h, w, -1))


# -- persistence --------------------------------------------------------------


def save_checkpoint(path, params: MlpParams, centers) -> None:
    centers = np.asarray(centers)
    if centers.shape != (params.num_classes, params.feature_dim):
        raise ShapeError(f"centers must be {params.num_classes}x{params.feature_dim}")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(params.weights)))
        for w, b in zip(params.weights, params.biases):
            fh.write(struct.pack("<II", *w.shape))
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(centers, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns ``(params, centers)``; hidden layers are ReLU, the feature layer linear."""
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise FormatError(f"{path}: not a DMLW1 checkpoint")
    pos = len(CHECKPOINT_MAGIC)

    def take(nbytes):
        nonlocal pos
        if pos + nbytes > len(data):
            raise LengthError(f"{path}: truncated checkpoint")
        chunk = data[pos : pos + nbytes]
        pos += nbytes
        return chunk

    (n_layers,) = struct.unpack("<I", take(4))
    weights, biases = [], []
    for _ in range(n_layers):
        rows, cols = struct.unpack("<II", take(8))
        weights.append(np.frombuffer(take(4 * rows * cols), dtype="<f4").reshape(rows, cols).astype(np.float64))
        biases.append(np.frombuffer(take(4 * cols), dtype="<f4").astype(np.float64))
    n_classes, n_feat = weights[-1].shape[1], weights[-1].shape[0]
    centers = np.frombuffer(take(4 * n_classes * n_feat), dtype="<f4").reshape(n_classes, n_feat).astype(np.float64)
    if pos != len(data):
        raise LengthError(f"{path}: {len(data) - pos} trailing bytes")
    activations = ["relu"] * (n_layers - 2) + ["linear"]
    return MlpParams(weights, biases, activations), centers


def write_loss_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "softmax_loss", "center_loss", "joint_loss"])
        for row in history:
            writer.writerow([row.epoch, repr(row.softmax_loss), repr(row.center_loss), repr(row.joint_loss)])
