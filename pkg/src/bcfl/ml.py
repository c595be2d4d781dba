"""Feed-forward autoencoder trained by mini-batch SGD, written against numpy.

Layout of the flat weight vector: for each layer in order, the (in, out)
weight matrix in row-major order followed by its ``out`` biases. Hidden
layers use tanh, the output layer a logistic sigmoid.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .canonical import canonical_hash
from .errors import BadTopology, CorruptModel, EmptyDataset, UnnormalizedInput
from .traffic import N_FEATURES, FeatureVector

MAGIC = b"FCM1"
DEFAULT_SHAPES: tuple[tuple[int, int], ...] = ((N_FEATURES, 8), (8, N_FEATURES))


def _check_shapes(shapes, io_dim: int | None) -> tuple[tuple[int, int], ...]:
    shapes = tuple((int(i), int(o)) for i, o in shapes)
    if not shapes:
        raise BadTopology("at least one layer is required")
    if any(i < 1 or o < 1 for i, o in shapes):
        raise BadTopology("layer dimensions must be positive")
    for (_, out_dim), (in_dim, _) in zip(shapes, shapes[1:]):
        if out_dim != in_dim:
            raise BadTopology(f"layer chain broken: {out_dim} -> {in_dim}")
    if io_dim is not None and (shapes[0][0] != io_dim or shapes[-1][1] != io_dim):
        raise BadTopology(f"autoencoder must map {io_dim} features to {io_dim}")
    return shapes


def param_count(shapes) -> int:
    return sum(i * o + o for i, o in shapes)


@dataclass(frozen=True, eq=False)
class ModelParameters:
    layer_shapes: tuple[tuple[int, int], ...]
    weights: np.ndarray
    version: int = 0

    def __post_init__(self):
        shapes = _check_shapes(self.layer_shapes, None)
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        w.setflags(write=False)
        if w.size != param_count(shapes):
            raise BadTopology(f"expected {param_count(shapes)} weights, got {w.size}")
        object.__setattr__(self, "layer_shapes", shapes)
        object.__setattr__(self, "weights", w)

    @property
    def param_hash(self) -> bytes:
        return canonical_hash(serialize(self))

    def with_weights(self, weights: np.ndarray, version: int) -> "ModelParameters":
        return ModelParameters(self.layer_shapes, weights, version)

    def layers(self, weights: np.ndarray | None = None):
        """Yield (W, b) views per layer."""
        w = self.weights if weights is None else weights
        pos = 0
        for i, o in self.layer_shapes:
            W = w[pos:pos + i * o].reshape(i, o)
            pos += i * o
            yield W, w[pos:pos + o]
            pos += o

    def __eq__(self, other):
        if not isinstance(other, ModelParameters):
            return NotImplemented
        return serialize(self) == serialize(other)

    def __hash__(self):
        return hash(serialize(self))


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.05
    epochs: int = 1
    batch_size: int = 16
    seed: int = 0
    weight_decay: float = 0.0

    def __post_init__(self):
        # lr = 0 is allowed as the degenerate no-op case
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


@dataclass(frozen=True)
class AnomalyScore:
    rmse: float

    def __post_init__(self):
        if not self.rmse >= 0:
            raise ValueError("rmse must be non-negative")


@dataclass(frozen=True)
class Threshold:
    tau: float
    quantile: float
    calibration_count: int

    def __post_init__(self):
        if not self.tau >= 0:
            raise ValueError("tau must be non-negative")
        if not (0.0 < self.quantile < 1.0):
            raise ValueError("quantile must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {"tau": self.tau, "quantile": self.quantile, "calibration_count": self.calibration_count}

    @classmethod
    def from_dict(cls, d: dict) -> "Threshold":
        return cls(float(d["tau"]), float(d["quantile"]), int(d["calibration_count"]))


class Verdict(enum.Enum):
    NORMAL = "normal"
    ABNORMAL = "abnormal"


def init_model(layer_shapes=DEFAULT_SHAPES, seed: int = 0, io_dim: int | None = N_FEATURES) -> ModelParameters:
    """Glorot-uniform weights, zero biases, version 0.

    ``io_dim=None`` lifts the 18-in/18-out requirement for toy networks.
    """
    shapes = _check_shapes(layer_shapes, io_dim)
    rng = np.random.default_rng(seed)
    parts = []
    for i, o in shapes:
        r = math.sqrt(6.0 / (i + o))
        parts.append(rng.uniform(-r, r, size=i * o))
        parts.append(np.zeros(o))
    return ModelParameters(shapes, np.concatenate(parts), 0)


def _as_batch(xs) -> np.ndarray:
    if isinstance(xs, FeatureVector):
        xs = [xs]
    rows = []
    for x in xs:
        if isinstance(x, FeatureVector):
            if not x.normalized:
                raise UnnormalizedInput("model input must be normalized")
            rows.append(x.values)
        else:
            rows.append(np.asarray(x, dtype=np.float64))
    return np.array(rows, dtype=np.float64)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _forward_all(params: ModelParameters, X: np.ndarray, weights=None) -> list[np.ndarray]:
    acts = [X]
    layers = list(params.layers(weights))
    for k, (W, b) in enumerate(layers):
        z = acts[-1] @ W + b
        acts.append(_sigmoid(z) if k == len(layers) - 1 else np.tanh(z))
    return acts


def forward(params: ModelParameters, x) -> FeatureVector | np.ndarray:
    """Reconstruct ``x``. FeatureVectors in, FeatureVector out; raw arrays pass through."""
    X = _as_batch([x])
    if X.shape[1] != params.layer_shapes[0][0]:
        raise BadTopology("input width does not match the first layer")
    out = _forward_all(params, X)[-1][0]
    if isinstance(x, FeatureVector):
        return FeatureVector(tuple(float(v) for v in out), normalized=True)
    return out


def reconstruct(params: ModelParameters, batch) -> np.ndarray:
    return _forward_all(params, _as_batch(batch))[-1]


def _loss_arr(params, X, weights=None) -> float:
    R = _forward_all(params, X, weights)[-1]
    return float(np.mean(np.mean((X - R) ** 2, axis=1)))


def loss(params: ModelParameters, batch: Sequence) -> float:
    """Mean over the batch of the per-sample mean squared reconstruction error."""
    if len(batch) == 0:
        raise EmptyDataset("loss needs a non-empty batch")
    return _loss_arr(params, _as_batch(batch))


def _gradient_arr(params: ModelParameters, X: np.ndarray, weights=None) -> np.ndarray:
    acts = _forward_all(params, X, weights)
    layers = list(params.layers(weights))
    n, d = X.shape
    out = acts[-1]
    delta = 2.0 * (out - X) / (n * d) * out * (1.0 - out)
    grads = []
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        a_prev = acts[k]
        grads.append((a_prev.T @ delta, delta.sum(axis=0)))
        if k > 0:
            delta = (delta @ W.T) * (1.0 - a_prev ** 2)
    flat = []
    for gW, gb in reversed(grads):
        flat.append(gW.reshape(-1))
        flat.append(gb)
    return np.concatenate(flat)


def gradient(params: ModelParameters, batch: Sequence) -> np.ndarray:
    """Exact gradient of ``loss`` with respect to the flat weight vector."""
    if len(batch) == 0:
        raise EmptyDataset("gradient needs a non-empty batch")
    return _gradient_arr(params, _as_batch(batch))


def train_local(
    params: ModelParameters, data: Sequence, config: TrainingConfig
) -> tuple[ModelParameters, int, float]:
    """Mini-batch SGD over ``data``; returns (new params, sample count, final loss)."""
    if len(data) == 0:
        raise EmptyDataset("no local training data")
    X = _as_batch(data)
    rng = np.random.default_rng(config.seed)
    w = params.weights.copy()
    n = len(X)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            g = _gradient_arr(params, X[idx], w)
            if config.weight_decay:
                g = g + config.weight_decay * w
            w = w - config.learning_rate * g
    new = params.with_weights(w, params.version + 1)
    return new, n, _loss_arr(new, X)


def score(params: ModelParameters, x) -> AnomalyScore:
    X = _as_batch([x])
    R = _forward_all(params, X)[-1]
    return AnomalyScore(float(math.sqrt(np.mean((X[0] - R[0]) ** 2))))


def score_many(params: ModelParameters, xs: Sequence) -> np.ndarray:
    X = _as_batch(xs)
    R = _forward_all(params, X)[-1]
    return np.sqrt(np.mean((X - R) ** 2, axis=1))


def nearest_rank(values: Sequence[float], quantile: float) -> float:
    """k-th smallest value with k = ceil(quantile * n), computed exactly."""
    if len(values) == 0:
        raise EmptyDataset("no values to rank")
    k = math.ceil(Fraction(repr(quantile)) * len(values))
    return float(sorted(values)[max(k, 1) - 1])


def calibrate_threshold(params: ModelParameters, validation_normal: Sequence, quantile: float = 0.95) -> Threshold:
    if len(validation_normal) == 0:
        raise EmptyDataset("threshold calibration needs validation data")
    if not (0.0 < quantile < 1.0):
        raise ValueError("quantile must lie in (0, 1)")
    scores = score_many(params, validation_normal)
    return Threshold(nearest_rank(scores.tolist(), quantile), quantile, len(validation_normal))


def classify(s: AnomalyScore, t: Threshold) -> Verdict:
    return Verdict.NORMAL if s.rmse <= t.tau else Verdict.ABNORMAL


# --- canonical encoding ------------------------------------------------------

def serialize(params: ModelParameters) -> bytes:
    parts = [MAGIC, struct.pack(">QI", params.version, len(params.layer_shapes))]
    parts.extend(struct.pack(">II", i, o) for i, o in params.layer_shapes)
    parts.append(struct.pack(">Q", params.weights.size))
    parts.append(params.weights.astype(">f8").tobytes())
    return b"".join(parts)


def deserialize(data: bytes) -> ModelParameters:
    try:
        if data[:4] != MAGIC:
            raise CorruptModel("bad magic")
        pos = 4
        version, n_layers = struct.unpack_from(">QI", data, pos)
        pos += 12
        if n_layers == 0 or len(data) < pos + 8 * n_layers + 8:
            raise CorruptModel("truncated layer table")
        shapes = [struct.unpack_from(">II", data, pos + 8 * k) for k in range(n_layers)]
        pos += 8 * n_layers
        (count,) = struct.unpack_from(">Q", data, pos)
        pos += 8
        if count != param_count(shapes):
            raise CorruptModel("weight count does not match layer shapes")
        if len(data) != pos + 8 * count:
            raise CorruptModel("weight block has the wrong length")
        weights = np.frombuffer(data, dtype=">f8", count=count, offset=pos).astype(np.float64)
        return ModelParameters(tuple(shapes), weights, version)
    except CorruptModel:
        raise
    except (struct.error, ValueError, BadTopology) as exc:
        raise CorruptModel(str(exc)) from exc
