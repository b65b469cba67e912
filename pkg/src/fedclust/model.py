"""Multiclass MLP classifier trained with Adam on cross-entropy loss.

The network is fixed-shape: input -> 64 tanh units -> softmax over the class
alphabet. Parameters live in a plain dataclass of numpy arrays so they can be
averaged, checkpointed and compared bit-for-bit; all math is float64.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

HIDDEN_UNITS = 64
PARAMS_FORMAT = "fedclust-mlp-params"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class ModelParams:
    """Weights and biases of the two-layer MLP."""

    W1: np.ndarray  # (input_dim, HIDDEN_UNITS)
    b1: np.ndarray  # (HIDDEN_UNITS,)
    W2: np.ndarray  # (HIDDEN_UNITS, class_count)
    b2: np.ndarray  # (class_count,)

    @property
    def input_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def class_count(self) -> int:
        return self.W2.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy()
        )


def params_equal(a: ModelParams, b: ModelParams) -> bool:
    """Bit-for-bit equality of all four tensors."""
    return all(np.array_equal(a.tensors()[k], b.tensors()[k]) for k in a.tensors())


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 512
    max_epochs: int = 15
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


@dataclass
class EvalReport:
    """Per-client F1 plus its unweighted mean and population std."""

    per_client_f1: dict[str, float]

    @property
    def mean_f1(self) -> float:
        return float(np.mean(list(self.per_client_f1.values())))

    @property
    def std_f1(self) -> float:
        return float(np.std(list(self.per_client_f1.values())))

    def to_dict(self) -> dict:
        return {
            "per_client_f1": dict(self.per_client_f1),
            "mean_f1": self.mean_f1,
            "std_f1": self.std_f1,
        }


def init_mlp(input_dim: int, class_count: int, seed: int) -> ModelParams:
    """Fresh parameters: symmetric uniform weights scaled by 1/sqrt(fan_in),
    zero biases. Deterministic for a given seed."""
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    if class_count < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    lim1 = 1.0 / math.sqrt(input_dim)
    lim2 = 1.0 / math.sqrt(HIDDEN_UNITS)
    return ModelParams(
        W1=rng.uniform(-lim1, lim1, size=(input_dim, HIDDEN_UNITS)),
        b1=np.zeros(HIDDEN_UNITS),
        W2=rng.uniform(-lim2, lim2, size=(HIDDEN_UNITS, class_count)),
        b2=np.zeros(class_count),
    )


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Class probabilities for a batch, rows summing to 1.

    Softmax is computed with max-subtraction, so arbitrary finite logits
    cannot overflow.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[1] != params.input_dim:
        raise ValueError(
            f"batch has {features.shape[1]} features, model expects {params.input_dim}"
        )
    hidden = np.tanh(features @ params.W1 + params.b1)
    return np.exp(_log_softmax(hidden @ params.W2 + params.b2))


def mean_cross_entropy(params: ModelParams, features: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy of the batch, via log-softmax (no underflow)."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    hidden = np.tanh(features @ params.W1 + params.b1)
    log_probs = _log_softmax(hidden @ params.W2 + params.b2)
    return float(-log_probs[np.arange(len(labels)), labels].mean())


def loss_and_grads(
    params: ModelParams, features: np.ndarray, labels: np.ndarray
) -> tuple[float, ModelParams]:
    """Mean cross-entropy over the batch and its gradients w.r.t. all four
    parameter tensors, by backpropagation."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    batch = len(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= params.class_count:
        raise ValueError("label index outside the class alphabet")

    hidden = np.tanh(features @ params.W1 + params.b1)
    logits = hidden @ params.W2 + params.b2
    log_probs = _log_softmax(logits)
    loss = float(-log_probs[np.arange(batch), labels].mean())

    d_logits = np.exp(log_probs)
    d_logits[np.arange(batch), labels] -= 1.0
    d_logits /= batch

    grad_W2 = hidden.T @ d_logits
    grad_b2 = d_logits.sum(axis=0)
    d_hidden = (d_logits @ params.W2.T) * (1.0 - hidden**2)
    grad_W1 = features.T @ d_hidden
    grad_b1 = d_hidden.sum(axis=0)
    return loss, ModelParams(grad_W1, grad_b1, grad_W2, grad_b2)


class AdamState:
    """First/second moment accumulators for Adam, one pair per tensor."""

    def __init__(self, params: ModelParams):
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.tensors().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors().items()}

    def step(self, params: ModelParams, grads: ModelParams, config: TrainConfig) -> ModelParams:
        self.step_count += 1
        t = self.step_count
        lr, b1, b2, eps = config.learning_rate, config.beta1, config.beta2, config.epsilon
        updated = {}
        for key, value in params.tensors().items():
            g = grads.tensors()[key]
            self.m[key] = b1 * self.m[key] + (1.0 - b1) * g
            self.v[key] = b2 * self.v[key] + (1.0 - b2) * g**2
            m_hat = self.m[key] / (1.0 - b1**t)
            v_hat = self.v[key] / (1.0 - b2**t)
            updated[key] = value - lr * m_hat / (np.sqrt(v_hat) + eps)
        return ModelParams(**updated)


def train_local(
    params: ModelParams,
    features: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    epochs: int,
    seed: int | None = None,
    adam_state: AdamState | None = None,
) -> ModelParams:
    """Run ``epochs`` of minibatch Adam on one client's training split.

    Each epoch reshuffles with the call's RNG stream (``seed`` overrides
    ``config.seed``, which lets an orchestrator derive per-round streams).
    Adam moments start from zero unless an ``adam_state`` is passed in to be
    carried across calls. ``epochs=0`` returns the parameters unchanged.
    """
    if epochs > config.max_epochs:
        raise ValueError(f"epochs={epochs} exceeds the configured cap {config.max_epochs}")
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n == 0:
        raise ValueError("empty training split")
    rng = np.random.default_rng(
        np.random.SeedSequence(config.seed if seed is None else seed)
    )
    state = AdamState(params) if adam_state is None else adam_state
    current = params
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            _, grads = loss_and_grads(current, features[batch], labels[batch])
            current = state.step(current, grads, config)
    return current.copy() if current is params else current


def evaluate_f1(
    params: ModelParams,
    features: np.ndarray,
    labels: np.ndarray,
    averaging: str = "macro",
) -> float:
    """F1 over the classes present in the split, from the argmax confusion
    matrix. ``macro`` averages classes equally; ``weighted`` weights them by
    support. Classes with no true samples in the split are left out, so a
    device that never sees an attack class is not charged for it.
    """
    if averaging not in ("macro", "weighted"):
        raise ValueError(f"unknown averaging mode {averaging!r}")
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ValueError("empty evaluation split")
    predicted = forward(params, features).argmax(axis=1)
    class_count = params.class_count
    f1s, supports = [], []
    for cls in range(class_count):
        support = int((labels == cls).sum())
        if support == 0:
            continue
        tp = int(((predicted == cls) & (labels == cls)).sum())
        fp = int(((predicted == cls) & (labels != cls)).sum())
        fn = support - tp
        f1s.append(2.0 * tp / (2.0 * tp + fp + fn))
        supports.append(support)
    if averaging == "macro":
        return float(np.mean(f1s))
    return float(np.average(f1s, weights=supports))


def save_params(params: ModelParams, path: str | Path) -> None:
    """JSON tensor dump with explicit shapes and a version tag.

    Plain-text floats round-trip exactly, so identical parameters always
    serialize to identical bytes.
    """
    payload = {
        "format": PARAMS_FORMAT,
        "version": PARAMS_VERSION,
        "shapes": {k: list(v.shape) for k, v in params.tensors().items()},
        "tensors": {k: v.ravel().tolist() for k, v in params.tensors().items()},
    }
    Path(path).write_text(json.dumps(payload))


def load_params(path: str | Path) -> ModelParams:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != PARAMS_FORMAT:
        raise ValueError(f"{path}: not a parameter dump")
    if payload.get("version") != PARAMS_VERSION:
        raise ValueError(f"{path}: unsupported version {payload.get('version')!r}")
    tensors = {
        k: np.array(payload["tensors"][k], dtype=np.float64).reshape(payload["shapes"][k])
        for k in ("W1", "b1", "W2", "b2")
    }
    return ModelParams(**tensors)
