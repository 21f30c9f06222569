"""
Learning Service for TransNN Lab
Feedforward TransNN with per-link activation levels, analytic backpropagation,
mini-batch training and the universal-approximation harness
"""

import copy
import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Collection, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from pydantic import ValidationError as PydanticValidationError
from scipy.special import logsumexp
from tqdm import tqdm

from config.app_config import AppConfig
from services.activation_service import ActivationKind, activation_functions
from services.dynamics_service import general_layer
from services.exceptions import DomainError, NumericalError, ValidationError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class OutputHead(str, Enum):
    IDENTITY = "identity"
    PROB = "prob"
    LOG_SOFTMAX = "logsoftmax"


class LossKind(str, Enum):
    MSE = "mse"
    NLL = "nll"


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


TRAINABLE_GROUPS = frozenset({"a", "w", "eta", "bias"})


# --- model ---

@dataclass
class LayeredTransNN:
    """
    Layer k maps s (n_k) to s' (n_{k+1}) by s'_i = Σ_j a_ij F(w_ij, s_j) + b_i.

    w[k] is either (n_{k+1}, n_k) or a source-shared (1, n_k) row. With
    `affine_input` the first layer is the plain affine map a[0]·x + b[0]
    (the η-layer of the single-hidden-layer approximator) and w[0] is unused.
    """
    layer_sizes: List[int]
    a: List[np.ndarray]
    w: List[np.ndarray]
    bias: List[np.ndarray]
    activation: ActivationKind = ActivationKind.TLOG_SIGMOID
    head: OutputHead = OutputHead.IDENTITY
    affine_input: bool = False
    w_trainable: Optional[List[bool]] = None
    seed: Optional[int] = None

    def __post_init__(self):
        self.activation = ActivationKind(self.activation)
        self.head = OutputHead(self.head)
        depth = len(self.layer_sizes) - 1
        if depth < 1:
            raise ValidationError("need at least an input and an output layer", "layer_sizes")
        if not (len(self.a) == len(self.w) == len(self.bias) == depth):
            raise ValidationError(f"expected {depth} layers of parameters", "layers")
        self.a = [np.array(m, dtype=float) for m in self.a]
        self.w = [np.array(m, dtype=float) for m in self.w]
        self.bias = [np.array(b, dtype=float) for b in self.bias]
        for k in range(depth):
            n_in, n_out = self.layer_sizes[k], self.layer_sizes[k + 1]
            if self.a[k].shape != (n_out, n_in):
                raise ValidationError(f"shape {self.a[k].shape}, expected {(n_out, n_in)}", f"a[{k}]")
            if self.w[k].shape not in ((n_out, n_in), (1, n_in)):
                raise ValidationError(f"shape {self.w[k].shape}, expected {(n_out, n_in)} or {(1, n_in)}", f"w[{k}]")
            if self.bias[k].shape != (n_out,):
                raise ValidationError(f"shape {self.bias[k].shape}, expected {(n_out,)}", f"bias[{k}]")
            bad = np.argwhere(np.isnan(self.w[k]) | (self.w[k] < 0.0) | (self.w[k] > 1.0))
            if bad.size:
                i, j = (int(v) for v in bad[0])
                raise ValidationError(f"activation level {self.w[k][i, j]} outside [0, 1]", f"w[{k}][{i}][{j}]")
        if self.w_trainable is None:
            self.w_trainable = [not (k == 0 and self.affine_input) for k in range(depth)]

    @property
    def depth(self) -> int:
        return len(self.layer_sizes) - 1

    def copy(self) -> "LayeredTransNN":
        return copy.deepcopy(self)

    def to_dict(self) -> Dict[str, Any]:
        def pack(arrays: List[np.ndarray]) -> List[Dict[str, Any]]:
            return [{"shape": list(m.shape), "data": m.ravel().tolist()} for m in arrays]

        return {
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation.value,
            "head": self.head.value,
            "affine_input": self.affine_input,
            "w_trainable": list(self.w_trainable),
            "seed": self.seed,
            "a": pack(self.a),
            "w": pack(self.w),
            "bias": pack(self.bias),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LayeredTransNN":
        def unpack(entries: List[Dict[str, Any]]) -> List[np.ndarray]:
            return [np.array(e["data"], dtype=float).reshape(e["shape"]) for e in entries]

        try:
            return cls(
                layer_sizes=list(data["layer_sizes"]),
                a=unpack(data["a"]),
                w=unpack(data["w"]),
                bias=unpack(data["bias"]),
                activation=ActivationKind(data["activation"]),
                head=OutputHead(data["head"]),
                affine_input=bool(data.get("affine_input", False)),
                w_trainable=data.get("w_trainable"),
                seed=data.get("seed"),
            )
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ValidationError):
                raise
            raise ValidationError(f"malformed checkpoint: {e}", "checkpoint") from e


def build_model(layer_sizes: Sequence[int], activation: Union[ActivationKind, str] = ActivationKind.TLOG_SIGMOID,
                head: Union[OutputHead, str] = OutputHead.IDENTITY, seed: int = 0,
                w_init: float = 0.5, bias_init: float = 1.0) -> LayeredTransNN:
    """
    Fresh layered model: a ~ U(±1/√fan_in), w = w_init everywhere, bias = bias_init.

    Args:
        layer_sizes: widths from input to output, at least two entries
        activation: activation kind or alias
        head: output head applied after the last layer
        seed: seed for the inter-layer weights
        w_init: initial activation level in [0, 1]
        bias_init: initial bias of every layer

    Returns:
        The validated LayeredTransNN
    """
    if not (0.0 <= w_init <= 1.0):
        raise DomainError(f"w_init={w_init} outside [0, 1]")
    rng = np.random.default_rng(seed)
    sizes = [int(n) for n in layer_sizes]
    a, w, bias = [], [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        scale = 1.0 / math.sqrt(n_in)
        a.append(rng.uniform(-scale, scale, size=(n_out, n_in)))
        w.append(np.full((n_out, n_in), w_init))
        bias.append(np.full(n_out, bias_init))
    activation = ActivationKind.parse(activation) if isinstance(activation, str) else activation
    return LayeredTransNN(layer_sizes=sizes, a=a, w=w, bias=bias, activation=activation,
                          head=OutputHead(head), seed=seed)


def save_checkpoint(model: LayeredTransNN, path: PathLike) -> Path:
    """Writes the model as JSON; load_checkpoint reads it back exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as file:
        json.dump(model.to_dict(), file, indent=2)
    return path


def load_checkpoint(path: PathLike) -> LayeredTransNN:
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as file:
            return LayeredTransNN.from_dict(json.load(file))
    except json.JSONDecodeError as e:
        raise ValidationError(f"invalid JSON: {e.msg}", f"{path.name}:line {e.lineno}") from e


# --- forward / backward ---

@dataclass(frozen=True)
class Tape:
    inputs: List[np.ndarray]
    pre_head: np.ndarray
    output: np.ndarray


@dataclass
class Gradients:
    a: List[np.ndarray]
    w: List[np.ndarray]
    bias: List[np.ndarray]

    @classmethod
    def zeros_like(cls, model: LayeredTransNN) -> "Gradients":
        return cls([np.zeros_like(m) for m in model.a], [np.zeros_like(m) for m in model.w],
                   [np.zeros_like(b) for b in model.bias])

    def add_(self, other: "Gradients") -> None:
        for mine, theirs in ((self.a, other.a), (self.w, other.w), (self.bias, other.bias)):
            for k in range(len(mine)):
                mine[k] += theirs[k]


def _apply_head(head: OutputHead, s: np.ndarray) -> np.ndarray:
    if head is OutputHead.PROB:
        return -np.expm1(-s)
    if head is OutputHead.LOG_SOFTMAX:
        return s - logsumexp(s, axis=1, keepdims=True)
    return s


def forward(model: LayeredTransNN, x: Any) -> Tuple[np.ndarray, Tape]:
    """
    Apply the layered recursion and the output head.

    Args:
        model: the network
        x: one input vector or a (batch, layer_sizes[0]) matrix

    Returns:
        (output, tape); the output is 1-D for a single input vector
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    s = np.atleast_2d(x)
    if s.shape[1] != model.layer_sizes[0]:
        raise DomainError(f"input has {s.shape[1]} features, model expects {model.layer_sizes[0]}")
    inputs = []
    for k in range(model.depth):
        inputs.append(s)
        if k == 0 and model.affine_input:
            s = s @ model.a[0].T + model.bias[0]
        else:
            w = np.broadcast_to(model.w[k], model.a[k].shape)
            s = general_layer(model.a[k], w, model.bias[k], model.activation, s)
    output = _apply_head(model.head, s)
    tape = Tape(inputs=inputs, pre_head=s, output=output)
    return (output[0] if single else output), tape


def backward(model: LayeredTransNN, tape: Tape, output_grad: Any) -> Gradients:
    """
    Reverse-mode gradients of <output_grad, output> with respect to every a, w and bias.

    Chain factors come from the closed-form ∂_w and ∂_x of the activation;
    Ψ₊ contributes subgradient 0 at its kink.
    """
    g = np.atleast_2d(np.asarray(output_grad, dtype=float))
    s = tape.pre_head
    if model.head is OutputHead.PROB:
        g = g * np.exp(-s)
    elif model.head is OutputHead.LOG_SOFTMAX:
        softmax = np.exp(tape.output)
        g = g - softmax * g.sum(axis=1, keepdims=True)

    functions = activation_functions(model.activation)
    grads = Gradients.zeros_like(model)
    for k in reversed(range(model.depth)):
        s_in = tape.inputs[k]
        a = model.a[k]
        if k == 0 and model.affine_input:
            grads.a[k] = g.T @ s_in
            grads.bias[k] = g.sum(axis=0)
            g = g @ a
            continue
        w = np.broadcast_to(model.w[k], a.shape)
        stacked = s_in[:, None, :]
        values = np.asarray(functions.value(w, stacked))
        d_dw = np.asarray(functions.d_dw(w, stacked))
        d_dx = np.asarray(functions.d_dx(w, stacked))
        grads.a[k] = np.einsum('bi,bij->ij', g, values)
        grad_w = np.einsum('bi,bij->ij', g, a * d_dw)
        grads.w[k] = grad_w.sum(axis=0, keepdims=True) if model.w[k].shape[0] == 1 else grad_w
        grads.bias[k] = g.sum(axis=0)
        g = np.einsum('bi,bij->bj', g, a * d_dx)
    return grads


# --- data ---

@dataclass(frozen=True)
class Dataset:
    """inputs (D, d); targets (D, m) for regression or integer labels (D,) for classification."""
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        targets = np.asarray(self.targets)
        if targets.ndim == 1 and not np.issubdtype(targets.dtype, np.integer):
            targets = targets.astype(float)[:, None]
        if inputs.shape[0] != targets.shape[0]:
            raise ValidationError(f"{inputs.shape[0]} inputs but {targets.shape[0]} targets", "dataset")
        if not np.all(np.isfinite(inputs)) or not np.all(np.isfinite(targets)):
            raise ValidationError("dataset contains non-finite entries", "dataset")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    @property
    def is_classification(self) -> bool:
        return self.targets.ndim == 1

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.inputs[idx], self.targets[idx])


def make_two_clusters(n_per_class: int = 100, seed: int = 0, separation: float = 2.0,
                      std: float = 0.7) -> Dataset:
    """Two Gaussian clusters centred at (-separation, -separation) and (+separation, +separation)."""
    rng = np.random.default_rng(seed)
    negative = rng.normal(-separation, std, size=(n_per_class, 2))
    positive = rng.normal(separation, std, size=(n_per_class, 2))
    inputs = np.vstack([negative, positive])
    labels = np.concatenate([np.zeros(n_per_class, dtype=np.int64), np.ones(n_per_class, dtype=np.int64)])
    return Dataset(inputs, labels)


BUILTIN_DATASETS: Dict[str, Callable[[int], Dataset]] = {
    "two-clusters": lambda seed: make_two_clusters(seed=seed),
}


def load_dataset(source: Union[str, Path], seed: int = 0) -> Dataset:
    """
    Built-in name or a CSV file whose header names input columns x*, target
    columns y*, or a single integer `label` column.
    """
    if str(source) in BUILTIN_DATASETS:
        return BUILTIN_DATASETS[str(source)](seed)
    path = Path(source)
    if not path.is_file():
        raise ValidationError("dataset not found", str(path))
    with open(path, 'r', encoding='utf-8', newline='') as file:
        reader = csv.reader(file)
        header = [h.strip() for h in next(reader, [])]
        x_cols = [i for i, h in enumerate(header) if h.startswith("x")]
        y_cols = [i for i, h in enumerate(header) if h.startswith("y")]
        label_col = header.index("label") if "label" in header else None
        if not x_cols or (label_col is None and not y_cols):
            raise ValidationError("header needs x* columns and y* or label columns", f"{path.name}:line 1")
        inputs, targets = [], []
        for line_no, row in enumerate(reader, start=2):
            try:
                inputs.append([float(row[i]) for i in x_cols])
                if label_col is not None:
                    targets.append(int(row[label_col]))
                else:
                    targets.append([float(row[i]) for i in y_cols])
            except (IndexError, ValueError) as e:
                raise ValidationError(f"malformed row: {e}", f"{path.name}:line {line_no}") from e
    dtype = np.int64 if label_col is not None else float
    return Dataset(np.array(inputs), np.array(targets, dtype=dtype))


# --- training ---

class TrainConfig(BaseModel):
    """Training settings; defaults follow AppConfig."""
    model_config = ConfigDict(extra="forbid")

    layer_sizes: List[int] = Field(default_factory=lambda: [2, 16, 2])
    activation: str = ActivationKind.TLOG_SIGMOID.value
    head: OutputHead = OutputHead.LOG_SOFTMAX
    loss: LossKind = LossKind.NLL
    optimizer: OptimizerKind = OptimizerKind.ADAM
    learning_rate: float = Field(default_factory=lambda: AppConfig.DEFAULT_LEARNING_RATE, ge=0.0)
    decay_rate: float = Field(default=1.0, gt=0.0, le=1.0)
    decay_every: int = Field(default=0, ge=0)
    regularizer: float = Field(default=0.0, ge=0.0)
    epochs: int = Field(default_factory=lambda: AppConfig.DEFAULT_EPOCHS, ge=1)
    batch_size: int = Field(default_factory=lambda: AppConfig.DEFAULT_BATCH_SIZE, ge=1)
    seed: int = Field(default_factory=lambda: AppConfig.DEFAULT_SEED)
    trainable: List[str] = Field(default_factory=lambda: sorted(TRAINABLE_GROUPS))
    validation_fraction: float = Field(default=0.0, ge=0.0, lt=1.0)
    workers: int = Field(default_factory=lambda: AppConfig.GRADIENT_WORKERS, ge=1)
    w_init: float = Field(default=0.5, ge=0.0, le=1.0)
    bias_init: float = 1.0
    dataset: str = "two-clusters"
    progress: bool = False

    @field_validator("trainable")
    @classmethod
    def _known_groups(cls, value: List[str]) -> List[str]:
        unknown = set(value) - TRAINABLE_GROUPS
        if unknown:
            raise ValueError(
                f"unknown trainable groups {sorted(unknown)}; expected a subset of {sorted(TRAINABLE_GROUPS)}"
            )
        return sorted(set(value))

    @field_validator("activation")
    @classmethod
    def _known_activation(cls, value: str) -> str:
        return ActivationKind.parse(value).value


def load_train_config(path: PathLike, **overrides: Any) -> TrainConfig:
    """Reads a JSON TrainConfig; non-None keyword overrides win over the file."""
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as file:
            data = json.load(file)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return TrainConfig.model_validate(data)
    except FileNotFoundError as e:
        raise ValidationError("file not found", str(path)) from e
    except json.JSONDecodeError as e:
        raise ValidationError(f"invalid JSON: {e.msg}", f"{path.name}:line {e.lineno}") from e
    except PydanticValidationError as e:
        first = e.errors()[0]
        raise ValidationError(first.get("msg", "invalid config"), ".".join(str(p) for p in first["loc"])) from e


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


def _trainable_slots(model: LayeredTransNN, trainable: Collection[str]) -> List[Tuple[str, int]]:
    slots: List[Tuple[str, int]] = []
    for k in range(model.depth):
        is_eta = k == 0 and (model.depth > 1 or model.affine_input)
        if ("eta" if is_eta else "a") in trainable:
            slots.append(("a", k))
        if "w" in trainable and model.w_trainable[k]:
            slots.append(("w", k))
        if "bias" in trainable:
            slots.append(("bias", k))
    return slots


def _regularized_layers(model: LayeredTransNN, trainable: Collection[str]) -> List[int]:
    return [k for group, k in _trainable_slots(model, trainable) if group == "a"]


def _sample_loss(model: LayeredTransNN, output: np.ndarray, targets: np.ndarray, loss: LossKind,
                 total: int) -> Tuple[float, np.ndarray]:
    """Summed per-sample loss and its gradient, scaled for a mean over `total` samples."""
    if loss is LossKind.NLL:
        if model.head is not OutputHead.LOG_SOFTMAX:
            raise ValidationError("negative log-likelihood needs the logsoftmax head", "head")
        rows = np.arange(output.shape[0])
        grad = np.zeros_like(output)
        grad[rows, targets] = -1.0 / total
        return float(-output[rows, targets].sum()), grad
    residual = output - targets
    m = output.shape[1]
    return float((residual ** 2).sum() / m), 2.0 * residual / (m * total)


def _shard_gradient(model: LayeredTransNN, data: Dataset, loss: LossKind, total: int) -> Tuple[float, Gradients]:
    output, tape = forward(model, data.inputs)
    value, output_grad = _sample_loss(model, output, data.targets, loss, total)
    return value, backward(model, tape, output_grad)


def objective_and_gradients(model: LayeredTransNN, data: Dataset, loss: LossKind, regularizer: float = 0.0,
                            trainable: Optional[Collection[str]] = None, workers: int = 1) -> Tuple[float, Gradients]:
    """
    Mean loss plus regularizer·Σ||a||² over the trainable inter-layer weights, with gradients.

    Batches are split into contiguous shards evaluated in parallel and summed in
    shard order, so a given worker count is bitwise reproducible.

    Args:
        model: model to differentiate
        data: batch of inputs and targets
        loss: loss kind
        regularizer: weight of the squared-norm penalty
        trainable: groups whose inter-layer weights are penalised (default all)
        workers: number of shards evaluated in parallel

    Returns:
        (objective value, Gradients for every parameter group)
    """
    trainable = TRAINABLE_GROUPS if trainable is None else trainable
    total = len(data)
    shards = [idx for idx in np.array_split(np.arange(total), min(workers, total)) if idx.size]
    if len(shards) > 1:
        with ThreadPoolExecutor(max_workers=len(shards)) as pool:
            parts = list(pool.map(lambda idx: _shard_gradient(model, data.subset(idx), loss, total), shards))
    else:
        parts = [_shard_gradient(model, data, loss, total)]
    value, grads = parts[0]
    for part_value, part_grads in parts[1:]:
        value += part_value
        grads.add_(part_grads)
    value /= total
    if regularizer > 0.0:
        for k in _regularized_layers(model, trainable):
            value += regularizer * float(np.sum(model.a[k] ** 2))
            grads.a[k] = grads.a[k] + 2.0 * regularizer * model.a[k]
    return value, grads


def evaluate_loss(model: LayeredTransNN, data: Dataset, loss: LossKind) -> float:
    if len(data) == 0:
        return float("nan")
    output, _ = forward(model, data.inputs)
    value, _ = _sample_loss(model, output, data.targets, loss, len(data))
    return value / len(data)


def accuracy(model: LayeredTransNN, data: Dataset) -> float:
    output, _ = forward(model, data.inputs)
    return float(np.mean(np.argmax(output, axis=1) == data.targets))


class Optimizer:
    """Plain gradient descent or Adam over (group, layer) parameter slots."""

    def __init__(self, kind: OptimizerKind, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.kind = OptimizerKind(kind)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: Dict[Tuple[str, int], np.ndarray] = {}
        self.v: Dict[Tuple[str, int], np.ndarray] = {}

    def step(self, model: LayeredTransNN, grads: Gradients, slots: List[Tuple[str, int]], lr: float) -> None:
        """Updates the slotted parameters of `model` in place."""
        self.t += 1
        for group, k in slots:
            param = getattr(model, group)[k]
            grad = getattr(grads, group)[k]
            if self.kind is OptimizerKind.SGD:
                param -= lr * grad
                continue
            m = self.m.setdefault((group, k), np.zeros_like(param))
            v = self.v.setdefault((group, k), np.zeros_like(param))
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad ** 2
            m_hat = m / (1.0 - self.beta1 ** self.t)
            v_hat = v / (1.0 - self.beta2 ** self.t)
            param -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def learning_rate_at(cfg: TrainConfig, epoch: int) -> float:
    """Step decay: lr·decay_rate^⌊(epoch-1)/decay_every⌋ for 1-based epochs."""
    if cfg.decay_every == 0:
        return cfg.learning_rate
    return cfg.learning_rate * cfg.decay_rate ** ((epoch - 1) // cfg.decay_every)


def train(model: LayeredTransNN, data: Dataset, cfg: TrainConfig) -> Tuple[LayeredTransNN, List[EpochRecord]]:
    """
    Mini-batch training of a copy of `model`.

    w is projected back to [0, 1] after every update. The loss history is
    recorded as-is (it need not decrease).

    Args:
        model: starting point; it is copied, never modified
        data: training set; cfg.validation_fraction of it is held out
        cfg: optimizer, schedule, loss and trainable groups

    Returns:
        (trained model, one EpochRecord per epoch)

    Raises:
        NumericalError: a batch loss is NaN; `where` carries epoch and batch
    """
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(data))
    n_val = int(round(cfg.validation_fraction * len(data)))
    train_set = data.subset(np.sort(order[n_val:])) if n_val else data
    val_set = data.subset(np.sort(order[:n_val])) if n_val else None
    slots = _trainable_slots(model, cfg.trainable)
    optimizer = Optimizer(cfg.optimizer)
    history: List[EpochRecord] = []

    for epoch in tqdm(range(1, cfg.epochs + 1), desc="train", disable=not cfg.progress):
        lr = learning_rate_at(cfg, epoch)
        permutation = rng.permutation(len(train_set))
        for batch, start in enumerate(range(0, len(train_set), cfg.batch_size)):
            batch_data = train_set.subset(permutation[start:start + cfg.batch_size])
            value, grads = objective_and_gradients(model, batch_data, cfg.loss, cfg.regularizer,
                                                   cfg.trainable, cfg.workers)
            if math.isnan(value):
                raise NumericalError("NaN loss", {"epoch": epoch, "batch": batch})
            optimizer.step(model, grads, slots, lr)
            for k in range(model.depth):
                np.clip(model.w[k], 0.0, 1.0, out=model.w[k])
        train_loss = evaluate_loss(model, train_set, cfg.loss)
        if cfg.regularizer > 0.0:
            train_loss += cfg.regularizer * sum(float(np.sum(model.a[k] ** 2))
                                                for k in _regularized_layers(model, cfg.trainable))
        val_loss = evaluate_loss(model, val_set, cfg.loss) if val_set is not None else float("nan")
        history.append(EpochRecord(epoch=epoch, train_loss=train_loss, val_loss=val_loss))
        logger.debug(f"epoch {epoch}: train {train_loss:.6g}, val {val_loss:.6g}")

    logger.info(f"Trained {cfg.epochs} epochs; final train loss {history[-1].train_loss:.6g}")
    return model, history


def save_history(history: List[EpochRecord], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as file:
        writer = csv.writer(file)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for record in history:
            writer.writerow([record.epoch, repr(record.train_loss), repr(record.val_loss)])
    return path


# --- activation comparison ---

COMPARISON_VARIANTS: Dict[str, Tuple[ActivationKind, Optional[float]]] = {
    "TPsi": (ActivationKind.TLOG_SIGMOID, None),
    "TPhi": (ActivationKind.TSOFT_AFFINE, None),
    "fixed-Psi": (ActivationKind.TLOG_SIGMOID, 0.5),
    "fixed-Phi": (ActivationKind.TSOFT_AFFINE, 0.5),
    "relu-equivalent": (ActivationKind.TLOG_SIGMOID_PLUS, 1.0),
}


@dataclass
class ComparisonResult:
    histories: Dict[str, List[EpochRecord]]
    accuracies: Dict[str, float]
    models: Dict[str, LayeredTransNN] = field(default_factory=dict)

    def save(self, path: PathLike) -> Path:
        """One training-loss column per variant."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        names = list(self.histories)
        epochs = len(next(iter(self.histories.values()))) if names else 0
        with open(path, 'w', encoding='utf-8', newline='') as file:
            writer = csv.writer(file)
            writer.writerow(["epoch"] + names)
            for e in range(epochs):
                writer.writerow([e + 1] + [repr(self.histories[name][e].train_loss) for name in names])
        return path


def compare_activations(data: Dataset, cfg: TrainConfig) -> ComparisonResult:
    """
    Trains one model per variant: trainable-w TPsi/TPhi, w frozen at 0.5, and Ψ₊ frozen at w = 1.

    Args:
        data: shared training set
        cfg: base configuration; each variant overrides activation, w_init and trainable

    Returns:
        ComparisonResult with the loss history, accuracy and trained model per variant
    """
    histories, accuracies, models = {}, {}, {}
    for name, (kind, fixed_w) in COMPARISON_VARIANTS.items():
        w_init = cfg.w_init if fixed_w is None else fixed_w
        trainable = list(cfg.trainable) if fixed_w is None else sorted(set(cfg.trainable) - {"w"})
        variant_cfg = cfg.model_copy(update={"activation": kind.value, "trainable": trainable, "w_init": w_init})
        model = build_model(cfg.layer_sizes, kind, cfg.head, seed=cfg.seed, w_init=w_init, bias_init=cfg.bias_init)
        trained, history = train(model, data, variant_cfg)
        histories[name] = history
        models[name] = trained
        accuracies[name] = accuracy(trained, data) if data.is_classification else float("nan")
        logger.info(f"{name}: final loss {history[-1].train_loss:.6g}, accuracy {accuracies[name]:.4f}")
    return ComparisonResult(histories=histories, accuracies=accuracies, models=models)


# --- universal approximation ---

@dataclass(frozen=True)
class Target:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    lows: Tuple[float, ...]
    highs: Tuple[float, ...]
    outputs: int = 1

    @property
    def dim(self) -> int:
        return len(self.lows)

    def grid(self, points: int) -> np.ndarray:
        """Dense tensor grid over the box, `points` per axis."""
        axes = [np.linspace(lo, hi, points) for lo, hi in zip(self.lows, self.highs)]
        mesh = np.meshgrid(*axes, indexing='ij')
        return np.stack([m.ravel() for m in mesh], axis=1)

    def values(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(x), dtype=float).reshape(x.shape[0], self.outputs)


def _peaks(x: np.ndarray) -> np.ndarray:
    u, v = x[:, 0], x[:, 1]
    return (3.0 * (1.0 - u) ** 2 * np.exp(-u ** 2 - (v + 1.0) ** 2)
            - 10.0 * (u / 5.0 - u ** 3 - v ** 5) * np.exp(-u ** 2 - v ** 2)
            - np.exp(-(u + 1.0) ** 2 - v ** 2) / 3.0)


def _smooth_sawtooth(x: np.ndarray) -> np.ndarray:
    t = x[:, 0]
    return (2.0 / np.pi) * sum((-1) ** (k + 1) * np.sin(k * t) / k for k in range(1, 6))


TARGETS: Dict[str, Target] = {
    "sin": Target("sin", lambda x: np.sin(x[:, 0]), (-np.pi,), (np.pi,)),
    "gaussian-bump": Target("gaussian-bump", lambda x: np.exp(-2.0 * x[:, 0] ** 2), (-3.0,), (3.0,)),
    "sawtooth-smooth": Target("sawtooth-smooth", _smooth_sawtooth, (-np.pi,), (np.pi,)),
    "2d-peaks": Target("2d-peaks", _peaks, (-3.0, -3.0), (3.0, 3.0)),
    "sin-cos": Target("sin-cos", lambda x: np.stack([np.sin(x[:, 0]), np.cos(x[:, 0])], axis=1),
                      (-np.pi,), (np.pi,), outputs=2),
}


def get_target(name: str) -> Target:
    if name not in TARGETS:
        raise ValidationError(f"unknown target '{name}'; choose from {sorted(TARGETS)}", "target")
    return TARGETS[name]


class ApproxConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    b: float = 1.0
    activation: str = ActivationKind.TLOG_SIGMOID.value
    seed: int = Field(default_factory=lambda: AppConfig.DEFAULT_SEED)
    grid_points: Optional[int] = Field(default=None, ge=2)
    eta_scale: float = Field(default=2.0, gt=0.0)
    w_low: float = Field(default=0.05, ge=0.0, le=1.0)
    w_high: float = Field(default=0.95, ge=0.0, le=1.0)
    refine_epochs: int = Field(default=0, ge=0)
    refine_learning_rate: float = Field(default=1e-3, gt=0.0)
    rational: bool = True
    max_denominator: int = Field(default_factory=lambda: AppConfig.RATIONAL_MAX_DENOMINATOR, ge=1)

    @field_validator("activation")
    @classmethod
    def _known_activation(cls, value: str) -> str:
        return ActivationKind.parse(value).value


@dataclass(frozen=True)
class ApproxResult:
    target: str
    width: int
    model: LayeredTransNN
    sup_error: float
    rational_sup_error: float
    rounding_bound: float
    refined: bool

    @property
    def rounding_change(self) -> float:
        return abs(self.rational_sup_error - self.sup_error)


def build_approximator(eta: np.ndarray, w: np.ndarray, a: np.ndarray, b: float,
                       activation: Union[ActivationKind, str] = ActivationKind.TLOG_SIGMOID) -> LayeredTransNN:
    """
    y(x) = Σ_i a_i F(w_i, η_iᵀx + b) as a two-layer model: an affine η-layer with
    the fixed shared bias b, then a readout whose activation levels are shared
    across outputs.

    Args:
        eta: (n, d) input weights
        w: (n,) activation levels
        a: (m, n) readout weights
        b: fixed nonzero bias
    """
    kind = ActivationKind.parse(activation) if isinstance(activation, str) else ActivationKind(activation)
    if b == 0.0:
        raise DomainError("the approximator needs a nonzero bias b")
    if kind is ActivationKind.TLOG_SIGMOID_PLUS and b <= 0.0:
        raise DomainError("TLogSigmoidPlus approximators need a positive bias b")
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    n, d = eta.shape
    m = a.shape[0]
    return LayeredTransNN(
        layer_sizes=[d, n, m],
        a=[eta, a],
        w=[np.ones((n, d)), np.asarray(w, dtype=float).reshape(1, n)],
        bias=[np.full(n, float(b)), np.zeros(m)],
        activation=kind,
        head=OutputHead.IDENTITY,
        affine_input=True,
        w_trainable=[False, True],
    )


def _hidden_features(model: LayeredTransNN, x: np.ndarray) -> np.ndarray:
    z = x @ model.a[0].T + model.bias[0]
    return np.asarray(activation_functions(model.activation).value(model.w[1][0], z))


def _sup_error(model: LayeredTransNN, x: np.ndarray, y: np.ndarray) -> float:
    output, _ = forward(model, x)
    return float(np.max(np.abs(output - y)))


def _draw_features(rng: np.random.Generator, width: int, d: int, cfg: ApproxConfig,
                   span: float) -> Tuple[np.ndarray, np.ndarray]:
    # drawn unit by unit so a wider model extends the narrower one with the same seed
    eta = np.zeros((width, d))
    w = np.zeros(width)
    for i in range(width):
        direction = rng.normal(size=d)
        scale = rng.uniform(0.0, cfg.eta_scale) / span
        level = rng.uniform(cfg.w_low, cfg.w_high)
        if i > 0:
            eta[i] = scale * direction / np.linalg.norm(direction)
        w[i] = level
    return eta, w


def _round_rational(a: np.ndarray, max_denominator: int) -> np.ndarray:
    return np.vectorize(lambda v: float(Fraction(float(v)).limit_denominator(max_denominator)))(a)


def fit_universal(target: Union[Target, str], width: int, cfg: Optional[ApproxConfig] = None) -> ApproxResult:
    """
    Fit y(x) = Σ a_i F(w_i, η_iᵀx + b) to `target` on its box.

    Random features (w_i, η_i) are drawn with the first unit held at η = 0, the
    readout a is solved by least squares on a dense grid, and an optional Adam
    refinement is kept only if it lowers the sup error. The rational check
    rounds a to denominators <= max_denominator and re-measures the sup error.

    Returns:
        ApproxResult with the sup error on the grid and the rounding bound Σ|Δa|·max|F|
    """
    cfg = cfg or ApproxConfig()
    target = get_target(target) if isinstance(target, str) else target
    if width < 1:
        raise DomainError(f"width must be at least 1, got {width}")
    points = cfg.grid_points or (2001 if target.dim == 1 else 61)
    x = target.grid(points)
    y = target.values(x)
    span = max(max(abs(lo), abs(hi)) for lo, hi in zip(target.lows, target.highs)) / math.pi

    rng = np.random.default_rng(cfg.seed)
    eta, w = _draw_features(rng, width, target.dim, cfg, span)
    model = build_approximator(eta, w, np.zeros((target.outputs, width)), cfg.b, cfg.activation)
    features = _hidden_features(model, x)
    solution, *_ = np.linalg.lstsq(features, y, rcond=None)
    model.a[1] = solution.T.copy()
    sup_error = _sup_error(model, x, y)

    refined = False
    if cfg.refine_epochs:
        refine_cfg = TrainConfig(layer_sizes=model.layer_sizes, activation=model.activation.value,
                                 head=OutputHead.IDENTITY, loss=LossKind.MSE, optimizer=OptimizerKind.ADAM,
                                 learning_rate=cfg.refine_learning_rate, epochs=cfg.refine_epochs,
                                 batch_size=len(x), seed=cfg.seed, trainable=["a", "eta", "w"])
        candidate, _ = train(model, Dataset(x, y), refine_cfg)
        candidate_error = _sup_error(candidate, x, y)
        if candidate_error < sup_error:
            model, sup_error, refined = candidate, candidate_error, True
        else:
            logger.warning(f"Refinement raised the sup error to {candidate_error:.3e}; keeping the lstsq fit")

    rational_error, bound = sup_error, 0.0
    if cfg.rational:
        rounded = model.copy()
        rounded.a[1] = _round_rational(model.a[1], cfg.max_denominator)
        rational_error = _sup_error(rounded, x, y)
        feature_max = np.max(np.abs(_hidden_features(model, x)), axis=0)
        bound = float(np.max(np.abs(rounded.a[1] - model.a[1]) @ feature_max))
    logger.info(f"{target.name} width {width}: sup error {sup_error:.3e} (rational {rational_error:.3e})")
    return ApproxResult(target=target.name, width=width, model=model, sup_error=sup_error,
                        rational_sup_error=rational_error, rounding_bound=bound, refined=refined)


def approximation_ladder(target: Union[Target, str], widths: Sequence[int],
                         cfg: Optional[ApproxConfig] = None) -> List[ApproxResult]:
    """One fit_universal result per width, in the given order."""
    return [fit_universal(target, int(width), cfg) for width in widths]


def save_ladder(results: List[ApproxResult], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as file:
        writer = csv.writer(file)
        writer.writerow(["width", "sup_error", "rational_sup_error", "rounding_bound"])
        for r in results:
            writer.writerow([r.width, repr(r.sup_error), repr(r.rational_sup_error), repr(r.rounding_bound)])
    return path
