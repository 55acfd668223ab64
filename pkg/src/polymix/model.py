"""Multi-label classifier head over per-layer embeddings.

A clip is represented as a LayerStack: one time-pooled D-vector per encoder
layer. The head learns a softmax weighting over layers, aggregates them into
a single vector, and maps it through a two-layer ReLU network to one logit
per instrument class. Training minimizes mean binary cross-entropy with
logits under AdamW.

All math is float64 numpy; every operation here is pure and deterministic.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import N_CLASSES
from .errors import PolymixError

LSTK_MAGIC = b"LSTK"
LSTK_VERSION = 1
CHECKPOINT_MAGIC = b"LSHD"
CHECKPOINT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class LayerStack:
    """Per-clip [L x D] matrix: one pooled embedding per encoder layer."""

    layers: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.layers, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise PolymixError(f"layer stack must be [L x D] with L >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise PolymixError("layer stack contains non-finite values")
        object.__setattr__(self, "layers", arr)

    @property
    def n_layers(self) -> int:
        return self.layers.shape[0]

    @property
    def dim(self) -> int:
        return self.layers.shape[1]


@dataclass
class HeadModel:
    """Parameters: softmax layer weights plus a two-layer ReLU network."""

    layer_logits: np.ndarray  # [L]
    w1: np.ndarray            # [H x D]
    b1: np.ndarray            # [H]
    w2: np.ndarray            # [C x H]
    b2: np.ndarray            # [C]

    def __post_init__(self):
        self.layer_logits = np.asarray(self.layer_logits, dtype=np.float64)
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64)
        h, d = self.w1.shape
        c = self.w2.shape[0]
        if self.b1.shape != (h,) or self.w2.shape != (c, h) or self.b2.shape != (c,):
            raise PolymixError("inconsistent head parameter shapes")
        for name, arr in self._params():
            if not np.all(np.isfinite(arr)):
                raise PolymixError(f"non-finite values in parameter {name}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_logits)

    @property
    def dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def n_classes(self) -> int:
        return self.w2.shape[0]

    def _params(self) -> list[tuple[str, np.ndarray]]:
        # Declared order; serialization and optimizer state both follow it.
        return [("layer_logits", self.layer_logits), ("w1", self.w1),
                ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]

    def copy(self) -> "HeadModel":
        return HeadModel(self.layer_logits.copy(), self.w1.copy(),
                         self.b1.copy(), self.w2.copy(), self.b2.copy())

    @classmethod
    def init(cls, n_layers: int, dim: int, hidden: int = 256,
             n_classes: int = N_CLASSES, seed: int = 0) -> "HeadModel":
        """Zero layer logits (uniform aggregation at start); W1/W2 from a
        symmetric uniform fan-in-scaled distribution; zero biases."""
        rng = np.random.Generator(np.random.PCG64(seed))
        s1 = 1.0 / np.sqrt(dim)
        s2 = 1.0 / np.sqrt(hidden)
        return cls(
            layer_logits=np.zeros(n_layers),
            w1=rng.uniform(-s1, s1, size=(hidden, dim)),
            b1=np.zeros(hidden),
            w2=rng.uniform(-s2, s2, size=(n_classes, hidden)),
            b2=np.zeros(n_classes),
        )


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 10
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    optimizer: str = "adamw"
    seed: int = 0

    def __post_init__(self):
        if self.batch_size <= 0 or self.epochs <= 0:
            raise PolymixError("batch_size and epochs must be positive")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise PolymixError("learning_rate and weight_decay must be non-negative")
        if self.optimizer != "adamw":
            raise PolymixError(f"unsupported optimizer {self.optimizer!r}")


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - np.max(x))
    return e / np.sum(e)


def layer_weights(model: HeadModel) -> np.ndarray:
    """Softmax of the layer logits; strictly positive, sums to 1."""
    return _softmax(model.layer_logits)


def aggregate_layers(stack: LayerStack, model: HeadModel) -> np.ndarray:
    if stack.n_layers != model.n_layers:
        raise PolymixError(
            f"stack has {stack.n_layers} layers, model expects {model.n_layers}")
    return layer_weights(model) @ stack.layers


def forward(model: HeadModel, stack: LayerStack) -> np.ndarray:
    """Logits [C] = W2 relu(W1 aggregate + b1) + b2."""
    if stack.dim != model.dim:
        raise PolymixError(f"stack dim {stack.dim} != model dim {model.dim}")
    agg = aggregate_layers(stack, model)
    hidden = np.maximum(model.w1 @ agg + model.b1, 0.0)
    logits = model.w2 @ hidden + model.b2
    if not np.all(np.isfinite(logits)):
        raise PolymixError("non-finite logits")
    return logits


def predict_proba(model: HeadModel, stack: LayerStack) -> np.ndarray:
    """Per-class sigmoid probabilities."""
    z = forward(model, stack)
    return 1.0 / (1.0 + np.exp(-z))


def _bce_elementwise(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    # max(z,0) - z*y + log(1+exp(-|z|)): never evaluates log(0), exact for
    # y in {0,1} by case analysis against -[y log s + (1-y) log(1-s)].
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))


def bce_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean over classes of binary cross-entropy with logits."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape:
        raise PolymixError(f"logits shape {z.shape} != labels shape {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise PolymixError("labels must be binary")
    return float(np.mean(_bce_elementwise(z, y)))


def _stack_batch(stacks: Sequence[LayerStack]) -> np.ndarray:
    shapes = {s.layers.shape for s in stacks}
    if len(shapes) != 1:
        raise PolymixError(f"mixed stack shapes in one batch: {sorted(shapes)}")
    return np.stack([s.layers for s in stacks])


def _forward_batch(model: HeadModel, stacks: np.ndarray):
    """stacks [N x L x D] -> logits [N x C] plus cached intermediates."""
    w = layer_weights(model)
    agg = np.einsum("nld,l->nd", stacks, w)
    pre1 = agg @ model.w1.T + model.b1
    hidden = np.maximum(pre1, 0.0)
    logits = hidden @ model.w2.T + model.b2
    return logits, (w, agg, pre1, hidden)


def _grads(model: HeadModel, stacks: np.ndarray, labels: np.ndarray):
    """Mean-over-all-cells BCE loss and its gradient for every parameter."""
    n, c = labels.shape
    logits, (w, agg, pre1, hidden) = _forward_batch(model, stacks)
    loss = float(np.mean(_bce_elementwise(logits, labels)))

    # d loss / d logits for the stable form is sigmoid(z) - y, scaled by the
    # mean reduction over N*C cells.
    p = 1.0 / (1.0 + np.exp(-logits))
    dlogits = (p - labels) / (n * c)

    dw2 = dlogits.T @ hidden
    db2 = dlogits.sum(axis=0)
    dhidden = dlogits @ model.w2
    dpre1 = dhidden * (pre1 > 0)
    dw1 = dpre1.T @ agg
    db1 = dpre1.sum(axis=0)
    dagg = dpre1 @ model.w1
    dw_agg = np.einsum("nd,nld->l", dagg, stacks)
    # Softmax Jacobian: dz_l = w_l (g_l - sum_k w_k g_k).
    dlayer_logits = w * (dw_agg - np.dot(w, dw_agg))

    return loss, {"layer_logits": dlayer_logits, "w1": dw1, "b1": db1,
                  "w2": dw2, "b2": db2}


@dataclass
class TrainResult:
    model: HeadModel
    epoch_losses: list[float] = field(default_factory=list)


def train(model: HeadModel, dataset: Sequence[tuple[LayerStack, np.ndarray]],
          cfg: TrainConfig) -> TrainResult:
    """Shuffled minibatch AdamW; returns trained parameters and the per-epoch
    mean training loss. Deterministic in cfg.seed.

    AdamW step: m and v are exponential moving averages of g and g^2 with
    bias correction, and weight decay is decoupled (applied directly to the
    parameter, scaled by the learning rate, not through the gradient).
    """
    if not dataset:
        raise PolymixError("empty training dataset")
    stacks = _stack_batch([s for s, _ in dataset])
    labels = np.stack([np.asarray(y, dtype=np.float64) for _, y in dataset])
    if labels.shape != (len(dataset), model.n_classes):
        raise PolymixError(f"labels shape {labels.shape} does not match "
                           f"{len(dataset)} samples x {model.n_classes} classes")

    model = model.copy()
    params = dict(model._params())
    m_state = {k: np.zeros_like(v) for k, v in params.items()}
    v_state = {k: np.zeros_like(v) for k, v in params.items()}
    step = 0
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    epoch_losses: list[float] = []

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for batch_no, start in enumerate(range(0, len(dataset), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, grads = _grads(model, stacks[idx], labels[idx])
            if not np.isfinite(loss):
                raise PolymixError(f"NaN loss at epoch {epoch}, batch {batch_no}")
            total += loss * len(idx)
            step += 1
            bc1 = 1.0 - ADAM_BETA1 ** step
            bc2 = 1.0 - ADAM_BETA2 ** step
            for name, p in params.items():
                g = grads[name]
                m_state[name] = ADAM_BETA1 * m_state[name] + (1 - ADAM_BETA1) * g
                v_state[name] = ADAM_BETA2 * v_state[name] + (1 - ADAM_BETA2) * g * g
                m_hat = m_state[name] / bc1
                v_hat = v_state[name] / bc2
                p -= cfg.learning_rate * (
                    m_hat / (np.sqrt(v_hat) + ADAM_EPS) + cfg.weight_decay * p)
        epoch_losses.append(total / len(dataset))
    return TrainResult(model, epoch_losses)


def grad_check(model: HeadModel, sample: tuple[LayerStack, np.ndarray],
               epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per element is |a - n| / max(|a|, |n|, 1e-3); the floor
    keeps near-zero coordinates from inflating the ratio with pure roundoff.
    """
    if not (1e-6 <= epsilon <= 1e-3):
        raise PolymixError(f"epsilon {epsilon} outside [1e-6, 1e-3]")
    stack, labels = sample
    stacks = stack.layers[np.newaxis, :, :]
    y = np.asarray(labels, dtype=np.float64)[np.newaxis, :]
    _, analytic = _grads(model, stacks, y)

    work = model.copy()
    params = dict(work._params())
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = _grads(work, stacks, y)[0]
            flat[i] = orig - epsilon
            lo = _grads(work, stacks, y)[0]
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * epsilon)
            rel = abs(a_flat[i] - numeric) / max(abs(a_flat[i]), abs(numeric), 1e-3)
            worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# Binary formats

def write_lstk(path: str | Path, layers: np.ndarray) -> None:
    """Embedding file: magic "LSTK", u32 version=1, u32 L, u32 D, then
    L*D float32 values row-major, all little-endian."""
    arr = np.ascontiguousarray(np.asarray(layers, dtype="<f4"))
    if arr.ndim != 2:
        raise PolymixError(f"embedding matrix must be 2-D, got shape {arr.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(LSTK_MAGIC)
        fh.write(struct.pack("<III", LSTK_VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def read_lstk(path: str | Path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 16 or data[:4] != LSTK_MAGIC:
        raise PolymixError(f"{path}: not an LSTK file")
    version, n_layers, dim = struct.unpack("<III", data[4:16])
    if version != LSTK_VERSION:
        raise PolymixError(f"{path}: unsupported LSTK version {version}")
    expected = 16 + 4 * n_layers * dim
    if len(data) != expected:
        raise PolymixError(f"{path}: size {len(data)} != expected {expected} "
                           f"for L={n_layers} D={dim}")
    arr = np.frombuffer(data[16:], dtype="<f4").reshape(n_layers, dim)
    if not np.all(np.isfinite(arr)):
        raise PolymixError(f"{path}: non-finite embedding values")
    return arr.astype(np.float64)


def save_checkpoint(path: str | Path, model: HeadModel,
                    cfg: Optional[TrainConfig] = None) -> None:
    """Checkpoint: magic "LSHD", u32 version=1, u32 (L, D, H, C), float32
    parameter blocks in declared order, then u32 length + TrainConfig JSON."""
    cfg = cfg if cfg is not None else TrainConfig()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trailer = json.dumps(asdict(cfg), separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIIII", CHECKPOINT_VERSION, model.n_layers,
                             model.dim, model.hidden, model.n_classes))
        for _, arr in model._params():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        fh.write(struct.pack("<I", len(trailer)))
        fh.write(trailer)


def load_checkpoint(path: str | Path) -> tuple[HeadModel, TrainConfig]:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 24 or data[:4] != CHECKPOINT_MAGIC:
        raise PolymixError(f"{path}: not a checkpoint file")
    version, l, d, h, c = struct.unpack("<IIIII", data[4:24])
    if version != CHECKPOINT_VERSION:
        raise PolymixError(f"{path}: unsupported checkpoint version {version}")
    sizes = [l, h * d, h, c * h, c]
    offset = 24
    blocks = []
    for size in sizes:
        end = offset + 4 * size
        if end > len(data):
            raise PolymixError(f"{path}: truncated checkpoint")
        blocks.append(np.frombuffer(data[offset:end], dtype="<f4").astype(np.float64))
        offset = end
    if offset + 4 > len(data):
        raise PolymixError(f"{path}: missing config trailer")
    (tlen,) = struct.unpack("<I", data[offset:offset + 4])
    offset += 4
    if offset + tlen != len(data):
        raise PolymixError(f"{path}: trailer length mismatch")
    cfg = TrainConfig(**json.loads(data[offset:offset + tlen].decode("utf-8")))
    model = HeadModel(blocks[0], blocks[1].reshape(h, d), blocks[2],
                      blocks[3].reshape(c, h), blocks[4])
    return model, cfg
