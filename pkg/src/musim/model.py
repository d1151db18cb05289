"""Three-layer, three-head classifier with hand-written backprop and Adam.

Output units are split into heads ELD action (7) | ELD dialogue act (14) |
next belief (13). The training loss is the sum of the three cross-entropies,
averaged over the batch.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .domain import BeliefState, DialogueAct, EldAction, Move, belief_from_index
from .features import FEATURE_SCHEMA_HASH, HEAD_SIZES, INPUT_DIM, TargetLabels, encode_input
from .io import SchemaMismatch, atomic_write_bytes

log = logging.getLogger(__name__)

OUTPUT_DIM = sum(HEAD_SIZES)
ACTIVATIONS = ("identity", "tanh", "relu")
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")

_MAGIC = b"MUSIMMLP"
_FORMAT_VERSION = 1


class DimensionMismatch(ValueError):
    pass


class CorruptFile(ValueError):
    pass


@dataclass
class TrainConfig:
    max_epochs: int = 100
    patience: int = 10
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 32
    seed: int = 0
    activation: str = "identity"
    hidden_dims: tuple[int, int] = (64, 32)
    dropout: float = 0.2

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if len(self.hidden_dims) != 2 or min(self.hidden_dims) < 1:
            raise ValueError("hidden_dims needs two positive widths")


@dataclass
class Mlp:
    params: dict[str, np.ndarray]
    activation: str = "identity"
    dropout: float = 0.2

    @property
    def dims(self) -> tuple[int, int, int, int]:
        w1, w2, w3 = self.params["W1"], self.params["W2"], self.params["W3"]
        return (w1.shape[0], w1.shape[1], w2.shape[1], w3.shape[1])

    def copy(self) -> Mlp:
        return Mlp({k: v.copy() for k, v in self.params.items()}, self.activation, self.dropout)


def _seeds(seed: int) -> list[np.random.SeedSequence]:
    # Independent streams for init, shuffling and dropout masks.
    return np.random.SeedSequence(seed).spawn(3)


def init_mlp(cfg: TrainConfig, input_dim: int = INPUT_DIM, output_dim: int = OUTPUT_DIM) -> Mlp:
    rng = np.random.default_rng(_seeds(cfg.seed)[0])
    dims = (input_dim, *cfg.hidden_dims, output_dim)
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:]), 1):
        bound = 1.0 / np.sqrt(fan_in)
        params[f"W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"b{i}"] = np.zeros(fan_out)
    return Mlp(params, cfg.activation, cfg.dropout)


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0).astype(z.dtype)
    return np.ones_like(z)


def split_heads(out: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a, d, _ = HEAD_SIZES
    return out[..., :a], out[..., a : a + d], out[..., a + d :]


def _forward(m: Mlp, x: np.ndarray, train_mode: bool, mask_source):
    p = m.params
    if x.shape[-1] != p["W1"].shape[0]:
        raise DimensionMismatch(f"input has {x.shape[-1]} features, model expects {p['W1'].shape[0]}")
    z1 = x @ p["W1"] + p["b1"]
    a1 = _act(m.activation, z1)
    z2 = a1 @ p["W2"] + p["b2"]
    a2 = _act(m.activation, z2)
    scale = None
    if train_mode and m.dropout > 0:
        if mask_source is None:
            raise ValueError("train mode needs a mask source")
        keep = mask_source.random(a2.shape) >= m.dropout
        scale = keep / (1.0 - m.dropout)
        d2 = a2 * scale
    else:
        d2 = a2
    out = d2 @ p["W3"] + p["b3"]
    return out, (z1, a1, z2, a2, scale, d2)


def forward(m: Mlp, x, train_mode: bool = False, mask_source=None):
    """Logits of the three heads for one input or a batch."""
    out, _ = _forward(m, np.asarray(x, dtype=np.float64), train_mode, mask_source)
    return split_heads(out)


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


def _targets_array(targets) -> np.ndarray:
    if isinstance(targets, TargetLabels):
        return np.asarray([targets.as_tuple()])
    t = np.asarray(targets, dtype=np.int64)
    return t.reshape(-1, 3)


def loss(logits, targets) -> float:
    """Summed per-head cross-entropy, averaged over the batch."""
    t = _targets_array(targets)
    total = 0.0
    for h, z in enumerate(logits):
        z = np.atleast_2d(z)
        lp = log_softmax(z)
        total += -lp[np.arange(len(t)), t[:, h]].sum()
    return float(total / len(t))


def backward(m: Mlp, x, targets, train_mode: bool = False, mask_source=None) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and its exact gradient with respect to every parameter."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    t = _targets_array(targets)
    n = len(x)
    out, (z1, a1, z2, a2, scale, d2) = _forward(m, x, train_mode, mask_source)
    p = m.params

    dout = np.empty_like(out)
    total = 0.0
    start = 0
    for h, size in enumerate(HEAD_SIZES):
        sl = slice(start, start + size)
        lp = log_softmax(out[:, sl])
        total -= lp[np.arange(n), t[:, h]].sum()
        g = np.exp(lp)
        g[np.arange(n), t[:, h]] -= 1.0
        dout[:, sl] = g / n
        start += size

    grads = {"W3": d2.T @ dout, "b3": dout.sum(axis=0)}
    dd2 = dout @ p["W3"].T
    da2 = dd2 * scale if scale is not None else dd2
    dz2 = da2 * _act_grad(m.activation, z2, a2)
    grads["W2"] = a1.T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    dz1 = (dz2 @ p["W2"].T) * _act_grad(m.activation, z1, a1)
    grads["W1"] = x.T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    return float(total / n), grads


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, model: Mlp) -> AdamState:
        return cls(
            {k: np.zeros_like(v) for k, v in model.params.items()},
            {k: np.zeros_like(v) for k, v in model.params.items()},
        )


def adam_step(model: Mlp, grads: dict[str, np.ndarray], state: AdamState, cfg: TrainConfig) -> tuple[Mlp, AdamState]:
    """One bias-corrected Adam update, applied in place."""
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        model.params[name] -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon)
    return model, state


# -- training ----------------------------------------------------------------


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[dict[str, float]] = field(default_factory=list)
    stopped_at_epoch: int = 0
    best_epoch: int = 0
    max_epochs: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _as_arrays(data) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(data, "arrays"):
        return data.arrays()
    x, y = data
    return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.int64)


def head_accuracies(m: Mlp, x: np.ndarray, y: np.ndarray) -> dict[str, float]:
    pred = predict_batch(m, x)
    hits = pred == y
    return {
        "action": float(hits[:, 0].mean()),
        "da": float(hits[:, 1].mean()),
        "state": float(hits[:, 2].mean()),
        "overall": float(hits.all(axis=1).mean()),
    }


def train(train_data, val_data, cfg: TrainConfig) -> tuple[Mlp, TrainReport]:
    """Mini-batch Adam with early stopping on validation loss.

    Returns the parameters from the epoch with the lowest validation loss.
    """
    x, y = _as_arrays(train_data)
    vx, vy = _as_arrays(val_data)
    if len(x) == 0 or len(vx) == 0:
        raise ValueError("training and validation sets must be nonempty")
    _, shuffle_seed, mask_seed = _seeds(cfg.seed)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    mask_rng = np.random.default_rng(mask_seed)

    model = init_mlp(cfg, input_dim=x.shape[1])
    state = AdamState.zeros_like(model)
    report = TrainReport(max_epochs=cfg.max_epochs)
    best, best_loss, since_best = model.copy(), np.inf, 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(x))
        seen, running = 0, 0.0
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch_loss, grads = backward(model, x[idx], y[idx], train_mode=True, mask_source=mask_rng)
            adam_step(model, grads, state, cfg)
            running += batch_loss * len(idx)
            seen += len(idx)
        val_loss = loss(forward(model, vx), vy)
        report.train_loss.append(running / seen)
        report.val_loss.append(val_loss)
        report.val_accuracy.append(head_accuracies(model, vx, vy))
        report.stopped_at_epoch = epoch
        log.info(
            "epoch %d train_loss=%.6f val_loss=%.6f val_overall=%.4f",
            epoch, running / seen, val_loss, report.val_accuracy[-1]["overall"],
        )
        if val_loss < best_loss:
            best, best_loss, since_best = model.copy(), val_loss, 0
            report.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    return best, report


# -- inference ---------------------------------------------------------------


def predict_batch(m: Mlp, x) -> np.ndarray:
    heads = forward(m, np.atleast_2d(np.asarray(x, dtype=np.float64)))
    # argmax returns the first maximum, so ties go to the lowest index.
    return np.stack([h.argmax(axis=-1) for h in heads], axis=1)


def predict(m: Mlp, x) -> TargetLabels:
    a, d, s = predict_batch(m, x)[0]
    return TargetLabels(int(a), int(d), int(s))


def coherent_batch(m: Mlp, x) -> np.ndarray:
    """Predictions with the action and DA heads forced to agree on passing.

    When exactly one head predicts "no move", the head whose top class is more
    probable decides, and the other head takes its best class consistent with it.
    """
    pa, pd, ps = (softmax(h) for h in forward(m, np.atleast_2d(np.asarray(x, dtype=np.float64))))
    a, d, s = pa.argmax(axis=1), pd.argmax(axis=1), ps.argmax(axis=1)
    for i in np.flatnonzero((a == 0) != (d == 0)):
        if pa[i, a[i]] >= pd[i, d[i]]:
            d[i] = 0 if a[i] == 0 else 1 + pd[i, 1:].argmax()
        else:
            a[i] = 0 if d[i] == 0 else 1 + pa[i, 1:].argmax()
    return np.stack([a, d, s], axis=1)


def predict_coherent(m: Mlp, x) -> TargetLabels:
    a, d, s = coherent_batch(m, x)[0]
    return TargetLabels(int(a), int(d), int(s))


class ModelPolicy:
    """ELD policy backed by a trained network."""

    name = "model"

    def __init__(self, model: Mlp, coherent: bool = True):
        self.model = model
        self.coherent = coherent

    def respond_batch(self, contexts) -> np.ndarray:
        x = np.stack([encode_input(c) for c in contexts])
        return coherent_batch(self.model, x) if self.coherent else predict_batch(self.model, x)

    def respond(self, ctx) -> tuple[Move, BeliefState]:
        a, d, s = self.respond_batch([ctx])[0]
        move = Move.eld(DialogueAct(int(d)), EldAction(int(a)))
        return move, belief_from_index(int(s))


# -- persistence -------------------------------------------------------------


def model_bytes(m: Mlp) -> bytes:
    header = json.dumps(
        {
            "dims": list(m.dims),
            "activation": m.activation,
            "dropout": m.dropout,
            "feature_schema": FEATURE_SCHEMA_HASH,
            "params": [[k, list(m.params[k].shape)] for k in PARAM_NAMES],
        },
        sort_keys=True,
    ).encode()
    payload = b"".join(np.ascontiguousarray(m.params[k], dtype="<f8").tobytes() for k in PARAM_NAMES)
    body = struct.pack("<II", _FORMAT_VERSION, len(header)) + header + payload
    return _MAGIC + body + hashlib.sha256(body).digest()


def save_model(m: Mlp, path) -> None:
    atomic_write_bytes(path, model_bytes(m))


def model_from_bytes(blob: bytes) -> Mlp:
    if len(blob) < len(_MAGIC) + 8 + 32 or not blob.startswith(_MAGIC):
        raise CorruptFile("not a model file or truncated")
    body, digest = blob[len(_MAGIC) : -32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptFile("checksum mismatch")
    version, hlen = struct.unpack_from("<II", body)
    if version != _FORMAT_VERSION:
        raise CorruptFile(f"unsupported model format version {version}")
    header = json.loads(body[8 : 8 + hlen])
    if header["feature_schema"] != FEATURE_SCHEMA_HASH:
        raise SchemaMismatch(
            f"model was trained on feature schema {header['feature_schema']}, this build uses {FEATURE_SCHEMA_HASH}"
        )
    offset = 8 + hlen
    params = {}
    for name, shape in header["params"]:
        count = int(np.prod(shape))
        chunk = body[offset : offset + 8 * count]
        if len(chunk) != 8 * count:
            raise CorruptFile(f"parameter {name} is truncated")
        params[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
        offset += 8 * count
    if offset != len(body):
        raise CorruptFile("trailing bytes after parameters")
    return Mlp(params, header["activation"], header["dropout"])


def load_model(path) -> Mlp:
    with open(path, "rb") as f:
        return model_from_bytes(f.read())
