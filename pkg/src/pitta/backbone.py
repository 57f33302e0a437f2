"""Small 1-D conv classifier with adaptable channel normalization.

Layout is channels-last, (B, T, C). The network is

    input norm (psi tap) -> [conv -> norm -> relu] x n -> mean pool
    -> linear -> relu (z) -> linear (logits)

Only the normalization affine parameters (gamma, beta) are adaptable; conv
and linear weights are frozen after pretraining.
"""
from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tape
from .tape import Var

log = logging.getLogger(__name__)

MODEL_MAGIC = b"PITM"
MODEL_VERSION = 1


class NonFiniteLossError(RuntimeError):
    def __init__(self, message, breakdown=None):
        super().__init__(message)
        self.breakdown = breakdown


@dataclass(frozen=True)
class BackboneConfig:
    channels_in: int = 3
    # (out_channels, kernel, stride, has_norm); a normless first block keeps the
    # psi offset visible downstream instead of being cancelled by the next norm
    blocks: tuple = ((16, 5, 2, 0), (32, 5, 2, 1))
    embedding_dim: int = 32
    num_classes: int = 3
    norm_epsilon: float = 1e-5
    norm_kind: str = "batch"  # "batch" | "instance"
    bn_momentum: float = 0.1
    adapt_running_stats: bool = False

    def __post_init__(self):
        blocks = tuple(tuple(int(v) for v in b) + ((1,) if len(b) == 3 else ()) for b in self.blocks)
        if any(len(b) != 4 for b in blocks):
            raise ValueError("blocks are (out_channels, kernel, stride[, has_norm])")
        object.__setattr__(self, "blocks", blocks)
        dims = [self.channels_in, self.embedding_dim, self.num_classes]
        dims += [v for b in self.blocks for v in b[:3]]
        if any(d <= 0 for d in dims):
            raise ValueError("all backbone dimensions must be positive")
        if self.norm_epsilon <= 0:
            raise ValueError("norm_epsilon must be positive")
        if self.norm_kind not in ("batch", "instance"):
            raise ValueError(f"unknown norm kind {self.norm_kind!r}")

    def norm_layers(self) -> list:
        return [("in_norm", self.channels_in)] + [
            (f"block{i}.norm", b[0]) for i, b in enumerate(self.blocks) if b[3]]

    def min_length(self) -> int:
        """Shortest input length that survives every conv block."""
        T = 1
        for _, k, s, _ in reversed(self.blocks):
            T = (T - 1) * s + k
        return T


@dataclass
class ForwardOutput:
    logits: Var
    probs: Var
    log_probs: Var
    z: Var
    psi: Var
    leaves: dict
    psi_stats: tuple  # (mean, std) used by the input norm, broadcastable to psi

    @property
    def predictions(self) -> np.ndarray:
        return np.argmax(self.probs.value, axis=-1)


@dataclass(eq=False)
class Backbone:
    config: BackboneConfig
    params: dict = field(default_factory=dict)
    running: dict = field(default_factory=dict)

    @property
    def adaptable_names(self) -> list:
        return [f"{n}.{p}" for n, _ in self.config.norm_layers() for p in ("gamma", "beta")]

    @property
    def frozen_names(self) -> list:
        ad = set(self.adaptable_names)
        return [k for k in self.params if k not in ad]

    def adaptable_fraction(self) -> float:
        n_ad = sum(self.params[k].size for k in self.adaptable_names)
        return n_ad / sum(v.size for v in self.params.values())

    def frozen_checksum(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.frozen_names):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k]).tobytes())
        return h.hexdigest()

    def adaptable_bytes(self) -> bytes:
        return b"".join(np.ascontiguousarray(self.params[k]).tobytes() for k in self.adaptable_names)

    def copy(self) -> "Backbone":
        return Backbone(self.config, {k: v.copy() for k, v in self.params.items()},
                        {k: v.copy() for k, v in self.running.items()})

    def get_adaptable(self) -> dict:
        return {k: self.params[k].copy() for k in self.adaptable_names}

    def set_adaptable(self, values: dict) -> None:
        for k in self.adaptable_names:
            self.params[k] = np.array(values[k], dtype=np.float64)


def build_backbone(config: BackboneConfig, seed: int) -> Backbone:
    """He-normal conv/linear weights, zero biases, unit gamma, zero beta."""
    rng = np.random.default_rng(seed)
    params, running = {}, {}
    for name, ch in config.norm_layers():
        params[f"{name}.gamma"] = np.ones(ch)
        params[f"{name}.beta"] = np.zeros(ch)
        running[f"{name}.mean"] = np.zeros(ch)
        running[f"{name}.var"] = np.ones(ch)
    cin = config.channels_in
    for i, (cout, k, _, _) in enumerate(config.blocks):
        params[f"block{i}.conv.w"] = rng.normal(0, np.sqrt(2.0 / (k * cin)), size=(k, cin, cout))
        params[f"block{i}.conv.b"] = np.zeros(cout)
        cin = cout
    D = config.embedding_dim
    params["embed.w"] = rng.normal(0, np.sqrt(2.0 / cin), size=(cin, D))
    params["embed.b"] = np.zeros(D)
    params["head.w"] = rng.normal(0, np.sqrt(1.0 / D), size=(D, config.num_classes))
    params["head.b"] = np.zeros(config.num_classes)
    return Backbone(config, params, running)


def _norm(model: Backbone, name: str, x: Var, leaves: dict, train: bool, update_running: bool):
    cfg = model.config
    eps = cfg.norm_epsilon
    if cfg.norm_kind == "instance":
        mean = x.value.mean(axis=1, keepdims=True)
        var = x.value.var(axis=1, keepdims=True)
        batch_stats = True
    elif train:
        mean = x.value.mean(axis=(0, 1), keepdims=True)
        var = x.value.var(axis=(0, 1), keepdims=True)
        batch_stats = True
        if update_running:
            m = cfg.bn_momentum
            n = x.shape[0] * x.shape[1]
            unbiased = var.ravel() * n / max(n - 1, 1)
            model.running[f"{name}.mean"] = (1 - m) * model.running[f"{name}.mean"] + m * mean.ravel()
            model.running[f"{name}.var"] = (1 - m) * model.running[f"{name}.var"] + m * unbiased
    else:
        mean = model.running[f"{name}.mean"].reshape(1, 1, -1)
        var = model.running[f"{name}.var"].reshape(1, 1, -1)
        batch_stats = False
    out = tape.channel_norm(x, leaves[f"{name}.gamma"], leaves[f"{name}.beta"],
                            mean, var, eps, batch_stats)
    return out, (mean, np.sqrt(var + eps))


def forward(model: Backbone, x, mode: str = "train", update_running: bool = False) -> ForwardOutput:
    """Run the network on x of shape (B, T, C) or on a Batch.

    ``mode="train"`` normalizes with current-batch statistics, ``"eval"``
    with the stored running statistics.
    """
    if hasattr(x, "data") and not isinstance(x, np.ndarray):
        x = x.data
    x = np.asarray(x, dtype=np.float64)
    cfg = model.config
    if x.ndim != 3 or x.shape[2] != cfg.channels_in:
        raise ValueError(f"expected (B, T, {cfg.channels_in}) input, got {x.shape}")
    if x.shape[1] < cfg.min_length():
        raise ValueError(f"window length {x.shape[1]} shorter than network minimum {cfg.min_length()}")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    train = mode == "train"
    leaves = {k: Var(v, name=k) for k, v in model.params.items()}

    psi, stats = _norm(model, "in_norm", Var(x), leaves, train, update_running)
    h = psi
    for i, (_, _, stride, has_norm) in enumerate(cfg.blocks):
        h = tape.conv1d(h, leaves[f"block{i}.conv.w"], leaves[f"block{i}.conv.b"], stride)
        if has_norm:
            h, _ = _norm(model, f"block{i}.norm", h, leaves, train, update_running)
        h = tape.relu(h)
    pooled = tape.mean(h, axis=1)
    z = tape.relu(pooled @ leaves["embed.w"] + leaves["embed.b"])
    logits = z @ leaves["head.w"] + leaves["head.b"]
    return ForwardOutput(logits, tape.softmax(logits), tape.log_softmax(logits), z, psi, leaves, stats)


def value_and_grad(model: Backbone, x, loss_fn, state=None, mode: str = "train",
                   names=None, out: ForwardOutput | None = None):
    """Evaluate ``loss_fn(out, state)`` and its gradient w.r.t. ``names``."""
    if out is None:
        out = forward(model, x, mode)
    loss = loss_fn(out, state)
    value = float(loss.value)
    if not np.isfinite(value):
        raise NonFiniteLossError(f"non-finite loss {value}", getattr(loss, "breakdown", None))
    tape.backward(loss)
    names = model.adaptable_names if names is None else names
    grads = {k: (np.zeros_like(model.params[k]) if out.leaves[k].grad is None
                 else out.leaves[k].grad) for k in names}
    return value, grads


def grad_adaptable(model: Backbone, x, loss_fn, state=None, mode: str = "train") -> dict:
    return value_and_grad(model, x, loss_fn, state, mode)[1]


def sgd_step(model: Backbone, grads: dict, eta: float) -> bool:
    """theta_A <- theta_A - eta * g in place. Returns False (and logs) if skipped."""
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        log.warning("sgd_step skipped: non-finite gradient")
        return False
    adaptable = set(model.adaptable_names)
    for k, g in grads.items():
        if k not in adaptable:
            raise KeyError(f"{k} is not an adaptable parameter")
        model.params[k] = model.params[k] - eta * g
    return True


def predict(model: Backbone, x, mode: str = "eval") -> np.ndarray:
    return forward(model, x, mode).predictions


def accuracy(model: Backbone, x, y, mode: str = "eval", chunk: int = 256) -> float:
    y = np.asarray(y)
    correct = 0
    for i in range(0, len(y), chunk):
        correct += int(np.sum(predict(model, x[i:i + chunk], mode) == y[i:i + chunk]))
    return correct / len(y)


@dataclass
class PretrainReport:
    train_accuracy: float
    holdout_accuracy: float
    epochs: int
    final_loss: float


def init_pretrained(config: BackboneConfig, x, y, epochs: int = 20, seed: int = 0,
                    lr: float = 0.05, batch_size: int = 32, holdout_frac: float = 0.2,
                    homogeneous_frac: float = 0.0):
    """Offline cross-entropy SGD on all parameters. Returns (model, report).

    A stratified ``holdout_frac`` of the source data is kept aside for the
    reported source accuracy. With ``homogeneous_frac`` > 0 that share of
    batches is drawn from a single class, so the network also learns to
    classify under single-class batch statistics; running statistics are
    only accumulated on mixed batches.
    """
    if not 0.0 <= homogeneous_frac <= 1.0:
        raise ValueError("homogeneous_frac must lie in [0, 1]")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise ValueError("pretraining needs at least two classes")
    rng = np.random.default_rng(seed)
    model = build_backbone(config, seed)
    hold = np.zeros(len(y), dtype=bool)
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        hold[rng.choice(idx, size=int(round(holdout_frac * len(idx))), replace=False)] = True
    xtr, ytr, xho, yho = x[~hold], y[~hold], x[hold], y[hold]
    all_names = list(model.params)

    def ce(out, _):
        onehot = np.eye(config.num_classes)[yb]
        return -tape.mean(tape.sum(out.log_probs * onehot, axis=1))

    by_class = [np.flatnonzero(ytr == c) for c in np.unique(ytr)]
    loss = float("nan")
    for _ in range(epochs):
        perm = rng.permutation(len(ytr))
        for i in range(0, len(perm) - batch_size + 1, batch_size):
            sel = perm[i:i + batch_size]
            mixed = homogeneous_frac == 0.0 or rng.random() >= homogeneous_frac
            if not mixed:
                pool = by_class[rng.integers(len(by_class))]
                sel = rng.choice(pool, size=min(batch_size, len(pool)), replace=False)
            yb = ytr[sel]
            out = forward(model, xtr[sel], "train", update_running=mixed)
            loss, grads = value_and_grad(model, None, ce, names=all_names, out=out)
            for k in all_names:
                model.params[k] = model.params[k] - lr * grads[k]
    report = PretrainReport(accuracy(model, xtr, ytr), accuracy(model, xho, yho) if len(yho) else float("nan"),
                            epochs, loss)
    return model, report


# ---------------------------------------------------------------------------
# PITM container: magic, u8 version, u32 header length, JSON header, f64 payload


def save_model(model: Backbone, path) -> None:
    arrays = [("p:" + k, v) for k, v in model.params.items()] + \
             [("r:" + k, v) for k, v in model.running.items()]
    header = {
        "config": asdict(model.config),
        "arrays": [[k, list(v.shape)] for k, v in arrays],
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC + struct.pack("<BI", MODEL_VERSION, len(hb)) + hb)
        for _, v in arrays:
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_model(path) -> Backbone:
    raw = Path(path).read_bytes()
    if raw[:4] != MODEL_MAGIC:
        raise ValueError("not a PITM container")
    version, hlen = struct.unpack_from("<BI", raw, 4)
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported PITM version {version}")
    header = json.loads(raw[9:9 + hlen])
    cfg = header["config"]
    cfg["blocks"] = tuple(tuple(b) for b in cfg["blocks"])
    model = Backbone(BackboneConfig(**cfg))
    off = 9 + hlen
    for key, shape in header["arrays"]:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
        kind, name = key.split(":", 1)
        (model.params if kind == "p" else model.running)[name] = arr
    return model
