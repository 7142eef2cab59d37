"""Toy multi-modal classifier with hand-written gradients.

Each modality ``j`` has an encoder ``e_j = W2 relu(W1 x_j + b1) + b2`` and its
own classification head. The fusion head sees the concatenation of all
embeddings. Everything is batched: inputs are lists of ``(B, d_j)`` arrays
(1-d arrays are promoted to a batch of one).

Parameters live in a flat ``{name: ndarray}`` mapping so that gradients,
momentum buffers and checkpoints share one layout::

    enc{j}.W1  (hidden, d_j)     enc{j}.b1  (hidden,)
    enc{j}.W2  (embed, hidden)   enc{j}.b2  (embed,)
    uni{j}.W   (classes, embed)  uni{j}.b   (classes,)
    fusion.W   (classes, m*embed) fusion.b  (classes,)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, ParseError
from .numkit import Rng, cross_entropy_batch, softmax

GRAD_SCOPES = ("heads", "all")
CHECKPOINT_FORMAT = "bss-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelState:
    dims: tuple[int, ...]
    hidden: int
    embed: int
    classes: int
    params: dict[str, np.ndarray]
    momentum: dict[str, np.ndarray]

    @property
    def n_modalities(self) -> int:
        return len(self.dims)

    def copy(self) -> "ModelState":
        return ModelState(
            self.dims,
            self.hidden,
            self.embed,
            self.classes,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.momentum.items()},
        )

    def head_names(self) -> list[str]:
        names = []
        for j in range(self.n_modalities):
            names += [f"uni{j}.W", f"uni{j}.b"]
        return names + ["fusion.W", "fusion.b"]


@dataclass
class ForwardTrace:
    """Everything forward computes, kept for scoring and backprop."""

    inputs: list[np.ndarray]
    pre_hidden: list[np.ndarray]
    hidden: list[np.ndarray]
    embeddings: list[np.ndarray]
    uni_logits: list[np.ndarray]
    uni_probs: list[np.ndarray]
    fused_embedding: np.ndarray
    fused_logits: np.ndarray
    fused_probs: np.ndarray
    batch_size: int = field(init=False)

    def __post_init__(self):
        self.batch_size = self.fused_probs.shape[0]


def _xavier(rng: Rng, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_model(dims, hidden: int, embed: int, classes: int, rng: Rng) -> ModelState:
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2:
        raise InputError("need at least two modalities")
    if min(dims) < 1 or hidden < 1 or embed < 1 or classes < 1:
        raise InputError("all dimensions must be >= 1")
    params = {}
    for j, d in enumerate(dims):
        params[f"enc{j}.W1"] = _xavier(rng, hidden, d)
        params[f"enc{j}.b1"] = np.zeros(hidden)
        params[f"enc{j}.W2"] = _xavier(rng, embed, hidden)
        params[f"enc{j}.b2"] = np.zeros(embed)
    for j in range(len(dims)):
        params[f"uni{j}.W"] = _xavier(rng, classes, embed)
        params[f"uni{j}.b"] = np.zeros(classes)
    params["fusion.W"] = _xavier(rng, classes, len(dims) * embed)
    params["fusion.b"] = np.zeros(classes)
    momentum = {k: np.zeros_like(v) for k, v in params.items()}
    return ModelState(dims, hidden, embed, classes, params, momentum)


def _as_batch(model: ModelState, xs) -> list[np.ndarray]:
    if len(xs) != model.n_modalities:
        raise InputError(f"expected {model.n_modalities} modalities, got {len(xs)}")
    out = []
    for j, x in enumerate(xs):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != model.dims[j]:
            raise InputError(
                f"modality {j}: expected dim {model.dims[j]}, got shape {x.shape}"
            )
        out.append(x)
    if len({x.shape[0] for x in out}) != 1:
        raise InputError("modalities disagree on batch size")
    return out


def forward(model: ModelState, xs) -> ForwardTrace:
    xs = _as_batch(model, xs)
    p = model.params
    pre, hid, emb, ulog, uprob = [], [], [], [], []
    for j, x in enumerate(xs):
        a = x @ p[f"enc{j}.W1"].T + p[f"enc{j}.b1"]
        h = np.maximum(a, 0.0)
        e = h @ p[f"enc{j}.W2"].T + p[f"enc{j}.b2"]
        z = e @ p[f"uni{j}.W"].T + p[f"uni{j}.b"]
        pre.append(a)
        hid.append(h)
        emb.append(e)
        ulog.append(z)
        uprob.append(softmax(z))
    fused = np.concatenate(emb, axis=1)
    fz = fused @ p["fusion.W"].T + p["fusion.b"]
    return ForwardTrace(xs, pre, hid, emb, ulog, uprob, fused, fz, softmax(fz))


def total_loss(trace: ForwardTrace, labels, alpha: float):
    """Per-sample ``(1-alpha) CE(fused) + alpha * sum_j CE(uni_j)``."""
    if not 0.0 <= alpha <= 1.0:
        raise InputError(f"alpha must lie in [0, 1], got {alpha}")
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    loss = (1.0 - alpha) * cross_entropy_batch(trace.fused_probs, labels)
    for probs in trace.uni_probs:
        loss = loss + alpha * cross_entropy_batch(probs, labels)
    return loss


def _logit_grads(trace: ForwardTrace, labels, alpha: float):
    """d(per-sample loss)/d(logits) for the fusion head and each uni head."""
    onehot = np.zeros_like(trace.fused_probs)
    onehot[np.arange(len(labels)), labels] = 1.0
    d_fused = (1.0 - alpha) * (trace.fused_probs - onehot)
    d_uni = [alpha * (probs - onehot) for probs in trace.uni_probs]
    return d_fused, d_uni


def loss_and_grads(model: ModelState, xs, labels, alpha: float, detach_uni=False):
    """Mean total loss over the batch and its exact gradient.

    With ``detach_uni`` the uni-modal losses train only their heads and do not
    reach the encoders.
    """
    trace = forward(model, xs)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape[0] != trace.batch_size:
        raise InputError("labels and inputs disagree on batch size")
    losses = total_loss(trace, labels, alpha)
    B = trace.batch_size
    p = model.params
    d_fused, d_uni = _logit_grads(trace, labels, alpha)
    d_fused /= B

    grads = {
        "fusion.W": d_fused.T @ trace.fused_embedding,
        "fusion.b": d_fused.sum(axis=0),
    }
    d_fused_emb = d_fused @ p["fusion.W"]
    E = model.embed
    for j in range(model.n_modalities):
        dz = d_uni[j] / B
        e = trace.embeddings[j]
        grads[f"uni{j}.W"] = dz.T @ e
        grads[f"uni{j}.b"] = dz.sum(axis=0)
        de = d_fused_emb[:, j * E:(j + 1) * E]
        if not detach_uni:
            de = de + dz @ p[f"uni{j}.W"]
        grads[f"enc{j}.W2"] = de.T @ trace.hidden[j]
        grads[f"enc{j}.b2"] = de.sum(axis=0)
        da = (de @ p[f"enc{j}.W2"]) * (trace.pre_hidden[j] > 0)
        grads[f"enc{j}.W1"] = da.T @ trace.inputs[j]
        grads[f"enc{j}.b1"] = da.sum(axis=0)
    return float(losses.mean()), grads


def backward(model: ModelState, xs, labels, alpha: float, detach_uni=False):
    """Gradient of the mean total loss w.r.t. every parameter."""
    return loss_and_grads(model, xs, labels, alpha, detach_uni)[1]


def sgd_step(model: ModelState, grads, lr: float, momentum=0.9, weight_decay=1e-4):
    """In-place SGD with momentum and L2 weight decay; returns ``model``.

    ``buf = momentum * buf + grad + weight_decay * param``;
    ``param -= lr * buf``.
    """
    if lr < 0:
        raise InputError(f"learning rate must be >= 0, got {lr}")
    for name, param in model.params.items():
        buf = model.momentum[name]
        buf *= momentum
        buf += grads[name]
        if weight_decay:
            buf += weight_decay * param
        param -= lr * buf
    return model


def per_sample_gradient_norm(model: ModelState, xs, labels, alpha: float, scope="heads"):
    """L2 norm of each sample's own loss gradient, over ``scope``'s parameters.

    ``scope="heads"`` covers the uni-modal and fusion heads and is computed in
    closed form for the whole batch; ``scope="all"`` adds the encoders and
    runs one backward pass per sample.
    """
    if scope not in GRAD_SCOPES:
        raise InputError(f"scope must be one of {GRAD_SCOPES}, got {scope!r}")
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if scope == "all":
        xs = _as_batch(model, xs)
        out = np.empty(len(labels))
        for i in range(len(labels)):
            g = backward(model, [x[i:i + 1] for x in xs], labels[i:i + 1], alpha)
            out[i] = np.sqrt(sum(np.sum(v * v) for v in g.values()))
        return out
    trace = forward(model, xs)
    d_fused, d_uni = _logit_grads(trace, labels, alpha)
    # grad W = outer(dz, input) so ||grad W||^2 = ||dz||^2 ||input||^2
    sq_f = np.sum(d_fused**2, axis=1)
    total = sq_f * (np.sum(trace.fused_embedding**2, axis=1) + 1.0)
    for dz, e in zip(d_uni, trace.embeddings):
        total += np.sum(dz**2, axis=1) * (np.sum(e**2, axis=1) + 1.0)
    return np.sqrt(total)


def flatten(tensors: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([tensors[k].ravel() for k in sorted(tensors)])


# -- checkpoints -----------------------------------------------------------


def checkpoint_dict(model: ModelState) -> dict:
    """JSON-ready checkpoint. Floats are written with ``repr`` precision so
    loading reproduces every array bit for bit."""

    def pack(arrs):
        return {
            k: {"shape": list(v.shape), "data": v.ravel().tolist()}
            for k, v in arrs.items()
        }

    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": list(model.dims),
        "hidden": model.hidden,
        "embed": model.embed,
        "classes": model.classes,
        "params": pack(model.params),
        "momentum": pack(model.momentum),
    }


def model_from_dict(blob: dict) -> ModelState:
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"not a checkpoint (format={blob.get('format')!r})")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {blob.get('version')!r}")
    try:
        dims = tuple(int(d) for d in blob["dims"])
        hidden, embed, classes = int(blob["hidden"]), int(blob["embed"]), int(blob["classes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad checkpoint header: {exc}") from None
    # reference layout to validate names and shapes against
    ref = init_model(dims, hidden, embed, classes, np.random.default_rng(0))

    def unpack(section):
        raw = blob.get(section)
        if not isinstance(raw, dict) or set(raw) != set(ref.params):
            raise FormatError(f"checkpoint {section!r} does not match the model layout")
        out = {}
        for k, spec in raw.items():
            arr = np.asarray(spec["data"], dtype=np.float64).reshape(spec["shape"])
            if arr.shape != ref.params[k].shape:
                raise FormatError(f"{section}.{k}: shape {arr.shape}, expected {ref.params[k].shape}")
            out[k] = arr
        return {k: out[k] for k in ref.params}

    return ModelState(dims, hidden, embed, classes, unpack("params"), unpack("momentum"))


def save_checkpoint(model: ModelState, path) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(model)))


def load_checkpoint(path) -> ModelState:
    try:
        blob = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid checkpoint JSON: {exc}") from None
    return model_from_dict(blob)
