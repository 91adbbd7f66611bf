"""Two-headed feed-forward network: shared trunk, C-way class head, scalar detector head.

Parameters live in one flat float64 vector with a deterministic layout, which
is what makes per-sample gradient vectors well-defined for scoring. Gradients
are analytic; no autodiff.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

ID_POSITIVE = "id_positive"
OOD_NEGATIVE = "ood_negative"

_WNN_MAGIC = b"WNN1"
_WNN_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden_sizes: tuple[int, ...]
    num_classes: int
    activation: str = "tanh"  # "tanh" | "relu"
    shared_trunk: bool = True  # False: the detector gets its own trunk of the same shape

    def validate(self) -> None:
        if self.input_dim < 1 or self.num_classes < 2:
            raise ValidationError("input_dim >= 1 and num_classes >= 2 required")
        if len(self.hidden_sizes) < 1 or any(h < 1 for h in self.hidden_sizes):
            raise ValidationError("at least one hidden layer of positive width required")
        if self.activation not in ("tanh", "relu"):
            raise ValidationError(f"unknown activation {self.activation!r}")

    @property
    def param_count(self) -> int:
        return _layout(self).total

    def to_json_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "num_classes": self.num_classes,
            "activation": self.activation,
            "shared_trunk": self.shared_trunk,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "Architecture":
        return Architecture(
            input_dim=int(d["input_dim"]),
            hidden_sizes=tuple(int(h) for h in d["hidden_sizes"]),
            num_classes=int(d["num_classes"]),
            activation=d.get("activation", "tanh"),
            shared_trunk=bool(d.get("shared_trunk", True)),
        )


@dataclass(frozen=True)
class _Layout:
    """Bijection between (block name, shape) and flat offsets."""
    blocks: tuple[tuple[str, tuple[int, ...], int], ...]  # (name, shape, offset)
    total: int

    def slices(self) -> dict[str, slice]:
        return {name: slice(off, off + int(np.prod(shape)))
                for name, shape, off in self.blocks}

    def view(self, params: np.ndarray, name: str) -> np.ndarray:
        for bname, shape, off in self.blocks:
            if bname == name:
                return params[off: off + int(np.prod(shape))].reshape(shape)
        raise KeyError(name)


@lru_cache(maxsize=None)
def _layout(arch: Architecture) -> _Layout:
    arch.validate()
    blocks = []
    off = 0

    def add(name, shape):
        nonlocal off
        blocks.append((name, shape, off))
        off += int(np.prod(shape))

    sizes = (arch.input_dim, *arch.hidden_sizes)
    for i in range(len(arch.hidden_sizes)):
        add(f"trunk{i}.W", (sizes[i + 1], sizes[i]))
        add(f"trunk{i}.b", (sizes[i + 1],))
    add("cls.W", (arch.num_classes, sizes[-1]))
    add("cls.b", (arch.num_classes,))
    if not arch.shared_trunk:
        for i in range(len(arch.hidden_sizes)):
            add(f"det_trunk{i}.W", (sizes[i + 1], sizes[i]))
            add(f"det_trunk{i}.b", (sizes[i + 1],))
    add("det.W", (1, sizes[-1]))
    add("det.b", (1,))
    return _Layout(tuple(blocks), off)


def class_head_slice(arch: Architecture) -> slice:
    """Flat slice covering the classification head (weights then bias, contiguous)."""
    sl = _layout(arch).slices()
    return slice(sl["cls.W"].start, sl["cls.b"].stop)


def init_params(arch: Architecture, seed: int) -> np.ndarray:
    """Seeded init: uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases.

    The detector head starts at zero so its score is 0 (indifference)
    everywhere: the smooth level-set penalty has maximal gradient there,
    whereas a random head can park samples deep in the sigmoid's flat region
    and never recover them.
    """
    lay = _layout(arch)
    rng = np.random.default_rng(seed)
    params = np.zeros(lay.total, dtype=np.float64)
    for name, shape, off in lay.blocks:
        if name.endswith(".W") and name != "det.W":
            fan_out, fan_in = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            size = fan_out * fan_in
            params[off: off + size] = rng.uniform(-bound, bound, size=size)
    return params


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def _act_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    return 1.0 - a * a if kind == "tanh" else (z > 0).astype(np.float64)


def _check_x(arch: Architecture, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != arch.input_dim:
        raise ValidationError(
            f"input dim {X.shape[1]} does not match architecture dim {arch.input_dim}")
    return X


def _check_params(arch: Architecture, params: np.ndarray) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (_layout(arch).total,):
        raise ValidationError(
            f"expected {_layout(arch).total} parameters, got {params.shape}")
    return params


class _Cache:
    __slots__ = ("pre", "post", "det_pre", "det_post")

    def __init__(self, pre, post, det_pre, det_post):
        self.pre = pre            # trunk pre-activations per layer
        self.post = post          # trunk activations per layer (post[0] is the input)
        self.det_pre = det_pre    # separate detector trunk (None when shared)
        self.det_post = det_post


@dataclass
class ForwardOutput:
    logits: np.ndarray
    detector_score: float
    cache: _Cache


def forward_batch(params: np.ndarray, arch: Architecture, X) -> tuple[np.ndarray, np.ndarray, _Cache]:
    """Batched forward pass; returns (logits (B,C), detector scores (B,), cache)."""
    params = _check_params(arch, params)
    X = _check_x(arch, X)
    lay = _layout(arch)
    post = [X]
    pre = []
    a = X
    for i in range(len(arch.hidden_sizes)):
        W = lay.view(params, f"trunk{i}.W")
        b = lay.view(params, f"trunk{i}.b")
        z = a @ W.T + b
        a = _act(z, arch.activation)
        pre.append(z)
        post.append(a)
    logits = a @ lay.view(params, "cls.W").T + lay.view(params, "cls.b")
    det_pre = det_post = None
    if arch.shared_trunk:
        det_in = a
    else:
        det_post = [X]
        det_pre = []
        da = X
        for i in range(len(arch.hidden_sizes)):
            W = lay.view(params, f"det_trunk{i}.W")
            b = lay.view(params, f"det_trunk{i}.b")
            z = da @ W.T + b
            da = _act(z, arch.activation)
            det_pre.append(z)
            det_post.append(da)
        det_in = da
    det = det_in @ lay.view(params, "det.W").T + lay.view(params, "det.b")
    return logits, det[:, 0], _Cache(pre, post, det_pre, det_post)


def forward(params: np.ndarray, arch: Architecture, x) -> ForwardOutput:
    logits, det, cache = forward_batch(params, arch, np.atleast_2d(x))
    return ForwardOutput(logits[0], float(det[0]), cache)


def predict_labels(params: np.ndarray, arch: Architecture, X) -> np.ndarray:
    """Argmax labels; ties resolve to the lowest class index."""
    logits, _, _ = forward_batch(params, arch, X)
    return np.argmax(logits, axis=1).astype(np.int32)


def predict_label(params: np.ndarray, arch: Architecture, x) -> int:
    return int(predict_labels(params, arch, np.atleast_2d(x))[0])


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _trunk_backprop(grad: np.ndarray, lay: _Layout, params, arch, cache: _Cache,
                    d_top: np.ndarray, prefix: str, weight: np.ndarray | None = None) -> None:
    """Accumulate mean (or weighted-sum) gradients for one trunk into `grad`.

    d_top: (B, width) gradient at the trunk output. weight: optional per-sample
    scale applied once at the top.
    """
    pre = cache.pre if prefix == "trunk" else cache.det_pre
    post = cache.post if prefix == "trunk" else cache.det_post
    d = d_top if weight is None else d_top * weight[:, None]
    for i in reversed(range(len(arch.hidden_sizes))):
        dz = d * _act_grad(pre[i], post[i + 1], arch.activation)
        gW = lay.view(grad, f"{prefix}{i}.W")
        gW += dz.T @ post[i]
        gb = lay.view(grad, f"{prefix}{i}.b")
        gb += dz.sum(axis=0)
        if i > 0:
            d = dz @ lay.view(params, f"{prefix}{i}.W")


def ce_values(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-sample cross-entropy against integer labels (stable log-softmax)."""
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return lse - z[np.arange(len(y)), y]


def ce_mean_and_grad(params, arch: Architecture, X, y) -> tuple[float, np.ndarray]:
    """Mean CE loss over the batch and its gradient w.r.t. all parameters."""
    params = _check_params(arch, params)
    y = np.asarray(y, dtype=np.int64)
    if np.any(y < 0) or np.any(y >= arch.num_classes):
        raise ValidationError("class index out of range")
    logits, _, cache = forward_batch(params, arch, X)
    B = len(y)
    p = softmax(logits)
    loss = float(ce_values(logits, y).mean())
    dlogits = p.copy()
    dlogits[np.arange(B), y] -= 1.0
    dlogits /= B
    lay = _layout(arch)
    grad = np.zeros_like(params)
    h = cache.post[-1]
    gW = lay.view(grad, "cls.W")
    gW += dlogits.T @ h
    gb = lay.view(grad, "cls.b")
    gb += dlogits.sum(axis=0)
    d_top = dlogits @ lay.view(params, "cls.W")
    _trunk_backprop(grad, lay, params, arch, cache, d_top, "trunk")
    return loss, grad


def ce_loss_and_grad(params, arch: Architecture, x, y: int) -> tuple[float, np.ndarray]:
    """Single-sample CE loss and analytic gradient."""
    return ce_mean_and_grad(params, arch, np.atleast_2d(x), np.asarray([y]))


def per_sample_ce_grads(params, arch: Architecture, X, y) -> np.ndarray:
    """Per-sample CE gradients, one flat row per input. Vectorized over the batch."""
    params = _check_params(arch, params)
    y = np.asarray(y, dtype=np.int64)
    if np.any(y < 0) or np.any(y >= arch.num_classes):
        raise ValidationError("class index out of range")
    logits, _, cache = forward_batch(params, arch, X)
    B = len(y)
    dlogits = softmax(logits)
    dlogits[np.arange(B), y] -= 1.0
    lay = _layout(arch)
    out = np.zeros((B, lay.total), dtype=np.float64)
    sl = lay.slices()
    h = cache.post[-1]
    out[:, sl["cls.W"]] = np.einsum("bc,bh->bch", dlogits, h).reshape(B, -1)
    out[:, sl["cls.b"]] = dlogits
    d = dlogits @ lay.view(params, "cls.W")
    for i in reversed(range(len(arch.hidden_sizes))):
        dz = d * _act_grad(cache.pre[i], cache.post[i + 1], arch.activation)
        out[:, sl[f"trunk{i}.W"]] = np.einsum("bo,bi->boi", dz, cache.post[i]).reshape(B, -1)
        out[:, sl[f"trunk{i}.b"]] = dz
        if i > 0:
            d = dz @ lay.view(params, f"trunk{i}.W")
    return out


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def detector_values(det_scores: np.ndarray, side: str) -> np.ndarray:
    """Smooth level-set penalty: sigmoid(-g) on the ID side, sigmoid(+g) on the OOD side."""
    if side == ID_POSITIVE:
        return _sigmoid(-det_scores)
    if side == OOD_NEGATIVE:
        return _sigmoid(det_scores)
    raise ValidationError(f"unknown detector side {side!r}")


def detector_mean_and_grad(params, arch: Architecture, X, side: str) -> tuple[float, np.ndarray]:
    """Mean detector loss over the batch and its gradient w.r.t. all parameters."""
    params = _check_params(arch, params)
    _, det, cache = forward_batch(params, arch, X)
    B = det.shape[0]
    losses = detector_values(det, side)
    # d loss / d g: -s(-g) s(g) on the ID side, +s(g) s(-g) on the OOD side.
    sign = -1.0 if side == ID_POSITIVE else 1.0
    dg = sign * _sigmoid(det) * _sigmoid(-det) / B
    lay = _layout(arch)
    grad = np.zeros_like(params)
    det_in = cache.post[-1] if arch.shared_trunk else cache.det_post[-1]
    gW = lay.view(grad, "det.W")
    gW += (dg[None, :] @ det_in)
    gb = lay.view(grad, "det.b")
    gb += dg.sum()
    d_top = dg[:, None] * lay.view(params, "det.W")
    prefix = "trunk" if arch.shared_trunk else "det_trunk"
    _trunk_backprop(grad, lay, params, arch, cache, d_top, prefix)
    return float(losses.mean()), grad


def detector_loss_and_grad(params, arch: Architecture, x, side: str) -> tuple[float, np.ndarray]:
    """Single-sample detector loss and analytic gradient."""
    return detector_mean_and_grad(params, arch, np.atleast_2d(x), side)


def save_model(path, arch: Architecture, params: np.ndarray) -> None:
    """Write a WNN1 checkpoint: magic, version, architecture JSON, then float64 values."""
    params = _check_params(arch, params)
    arch_json = json.dumps(arch.to_json_dict(), sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += _WNN_MAGIC
    blob += struct.pack("<II", _WNN_VERSION, len(arch_json))
    blob += arch_json
    blob += struct.pack("<Q", params.size)
    blob += params.astype("<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_model(path) -> tuple[Architecture, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: file too short for a WNN1 header")
    if raw[:4] != _WNN_MAGIC:
        raise FormatError(f"{path}: bad magic bytes")
    version, jlen = struct.unpack("<II", raw[4:12])
    if version != _WNN_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if len(raw) < 12 + jlen + 8:
        raise FormatError(f"{path}: truncated checkpoint")
    try:
        arch = Architecture.from_json_dict(json.loads(raw[12:12 + jlen].decode("utf-8")))
    except (json.JSONDecodeError, KeyError, ValueError) as e:
        raise FormatError(f"{path}: bad architecture blob: {e}") from e
    (p_count,) = struct.unpack("<Q", raw[12 + jlen:20 + jlen])
    expected = 20 + jlen + 8 * p_count
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    params = np.frombuffer(raw, dtype="<f8", count=p_count, offset=20 + jlen).copy()
    if p_count != arch.param_count:
        raise FormatError(f"{path}: parameter count does not match architecture")
    return arch, params
