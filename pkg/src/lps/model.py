"""Classifier head with a hand-written backward pass, SGD with momentum and checkpoints."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"LPSCKPT\x00"
CHECKPOINT_VERSION = 1


@dataclass
class ModelParams:
    """Linear head ``x @ W + b`` or ``tanh(x @ W1 + b1) @ W2 + b2`` when ``hidden`` is set."""

    D: int
    K: int
    hidden: int | None
    arrays: dict[str, np.ndarray]

    @property
    def names(self) -> tuple[str, ...]:
        return ("W", "b") if self.hidden is None else ("W1", "b1", "W2", "b2")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        if self.hidden is None:
            return {"W": (self.D, self.K), "b": (self.K,)}
        H = self.hidden
        return {"W1": (self.D, H), "b1": (H,), "W2": (H, self.K), "b2": (self.K,)}

    def __post_init__(self):
        expected = self.shapes()
        if set(self.arrays) != set(expected):
            raise ValueError(f"expected parameters {sorted(expected)}, got {sorted(self.arrays)}")
        for name, shape in expected.items():
            arr = np.asarray(self.arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            self.arrays[name] = arr

    def copy(self) -> "ModelParams":
        return ModelParams(self.D, self.K, self.hidden, {k: v.copy() for k, v in self.arrays.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([self.arrays[n].ravel() for n in self.names])

    def with_flat(self, vec: np.ndarray) -> "ModelParams":
        out, pos = {}, 0
        for name, shape in self.shapes().items():
            size = math.prod(shape)
            out[name] = np.asarray(vec[pos:pos + size], dtype=np.float64).reshape(shape).copy()
            pos += size
        return ModelParams(self.D, self.K, self.hidden, out)


def init_params(D: int, K: int, hidden: int | None, rng: np.random.Generator) -> ModelParams:
    """Weights ~ N(0, 1/fan_in), biases zero."""
    if hidden is None:
        arrays = {"W": rng.standard_normal((D, K)) / math.sqrt(D), "b": np.zeros(K)}
    else:
        arrays = {
            "W1": rng.standard_normal((D, hidden)) / math.sqrt(D),
            "b1": np.zeros(hidden),
            "W2": rng.standard_normal((hidden, K)) / math.sqrt(hidden),
            "b2": np.zeros(K),
        }
    return ModelParams(D, K, hidden, arrays)


def _check_input(params: ModelParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.D:
        raise ValueError(f"expected input of shape (B, {params.D}), got {x.shape}")
    return x


def forward(params: ModelParams, x) -> np.ndarray:
    x = _check_input(params, x)
    a = params.arrays
    if params.hidden is None:
        return x @ a["W"] + a["b"]
    return np.tanh(x @ a["W1"] + a["b1"]) @ a["W2"] + a["b2"]


def backward(params: ModelParams, x, grad_logits) -> dict[str, np.ndarray]:
    """Gradients of ``sum(forward(x) * grad_logits)`` with respect to each parameter."""
    x = _check_input(params, x)
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.shape != (x.shape[0], params.K):
        raise ValueError(f"grad_logits shape {g.shape} != {(x.shape[0], params.K)}")
    a = params.arrays
    if params.hidden is None:
        return {"W": x.T @ g, "b": g.sum(axis=0)}
    h = np.tanh(x @ a["W1"] + a["b1"])
    dh = (g @ a["W2"].T) * (1.0 - h * h)
    return {"W1": x.T @ dh, "b1": dh.sum(axis=0), "W2": h.T @ g, "b2": g.sum(axis=0)}


def cosine_lr(t: int, T: int, lr0: float) -> float:
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t / T))


@dataclass
class OptimState:
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    T: int = 1
    t: int = 0
    buffers: dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(params: ModelParams, grads: dict[str, np.ndarray], opt: OptimState) -> ModelParams:
    """``v <- mu v + g + wd theta``; ``theta <- theta - lr(t) v``; then advances ``t``."""
    lr = cosine_lr(min(opt.t, opt.T), opt.T, opt.lr0)
    new = {}
    for name in params.names:
        theta = params.arrays[name]
        v = opt.buffers.get(name)
        if v is None:
            v = np.zeros_like(theta)
        v = opt.momentum * v + grads[name] + opt.weight_decay * theta
        opt.buffers[name] = v
        new[name] = theta - lr * v
    opt.t += 1
    return ModelParams(params.D, params.K, params.hidden, new)


# -- checkpoint format ----------------------------------------------------------
# magic (8 bytes) | version u32 LE | header length u32 LE | JSON header (UTF-8)
# | float64 LE arrays concatenated in header order


def save_checkpoint(params: ModelParams, path) -> None:
    header = {
        "D": params.D,
        "K": params.K,
        "hidden": params.hidden,
        "arrays": [{"name": n, "shape": list(params.arrays[n].shape)} for n in params.names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for n in params.names:
            fh.write(np.ascontiguousarray(params.arrays[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an lps checkpoint")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    pos = 16 + hlen
    arrays = {}
    for spec in header["arrays"]:
        size = math.prod(spec["shape"])
        chunk = data[pos:pos + 8 * size]
        if len(chunk) != 8 * size:
            raise ValueError(f"{path}: truncated array {spec['name']}")
        arrays[spec["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(spec["shape"]).astype(np.float64)
        pos += 8 * size
    return ModelParams(header["D"], header["K"], header["hidden"], arrays)
