"""Small dense-network toolkit on numpy float64: layers, losses, Adam, checkpoints.

Layers work on a single vector ``(in,)`` or a batch ``(batch, in)``. Backward
passes *accumulate* into ``Parameter.grad``; call ``zero_grad`` between steps.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class Parameter:
    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Dense:
    """y = x @ W + b, with W stored as (in, out)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str = "dense"):
        self.n_in = n_in
        self.n_out = n_out
        self.W = Parameter(f"{name}.W", glorot_uniform(rng, n_in, n_out))
        self.b = Parameter(f"{name}.b", np.zeros(n_out))
        self._x = None

    def parameters(self):
        return [self.W, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=DTYPE)
        if x.shape[-1:] != (self.n_in,) or x.ndim > 2:
            raise ShapeError(f"{self.W.name}: expected (..., {self.n_in}) input, got {x.shape}")
        self._x = x
        return x @ self.W.value + self.b.value

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError(f"{self.W.name}: backward called before forward")
        x = self._x
        if grad_out.shape != x.shape[:-1] + (self.n_out,):
            raise ShapeError(f"{self.W.name}: grad shape {grad_out.shape} does not match output")
        if x.ndim == 1:
            self.W.grad += np.outer(x, grad_out)
            self.b.grad += grad_out
        else:
            self.W.grad += x.T @ grad_out
            self.b.grad += grad_out.sum(axis=0)
        return grad_out @ self.W.value.T


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    # derivative at exactly 0 is taken as 0
    return grad_out * (x > 0)


class Embedding:
    """Lookup table; equivalent to a bias-free one-hot dense layer."""

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator, name: str = "embed", scale: float = 0.05):
        self.vocab_size = vocab_size
        self.dim = dim
        self.table = Parameter(f"{name}.table", rng.uniform(-scale, scale, size=(vocab_size, dim)))
        self._idx = None

    def parameters(self):
        return [self.table]

    def forward(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.vocab_size):
            raise IndexError(f"{self.table.name}: index out of range [0, {self.vocab_size})")
        self._idx = idx
        return self.table.value[idx].copy()

    def backward(self, grad_out: np.ndarray) -> None:
        if self._idx is None:
            raise RuntimeError(f"{self.table.name}: backward called before forward")
        np.add.at(self.table.grad, self._idx, grad_out)


def embed(table: np.ndarray, index: int) -> np.ndarray:
    if not 0 <= index < table.shape[0]:
        raise IndexError(f"row {index} out of range for table with {table.shape[0]} rows")
    return table[index].copy()


def embed_backward(table_grad: np.ndarray, index, grad_out: np.ndarray) -> None:
    np.add.at(table_grad, np.asarray(index), grad_out)


def _check_pair(pred, target):
    pred = np.asarray(pred, dtype=DTYPE).reshape(-1)
    target = np.asarray(target, dtype=DTYPE).reshape(-1)
    if pred.shape != target.shape:
        raise ShapeError(f"pred/target length mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValueError("loss of an empty batch is undefined")
    return pred, target


def mae_loss(pred, target):
    """Mean absolute error and its gradient w.r.t. ``pred``."""
    pred, target = _check_pair(pred, target)
    diff = pred - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def mse_loss(pred, target):
    pred, target = _check_pair(pred, target)
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


LOSSES = {"mae": mae_loss, "mse": mse_loss}


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list, grads: list, state: AdamState) -> None:
    """In-place Adam update of ``params`` (list of arrays) using ``grads``."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("Adam state does not match parameter list")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or m.shape != p.shape:
            raise ShapeError(f"parameter/grad shape mismatch {p.shape} vs {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


class Adam:
    def __init__(self, parameters: list[Parameter], lr: float = 0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.parameters = list(parameters)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self):
        adam_step([p.value for p in self.parameters], [p.grad for p in self.parameters], self.state)

    def zero_grad(self):
        for p in self.parameters:
            p.zero_grad()


def finite_difference_grad(f, x: np.ndarray, index, h: float = 1e-5) -> float:
    """Central difference of scalar ``f()`` w.r.t. ``x[index]``, perturbing ``x`` in place."""
    old = x[index]
    x[index] = old + h
    fp = f()
    x[index] = old - h
    fm = f()
    x[index] = old
    return (fp - fm) / (2.0 * h)


CHECKPOINT_SCHEMA = 1


def _encode(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _decode(s: str, shape) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype="<f8").reshape(shape).astype(DTYPE)


def save_checkpoint(path, parameters: list[Parameter], config: dict, vocab_sizes: dict) -> None:
    doc = {
        "schema_version": CHECKPOINT_SCHEMA,
        "config": config,
        "vocab_sizes": vocab_sizes,
        "parameters": [
            {"name": p.name, "shape": list(p.shape), "data": _encode(p.value)} for p in parameters
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def read_checkpoint(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != CHECKPOINT_SCHEMA:
        raise ValueError(f"{path}: unsupported checkpoint schema {doc.get('schema_version')!r}")
    return doc


def load_parameters(doc: dict, parameters: list[Parameter]) -> None:
    """Copy checkpoint arrays into ``parameters``; names and shapes must match exactly."""
    stored = {entry["name"]: entry for entry in doc["parameters"]}
    names = [p.name for p in parameters]
    if sorted(stored) != sorted(names):
        raise ShapeError(f"checkpoint parameters {sorted(stored)} do not match model {sorted(names)}")
    for p in parameters:
        entry = stored[p.name]
        if tuple(entry["shape"]) != p.shape:
            raise ShapeError(f"{p.name}: checkpoint shape {tuple(entry['shape'])} != model shape {p.shape}")
        p.value[...] = _decode(entry["data"], p.shape)
