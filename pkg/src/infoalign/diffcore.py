"""Minimal dense-array reverse-mode autodiff, parameter store, and Adam.

64-bit accumulation is the default (the gradient checks demand it); float32
storage is opt-in per ParamStore. The primitive set is deliberately small:
matmul, broadcast add/mul, elementwise (relu, sigmoid, exp, log, tanh,
softplus), reductions, concat, row gather and index-scatter-add for message
passing, and clip. Every primitive has a finite-difference test.
"""

from __future__ import annotations

import json
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import serialize
from .errors import ShapeMismatchError

MAGIC = b"IAPT"

# Debug assertion: ops refuse to emit NaN/Inf when enabled.
CHECK_FINITE = True

# exp/sigmoid inputs are clamped here to avoid overflow; log inputs are
# clamped to exp(-_EXP_CLAMP) away from zero.
_EXP_CLAMP = 36.7


def _check(data: np.ndarray):
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by a primitive op")


class Tensor:
    """Node in the computation tape."""

    __slots__ = ("data", "grad", "_parents", "_bw")

    def __init__(self, data, parents=(), bw=None, dtype=np.float64):
        self.data = np.asarray(data, dtype=dtype)
        _check(self.data)
        self.grad: Optional[np.ndarray] = None
        self._parents = parents
        self._bw = bw

    @property
    def shape(self):
        return self.data.shape

    # --- graph traversal ---

    def backward(self, seed: Optional[np.ndarray] = None):
        if seed is None:
            seed = np.ones_like(self.data)
        topo: List[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        for node in topo:
            node.grad = np.zeros_like(node.data)
        self.grad = np.asarray(seed, dtype=self.data.dtype)
        for node in reversed(topo):
            if node._bw is not None:
                node._bw(node.grad)

    # --- operator sugar ---

    def __add__(self, other):
        return add(self, _lift(other, self.data.dtype))

    def __radd__(self, other):
        return add(_lift(other, self.data.dtype), self)

    def __sub__(self, other):
        return add(self, neg(_lift(other, self.data.dtype)))

    def __rsub__(self, other):
        return add(_lift(other, self.data.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, _lift(other, self.data.dtype))

    def __rmul__(self, other):
        return mul(_lift(other, self.data.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def item(self) -> float:
        return float(self.data)


def _lift(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x), dtype=dtype)


def constant(x, dtype=np.float64) -> Tensor:
    return Tensor(np.asarray(x), dtype=dtype)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum grad over the dimensions that broadcasting expanded."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# --- primitives --------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeMismatchError(f"add: {a.shape} vs {b.shape}") from exc
    out = Tensor(data, (a, b))

    def bw(g):
        a.grad += _unbroadcast(g, a.shape)
        b.grad += _unbroadcast(g, b.shape)

    out._bw = bw
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, (a,))
    out._bw = lambda g: a.grad.__iadd__(-g)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeMismatchError(f"mul: {a.shape} vs {b.shape}") from exc
    out = Tensor(data, (a, b))

    def bw(g):
        a.grad += _unbroadcast(g * b.data, a.shape)
        b.grad += _unbroadcast(g * a.data, b.shape)

    out._bw = bw
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, (a, b))

    def bw(g):
        a.grad += g @ b.data.T
        b.grad += a.data.T @ g

    out._bw = bw
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), (a,))
    # subgradient at 0 is 0
    out._bw = lambda g: a.grad.__iadd__(g * (a.data > 0))
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = np.clip(a.data, -_EXP_CLAMP, _EXP_CLAMP)
    s = 1.0 / (1.0 + np.exp(-x))
    out = Tensor(s, (a,))
    out._bw = lambda g: a.grad.__iadd__(g * s * (1.0 - s))
    return out


def exp(a: Tensor) -> Tensor:
    e = np.exp(np.clip(a.data, -_EXP_CLAMP, _EXP_CLAMP))
    out = Tensor(e, (a,))
    out._bw = lambda g: a.grad.__iadd__(g * e)
    return out


def log(a: Tensor) -> Tensor:
    x = np.maximum(a.data, np.exp(-_EXP_CLAMP))
    out = Tensor(np.log(x), (a,))
    out._bw = lambda g: a.grad.__iadd__(g / x)
    return out


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    out = Tensor(t, (a,))
    out._bw = lambda g: a.grad.__iadd__(g * (1.0 - t * t))
    return out


def softplus(a: Tensor) -> Tensor:
    out = Tensor(np.logaddexp(0.0, a.data), (a,))
    s = 1.0 / (1.0 + np.exp(-np.clip(a.data, -_EXP_CLAMP, _EXP_CLAMP)))
    out._bw = lambda g: a.grad.__iadd__(g * s)
    return out


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), (a,))

    def bw(g):
        if axis is None:
            a.grad += np.broadcast_to(g, a.shape)
        else:
            gexp = g if keepdims else np.expand_dims(g, axis)
            a.grad += np.broadcast_to(gexp, a.shape)

    out._bw = bw
    return out


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis, keepdims), constant(1.0 / n, a.data.dtype))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), tuple(parts))
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            p.grad += g[tuple(sl)]

    out._bw = bw
    return out


def gather_rows(a: Tensor, index) -> Tensor:
    """out[i] = a[index[i]]; rows may repeat."""
    index = np.asarray(index, dtype=np.intp)
    out = Tensor(a.data[index], (a,))

    def bw(g):
        np.add.at(a.grad, index, g)

    out._bw = bw
    return out


def scatter_add_rows(a: Tensor, index, num_rows: int) -> Tensor:
    """out[k] = sum of a[i] over i with index[i] == k (message aggregation)."""
    index = np.asarray(index, dtype=np.intp)
    if len(index) != a.shape[0]:
        raise ShapeMismatchError(f"scatter_add: {len(index)} indices for {a.shape[0]} rows")
    data = np.zeros((num_rows,) + a.shape[1:], dtype=a.data.dtype)
    np.add.at(data, index, a.data)
    out = Tensor(data, (a,))
    out._bw = lambda g: a.grad.__iadd__(g[index])
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp with pass-through gradient inside [lo, hi], zero outside."""
    out = Tensor(np.clip(a.data, lo, hi), (a,))
    mask = (a.data >= lo) & (a.data <= hi)
    out._bw = lambda g: a.grad.__iadd__(g * mask)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), (a,))
    out._bw = lambda g: a.grad.__iadd__(g.reshape(a.shape))
    return out


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Elementwise binary cross-entropy for soft targets in [0, 1].

    softplus(l) - l * y, the numerically stable form; summing is left to the
    caller.
    """
    y = constant(np.asarray(targets), logits.data.dtype)
    if y.shape != logits.shape:
        raise ShapeMismatchError(f"bce: logits {logits.shape} vs targets {y.shape}")
    return softplus(logits) - mul(logits, y)


# --- parameters, MLP, optimizer ----------------------------------------------

class ParamStore:
    """Named parameter arrays with gradient slots and Adam moments.

    Weight init is uniform(+-sqrt(6 / (fan_in + fan_out))), biases zero, from
    a Philox stream keyed by the seed, so checkpoints are comparable across
    runs and platforms.
    """

    def __init__(self, seed: int = 0, dtype=np.float64):
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}
        self.step = 0
        self._rng = np.random.Generator(np.random.Philox(key=[self.seed & ((1 << 64) - 1), 0]))

    def add(self, name: str, shape, init: str = "glorot") -> np.ndarray:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already exists")
        shape = tuple(shape)
        if init == "glorot":
            fan_in = shape[0] if len(shape) > 1 else shape[0]
            fan_out = shape[1] if len(shape) > 1 else shape[0]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            arr = self._rng.uniform(-limit, limit, size=shape)
        elif init == "zeros":
            arr = np.zeros(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.params[name] = arr.astype(self.dtype)
        self.grads[name] = np.zeros(shape, dtype=self.dtype)
        self._m[name] = np.zeros(shape, dtype=self.dtype)
        self._v[name] = np.zeros(shape, dtype=self.dtype)
        return self.params[name]

    def has(self, name: str) -> bool:
        return name in self.params

    def bind(self) -> Dict[str, Tensor]:
        """Leaf tensors for one forward/backward pass."""
        return {name: Tensor(arr, dtype=self.dtype) for name, arr in self.params.items()}

    def accumulate(self, bound: Dict[str, Tensor], scale: float = 1.0):
        """Add the bound leaves' gradients into the store's gradient slots."""
        for name, leaf in bound.items():
            if leaf.grad is not None:
                self.grads[name] += scale * leaf.grad

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0.0


def init_mlp(store: ParamStore, prefix: str, sizes: Sequence[int]):
    """Affine stack parameters: sizes = [in, hidden..., out]."""
    for i in range(len(sizes) - 1):
        store.add(f"{prefix}.w{i}", (sizes[i], sizes[i + 1]))
        store.add(f"{prefix}.b{i}", (sizes[i + 1],), init="zeros")


def mlp_forward(bound: Dict[str, Tensor], prefix: str, x: Tensor,
                activation: str = "relu") -> Tensor:
    """Affine + activation stack; the final layer stays linear."""
    act = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}[activation]
    i = 0
    h = x
    while f"{prefix}.w{i}" in bound:
        last = f"{prefix}.w{i + 1}" not in bound
        h = add(matmul(h, bound[f"{prefix}.w{i}"]), bound[f"{prefix}.b{i}"])
        if not last:
            h = act(h)
        i += 1
    if i == 0:
        raise KeyError(f"no parameters found under prefix {prefix!r}")
    return h


def adam_step(store: ParamStore, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam update over all parameters, then grad reset."""
    store.step += 1
    t = store.step
    for name, p in store.params.items():
        g = store.grads[name]
        m = store._m[name]
        v = store._v[name]
        m[...] = beta1 * m + (1 - beta1) * g
        v[...] = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        p -= lr * mhat / (np.sqrt(vhat) + eps)
    store.zero_grads()


# --- checkpoints --------------------------------------------------------------

def save_params(path, store: ParamStore, manifest: Optional[dict] = None):
    """Checkpoint: manifest JSON + raw little-endian arrays; load is bit-exact."""
    names = sorted(store.params)
    meta = {
        "manifest": manifest or {},
        "names": names,
        "dtype": store.dtype.str,
        "seed": store.seed,
        "step": store.step,
    }
    arrays = []
    for name in names:
        arrays.append(store.params[name])
    for name in names:
        arrays.append(store._m[name])
    for name in names:
        arrays.append(store._v[name])
    serialize.write_container(path, MAGIC, meta, arrays)


def load_params(path):
    """Returns (ParamStore, manifest dict)."""
    meta, arrays = serialize.read_container(path, MAGIC)
    store = ParamStore(seed=meta["seed"], dtype=np.dtype(meta["dtype"]))
    store.step = meta["step"]
    names = meta["names"]
    k = len(names)
    for i, name in enumerate(names):
        store.params[name] = arrays[i].astype(store.dtype)
        store.grads[name] = np.zeros_like(store.params[name])
        store._m[name] = arrays[k + i].astype(store.dtype)
        store._v[name] = arrays[2 * k + i].astype(store.dtype)
    return store, meta["manifest"]


def manifest_of(path) -> dict:
    meta, _ = serialize.read_container(path, MAGIC)
    return meta["manifest"]
