"""Minimal dense reverse-mode differentiation over numpy arrays.

One Var per intermediate value; the backward pass walks the recorded
graph once in reverse topological order. Summation orders are fixed so
repeated runs are bit-identical.
"""
from __future__ import annotations

import json
import math
from typing import Callable

import numpy as np

from .errors import NonFiniteError, ShapeError

CKPT_FORMAT = "motifx-ckpt/1"


class Var:
    """A node in the computation graph: value, accumulated grad, backward closure."""

    __slots__ = ("value", "grad", "_parents", "_vjp")

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


def const(x) -> Var:
    return Var(x)


def _v(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _acc(p: Var, g: np.ndarray) -> None:
    # never mutate in place: g may alias a child's grad buffer
    p.grad = g if p.grad is None else p.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(root: Var) -> None:
    """Seed the root with 1 and accumulate grads into every reachable Var."""
    if root.value.ndim != 0 and root.value.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.value.shape}")
    topo: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(topo):
        if node._vjp is not None and node.grad is not None:
            node._vjp(node.grad)


# -- primitives ---------------------------------------------------------------

def add(a, b) -> Var:
    a, b = _v(a), _v(b)
    try:
        val = a.value + b.value
    except ValueError as exc:
        raise ShapeError(f"add: {a.value.shape} vs {b.value.shape}") from exc

    def vjp(g):
        _acc(a, _unbroadcast(g, a.value.shape))
        _acc(b, _unbroadcast(g, b.value.shape))
    return Var(val, (a, b), vjp)


def sub(a, b) -> Var:
    a, b = _v(a), _v(b)
    val = a.value - b.value

    def vjp(g):
        _acc(a, _unbroadcast(g, a.value.shape))
        _acc(b, _unbroadcast(-g, b.value.shape))
    return Var(val, (a, b), vjp)


def neg(a) -> Var:
    a = _v(a)

    def vjp(g):
        _acc(a, -g)
    return Var(-a.value, (a,), vjp)


def mul(a, b) -> Var:
    a, b = _v(a), _v(b)
    try:
        val = a.value * b.value
    except ValueError as exc:
        raise ShapeError(f"mul: {a.value.shape} vs {b.value.shape}") from exc

    def vjp(g):
        _acc(a, _unbroadcast(g * b.value, a.value.shape))
        _acc(b, _unbroadcast(g * a.value, b.value.shape))
    return Var(val, (a, b), vjp)


def div(a, b) -> Var:
    a, b = _v(a), _v(b)
    val = a.value / b.value

    def vjp(g):
        _acc(a, _unbroadcast(g / b.value, a.value.shape))
        _acc(b, _unbroadcast(-g * a.value / (b.value ** 2), b.value.shape))
    return Var(val, (a, b), vjp)


def scale(a, c: float) -> Var:
    a = _v(a)

    def vjp(g):
        _acc(a, g * c)
    return Var(a.value * c, (a,), vjp)


def matmul(a, b) -> Var:
    a, b = _v(a), _v(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: {a.value.shape} @ {b.value.shape}")
    val = a.value @ b.value

    def vjp(g):
        _acc(a, g @ b.value.T)
        _acc(b, a.value.T @ g)
    return Var(val, (a, b), vjp)


def relu(a) -> Var:
    a = _v(a)
    mask = a.value > 0

    def vjp(g):
        _acc(a, g * mask)
    return Var(a.value * mask, (a,), vjp)


def sigmoid(a) -> Var:
    a = _v(a)
    x = a.value
    # piecewise form avoids overflow in exp for large |x|
    pos = 1.0 / (1.0 + np.exp(-np.where(x >= 0, x, 0.0)))
    ex = np.exp(np.where(x < 0, x, 0.0))
    s = np.where(x >= 0, pos, ex / (1.0 + ex))

    def vjp(g):
        _acc(a, g * s * (1.0 - s))
    return Var(s, (a,), vjp)


def exp(a) -> Var:
    a = _v(a)
    val = np.exp(a.value)

    def vjp(g):
        _acc(a, g * val)
    return Var(val, (a,), vjp)


def log(a) -> Var:
    a = _v(a)

    def vjp(g):
        _acc(a, g / a.value)
    return Var(np.log(a.value), (a,), vjp)


def cos(a) -> Var:
    a = _v(a)

    def vjp(g):
        _acc(a, -g * np.sin(a.value))
    return Var(np.cos(a.value), (a,), vjp)


def sin(a) -> Var:
    a = _v(a)

    def vjp(g):
        _acc(a, g * np.cos(a.value))
    return Var(np.sin(a.value), (a,), vjp)


def clip(a, lo: float, hi: float) -> Var:
    """Hard clamp with pass-through gradient strictly inside the range."""
    a = _v(a)
    val = np.clip(a.value, lo, hi)
    inside = (a.value > lo) & (a.value < hi)

    def vjp(g):
        _acc(a, g * inside)
    return Var(val, (a,), vjp)


def vsum(a, axis=None, keepdims: bool = False) -> Var:
    a = _v(a)
    val = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _acc(a, np.broadcast_to(gg, a.value.shape))
    return Var(val, (a,), vjp)


def vmean(a, axis=None, keepdims: bool = False) -> Var:
    a = _v(a)
    val = a.value.mean(axis=axis, keepdims=keepdims)
    n = a.value.size if axis is None else a.value.shape[axis]

    def vjp(g):
        gg = g / n
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _acc(a, np.broadcast_to(gg, a.value.shape))
    return Var(val, (a,), vjp)


def reshape(a, shape) -> Var:
    a = _v(a)

    def vjp(g):
        _acc(a, g.reshape(a.value.shape))
    return Var(a.value.reshape(shape), (a,), vjp)


def concat(parts, axis: int = 0) -> Var:
    parts = [_v(p) for p in parts]
    val = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _acc(p, g[tuple(sl)])
    return Var(val, tuple(parts), vjp)


def interleave_cols(a, b) -> Var:
    """Columns of a and b woven as [a0, b0, a1, b1, ...]."""
    a, b = _v(a), _v(b)
    if a.value.shape != b.value.shape:
        raise ShapeError(f"interleave_cols: {a.value.shape} vs {b.value.shape}")
    n, d = a.value.shape
    val = np.empty((n, 2 * d))
    val[:, 0::2] = a.value
    val[:, 1::2] = b.value

    def vjp(g):
        _acc(a, g[:, 0::2])
        _acc(b, g[:, 1::2])
    return Var(val, (a, b), vjp)


def gather_rows(a, idx) -> Var:
    a = _v(a)
    idx = np.asarray(idx, dtype=np.int64)
    val = a.value[idx]

    def vjp(g):
        full = np.zeros_like(a.value)
        np.add.at(full, idx, g)
        _acc(a, full)
    return Var(val, (a,), vjp)


def segment_sum(a, seg, num: int) -> Var:
    """Row-wise scatter-add of a into `num` buckets given by seg (deterministic order)."""
    a = _v(a)
    seg = np.asarray(seg, dtype=np.int64)
    out = np.zeros((num,) + a.value.shape[1:])
    np.add.at(out, seg, a.value)

    def vjp(g):
        _acc(a, g[seg])
    return Var(out, (a,), vjp)


def segment_mean(a, seg, num: int) -> Var:
    counts = np.bincount(np.asarray(seg, dtype=np.int64), minlength=num).astype(np.float64)
    counts[counts == 0] = 1.0
    s = segment_sum(a, seg, num)
    denom = counts.reshape((num,) + (1,) * (s.value.ndim - 1))
    return mul(s, const(1.0 / denom))


def segment_max(a, seg, num: int, floor: float = 0.0) -> Var:
    """Per-bucket max of a 1-d vector with an implicit floor for empty buckets.

    Gradient flows to the first element attaining each bucket's max
    (none if the floor wins), which keeps backward deterministic.
    """
    a = _v(a)
    if a.value.ndim != 1:
        raise ShapeError(f"segment_max expects 1-d input, got {a.value.shape}")
    seg = np.asarray(seg, dtype=np.int64)
    out = np.full(num, floor, dtype=np.float64)
    np.maximum.at(out, seg, a.value)
    sentinel = len(seg)
    winner = np.full(num, sentinel, dtype=np.int64)
    hits = np.nonzero(a.value == out[seg])[0]
    np.minimum.at(winner, seg[hits], hits)

    def vjp(g):
        full = np.zeros_like(a.value)
        ok = winner < sentinel
        np.add.at(full, winner[ok], g[ok])
        _acc(a, full)
    return Var(out, (a,), vjp)


def softmax(a) -> Var:
    """Stable softmax over a 1-d vector (max shift treated as a constant)."""
    a = _v(a)
    shift = sub(a, const(float(np.max(a.value))))
    e = exp(shift)
    return div(e, vsum(e))


def affine(x, w, b) -> Var:
    return add(matmul(x, w), b)


# -- parameters, tape, optimizer ----------------------------------------------

def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def log_spaced_freqs(t_max: float, d: int) -> np.ndarray:
    """Frequencies log-spaced in [1/t_max, 1], covering slow to fast dynamics."""
    t_max = max(float(t_max), 1.0)
    return np.logspace(-math.log10(t_max), 0.0, d)


class ParameterStore:
    """Named float64 arrays with frozen shapes plus free-form metadata."""

    def __init__(self):
        self.arrays: dict[str, np.ndarray] = {}
        self.meta: dict = {}

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.arrays:
            raise ValueError(f"parameter {name!r} already exists")
        arr = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"parameter {name!r} initialized with non-finite values")
        self.arrays[name] = arr

    def add_affine(self, name: str, fan_in: int, fan_out: int,
                   rng: np.random.Generator, zero: bool = False) -> None:
        if zero:
            self.add(f"{name}.w", np.zeros((fan_in, fan_out)))
        else:
            self.add(f"{name}.w", glorot_uniform(rng, fan_in, fan_out))
        self.add(f"{name}.b", np.zeros(fan_out))

    def copy(self) -> "ParameterStore":
        dup = ParameterStore()
        for k, v in self.arrays.items():
            dup.arrays[k] = v.copy()
        dup.meta = json.loads(json.dumps(self.meta))
        return dup

    def save(self, path) -> None:
        payload = {"format": CKPT_FORMAT, "meta": self.meta,
                   "arrays": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                              for k, v in sorted(self.arrays.items())}}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, separators=(",", ":"), sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ParameterStore":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("format") != CKPT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {payload.get('format')!r}")
        store = cls()
        store.meta = payload["meta"]
        for name, spec in payload["arrays"].items():
            store.arrays[name] = np.array(spec["data"], dtype=np.float64).reshape(spec["shape"])
        return store


class ConstTape:
    """Tape-shaped parameter access that yields constants (frozen model, no gradients)."""

    def __init__(self, store: "ParameterStore"):
        self.store = store
        self._cache: dict[str, Var] = {}

    def param(self, name: str) -> Var:
        leaf = self._cache.get(name)
        if leaf is None:
            leaf = Var(self.store.arrays[name])
            leaf._vjp = None
            self._cache[name] = leaf
        return leaf

    def affine(self, x, name: str) -> Var:
        return affine(x, self.param(f"{name}.w"), self.param(f"{name}.b"))


class Tape:
    """One forward pass against a ParameterStore; gradients of unused parameters are zero."""

    def __init__(self, store: ParameterStore):
        self.store = store
        self._leaves: dict[str, Var] = {}

    def param(self, name: str) -> Var:
        leaf = self._leaves.get(name)
        if leaf is None:
            leaf = Var(self.store.arrays[name])
            self._leaves[name] = leaf
        return leaf

    def affine(self, x, name: str) -> Var:
        return affine(x, self.param(f"{name}.w"), self.param(f"{name}.b"))

    def gradients(self, loss: Var) -> dict[str, np.ndarray]:
        backward(loss)
        out = {}
        for name, arr in self.store.arrays.items():
            leaf = self._leaves.get(name)
            if leaf is None or leaf.grad is None:
                out[name] = np.zeros_like(arr)
            else:
                out[name] = leaf.grad
        return out


def adam_init(store: ParameterStore) -> dict:
    return {"step": 0,
            "m": {k: np.zeros_like(v) for k, v in store.arrays.items()},
            "v": {k: np.zeros_like(v) for k, v in store.arrays.items()}}


def optimizer_step(store: ParameterStore, grads: dict, state: dict,
                   lr: float = 1e-3, betas: tuple = (0.9, 0.999), eps: float = 1e-8) -> dict:
    """In-place moment-adaptive update; refuses non-finite gradients."""
    b1, b2 = betas
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(
                f"non-finite gradient for {name!r}: "
                f"min={np.nanmin(g)!r} max={np.nanmax(g)!r}")
    state["step"] += 1
    t = state["step"]
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        m = state["m"][name]
        v = state["v"][name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        store.arrays[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def grad_check(build_loss: Callable[[Tape], Var], store: ParameterStore,
               eps: float = 1e-5, rng: np.random.Generator | None = None,
               max_coords: int = 8) -> float:
    """Max relative error between tape gradients and central differences.

    Arrays larger than `max_coords` are spot-checked at random coordinates.
    The relative error is |ad - fd| / max(1, |ad|, |fd|) so tiny gradients
    are compared absolutely.
    """
    rng = rng or np.random.default_rng(0)
    tape = Tape(store)
    grads = tape.gradients(build_loss(tape))
    worst = 0.0
    for name, arr in store.arrays.items():
        flat = arr.reshape(-1)
        if flat.size <= max_coords:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        gflat = grads[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(build_loss(Tape(store)).value)
            flat[i] = orig - eps
            f_minus = float(build_loss(Tape(store)).value)
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            ad = float(gflat[i])
            err = abs(ad - fd) / max(1.0, abs(ad), abs(fd))
            worst = max(worst, err)
    return worst
