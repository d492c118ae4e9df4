"""Dense numpy tensors with a reverse-mode tape.

Operations executed inside an active :class:`Tape` that touch a tensor with
``requires_grad`` are recorded; :meth:`Tape.backward` replays the records in
reverse. Outside a tape, operations are plain numpy evaluation.
"""
from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .kernels import scatter_add_rows

DTYPE = np.float64
CHECKPOINT_FORMAT = "rpcir-params"
CHECKPOINT_VERSION = 1


class DimensionError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index_select(self, idx)


class Parameter(Tensor):
    __slots__ = ("trainable",)

    def __init__(self, data, name: str, trainable: bool = True):
        super().__init__(np.array(data, dtype=DTYPE), requires_grad=trainable, name=name)
        self.trainable = trainable


# ---------------------------------------------------------------------------
# tape

_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


class Tape:
    """Records differentiable operations for one forward pass."""

    def __init__(self):
        self.records: list[tuple[Tensor, tuple, Callable]] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def backward(self, loss: Tensor, params: Iterable[Parameter] | dict | None = None) -> dict[str, np.ndarray]:
        """Gradients of scalar ``loss`` for every trainable parameter (zeros if unreachable)."""
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, fn in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for x, gx in zip(inputs, fn(g)):
                if gx is None or not x.requires_grad:
                    continue
                key = id(x)
                if key in grads:
                    grads[key] = grads[key] + gx
                else:
                    grads[key] = gx
        if params is None:
            return {}
        if isinstance(params, dict):
            params = params.values()
        out = {}
        for p in params:
            if not p.trainable:
                continue
            g = grads.get(id(p))
            out[p.name] = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=DTYPE).reshape(p.shape)
        return out


def active_tape() -> Tape | None:
    s = _stack()
    return s[-1] if s else None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data, inputs: tuple, backward: Callable) -> Tensor:
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(x.requires_grad for x in inputs):
        out.requires_grad = True
        tape.records.append((out, inputs, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _record(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def sigmoid(x: Tensor) -> Tensor:
    y = np.empty_like(x.data)
    pos = x.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    y[~pos] = e / (1.0 + e)
    return _record(y, (x,), lambda g: (g * y * (1.0 - y),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _record(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _record(np.log(xd), (x,), lambda g: (g / xd,))


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), stable for large |x|."""
    xd = x.data
    y = np.logaddexp(0.0, xd)

    def back(g):
        s = np.empty_like(xd)
        pos = xd >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
        e = np.exp(xd[~pos])
        s[~pos] = e / (1.0 + e)
        return (g * s,)

    return _record(y, (x,), back)


def dropout(x: Tensor, mask, rate: float) -> Tensor:
    """Apply a supplied keep-mask with inverted scaling; rate 0 is the identity."""
    if rate == 0.0:
        return x
    m = np.asarray(mask, dtype=DTYPE)
    if m.shape != x.shape:
        m = np.broadcast_to(m.reshape(m.shape + (1,) * (x.data.ndim - m.ndim)), x.shape)
    scale = m / (1.0 - rate)
    return _record(x.data * scale, (x,), lambda g: (g * scale,))


# ---------------------------------------------------------------------------
# reductions and shape


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = x.shape

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(x.data.sum(axis=axis), (x,), back)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    if n == 0:
        raise DimensionError("mean: empty reduction")
    return mul(sum(x, axis), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor) -> Tensor:
    return _record(x.data.T, (x,), lambda g: (g.T,))


def concat(xs: list, axis: int = 0) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    ax = axis % xs[0].data.ndim
    for x in xs[1:]:
        if x.data.ndim != xs[0].data.ndim or any(
            s1 != s2 for i, (s1, s2) in enumerate(zip(x.shape, xs[0].shape)) if i != ax
        ):
            raise DimensionError(f"concat: incompatible shapes {[t.shape for t in xs]} on axis {axis}")
    sizes = [x.shape[ax] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    return _record(np.concatenate([x.data for x in xs], axis=ax), tuple(xs), lambda g: tuple(np.split(g, splits, axis=ax)))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


# ---------------------------------------------------------------------------
# indexing and segments


def index_select(x: Tensor, idx) -> Tensor:
    """Rows ``x[idx]`` (embedding lookup); gradients scatter back."""
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[0]
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise DimensionError(f"index_select: index out of range for {n} rows")
    idx = idx % n if idx.size else idx
    shape = x.shape

    def back(g):
        flat = g.reshape(idx.size, int(np.prod(shape[1:], dtype=np.int64)))
        return (scatter_add_rows(idx.reshape(-1), flat, n).reshape(shape),)

    return _record(x.data[idx], (x,), back)


def segment_sum(x: Tensor, segments, num_segments: int) -> Tensor:
    seg = np.asarray(segments, dtype=np.int64)
    if seg.shape[0] != x.shape[0]:
        raise DimensionError(f"segment_sum: {seg.shape[0]} segment ids for {x.shape[0]} rows")
    width = int(np.prod(x.shape[1:], dtype=np.int64))
    out = scatter_add_rows(seg, x.data.reshape(x.shape[0], width), num_segments).reshape((num_segments,) + x.shape[1:])
    return _record(out, (x,), lambda g: (g[seg],))


def segment_softmax(x: Tensor, segments, num_segments: int) -> Tensor:
    """Softmax of a 1-D score vector within each segment."""
    seg = np.asarray(segments, dtype=np.int64)
    xd = x.data
    if xd.ndim != 1 or seg.shape != xd.shape:
        raise DimensionError("segment_softmax: expects 1-D scores with matching segment ids")
    mx = np.full(num_segments, -np.inf)
    np.maximum.at(mx, seg, xd)
    e = np.exp(xd - mx[seg])
    den = np.bincount(seg, weights=e, minlength=num_segments)
    y = e / den[seg]

    def back(g):
        gy = np.bincount(seg, weights=g * y, minlength=num_segments)
        return (y * (g - gy[seg]),)

    return _record(y, (x,), back)


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax over the last axis."""
    xd = x.data
    e = np.exp(xd - xd.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)
    return _record(y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def log_softmax(x: Tensor) -> Tensor:
    xd = x.data
    m = xd.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(xd - m).sum(axis=-1, keepdims=True))
    y = xd - lse
    p = np.exp(y)
    return _record(y, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def gather_matmul(z: Tensor, w: Tensor, src, rel) -> Tensor:
    """Per-edge transform: ``out[e] = z[src[e]] @ w[rel[e]]`` with ``w`` of shape (R, d_in, d_out)."""
    src = np.asarray(src, dtype=np.int64)
    rel = np.asarray(rel, dtype=np.int64)
    if w.data.ndim != 3 or z.data.ndim != 2 or z.shape[1] != w.shape[1]:
        raise DimensionError(f"gather_matmul: node shape {z.shape} incompatible with weights {w.shape}")
    if rel.size and (rel.min() < 0 or rel.max() >= w.shape[0]):
        raise DimensionError("gather_matmul: relation id out of range")
    zd, wd = z.data, w.data
    out = np.zeros((len(src), wd.shape[2]), dtype=DTYPE)
    groups = [(r, np.flatnonzero(rel == r)) for r in np.unique(rel)]
    for r, ix in groups:
        out[ix] = zd[src[ix]] @ wd[r]

    def back(g):
        gz_edges = np.zeros((len(src), wd.shape[1]), dtype=DTYPE)
        gw = np.zeros_like(wd)
        for r, ix in groups:
            gz_edges[ix] = g[ix] @ wd[r].T
            gw[r] = zd[src[ix]].T @ g[ix]
        return scatter_add_rows(src, gz_edges, zd.shape[0]), gw

    return _record(out, (z, w), back)


def rowdot(a: Tensor, b: Tensor) -> Tensor:
    return sum(mul(a, b), axis=1)


# ---------------------------------------------------------------------------
# gradient checking


def numerical_gradient(f: Callable[[], Tensor], p: Parameter, step: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(p.data)
    flat = p.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = f().item()
        flat[i] = old - step
        fm = f().item()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * step)
    return grad


def gradient_check(
    f: Callable[[], Tensor], params, step: float = 1e-5, tolerance: float = 1e-4, floor: float = 1e-6
) -> dict:
    """Compare tape gradients against central differences, per parameter.

    The error for a parameter is ``max|analytic - numeric| / max(max|analytic|,
    max|numeric|, floor)``.
    """
    if isinstance(params, dict):
        params = list(params.values())
    with Tape() as tape:
        loss = f()
    analytic = tape.backward(loss, params)
    rows = {}
    for p in params:
        if not p.trainable:
            continue
        a = analytic[p.name]
        n = numerical_gradient(f, p, step)
        scale = max(float(np.abs(a).max(initial=0.0)), float(np.abs(n).max(initial=0.0)), floor)
        err = float(np.abs(a - n).max(initial=0.0)) / scale
        rows[p.name] = {"max_rel_error": err, "passed": err < tolerance, "size": int(p.data.size)}
    return {"passed": all(r["passed"] for r in rows.values()), "step": step, "tolerance": tolerance, "params": rows}


# ---------------------------------------------------------------------------
# checkpoints


def save_params(path, params: dict, meta: dict | None = None) -> None:
    """JSON checkpoint ``{format, version, meta, params: {name: {shape, values}}}``."""
    body = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "params": {
            name: {"shape": list(p.shape), "values": np.asarray(getattr(p, "data", p)).reshape(-1).tolist()}
            for name, p in sorted(params.items())
        },
    }
    Path(path).write_text(json.dumps(body, sort_keys=True))


def load_params(path) -> tuple[dict[str, np.ndarray], dict]:
    body = json.loads(Path(path).read_text())
    if body.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a parameter checkpoint")
    if body.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {body.get('version')}")
    arrays = {
        name: np.asarray(d["values"], dtype=DTYPE).reshape(d["shape"]) for name, d in body["params"].items()
    }
    return arrays, body.get("meta", {})
