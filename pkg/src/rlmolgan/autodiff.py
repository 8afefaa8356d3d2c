"""A small reverse-mode autodiff engine on top of numpy arrays.

Every op returns a new :class:`Tensor` holding its forward value and a
closure that pushes the output gradient back to its inputs.  Storage is
always a fresh contiguous array (no strided views are kept).
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import math
import threading
from typing import Iterable, Sequence

import numpy as np



class _ModeState(threading.local):
    """Grad mode and default dtype, per thread: rollout workers toggle them concurrently."""

    def __init__(self):
        self.grad = True
        self.dtype = np.float32


_state = _ModeState()


class ShapeMismatch(ValueError):
    pass


class NonScalarLoss(ValueError):
    pass


class MissingGrad(RuntimeError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (used for sampling and rollouts)."""
    prev = _state.grad
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = prev


@contextlib.contextmanager
def default_dtype(dtype):
    prev = _state.dtype
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = prev


def get_dtype():
    return _state.dtype


def grad_enabled() -> bool:
    return _state.grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None):
        self.data = np.ascontiguousarray(data, dtype=get_dtype())
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_nonscalar(self.shape)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def backward(self):
        backward(self)


class Parameter(Tensor):
    """A named leaf tensor that receives gradients."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def _raise_nonscalar(shape):
    raise NonScalarLoss(f"expected a single element, got shape {shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward_fn) -> Tensor:
    if _state.grad and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward_fn)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=t.data.dtype)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    out = None

    def bw():
        _accumulate(a, _unbroadcast(out.grad, a.shape))
        _accumulate(b, _unbroadcast(out.grad, b.shape))

    out = _make(a.data + b.data, (a, b), bw)
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    out = None

    def bw():
        _accumulate(a, _unbroadcast(out.grad, a.shape))
        _accumulate(b, _unbroadcast(-out.grad, b.shape))

    out = _make(a.data - b.data, (a, b), bw)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    out = None

    def bw():
        _accumulate(a, _unbroadcast(out.grad * b.data, a.shape))
        _accumulate(b, _unbroadcast(out.grad * a.data, b.shape))

    out = _make(a.data * b.data, (a, b), bw)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = None

    def bw():
        _accumulate(a, out.grad * c)

    out = _make(a.data * c, (a,), bw)
    return out


def relu(a: Tensor) -> Tensor:
    out = None
    mask = a.data > 0

    def bw():
        _accumulate(a, out.grad * mask)

    out = _make(a.data * mask, (a,), bw)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    out = None

    def bw():
        _accumulate(a, out.grad * s * (1.0 - s))

    out = _make(s, (a,), bw)
    return out


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    out = None

    def bw():
        _accumulate(a, out.grad * e)

    out = _make(e, (a,), bw)
    return out


def log(a: Tensor) -> Tensor:
    out = None

    def bw():
        _accumulate(a, out.grad / a.data)

    out = _make(np.log(a.data), (a,), bw)
    return out


# ---------------------------------------------------------------- shape ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    try:
        data = a.data @ b.data
    except ValueError:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}") from None
    out = None

    def bw():
        g = out.grad
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    out = _make(data, (a, b), bw)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = None

    def bw():
        _accumulate(a, out.grad.reshape(a.shape))

    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape: {a.shape} -> {tuple(shape)}") from None
    out = _make(data, (a,), bw)
    return out


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = None

    def bw():
        _accumulate(a, out.grad.transpose(inverse))

    out = _make(a.data.transpose(axes), (a,), bw)
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeMismatch("concat: " + ", ".join(str(t.shape) for t in tensors)) from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = None

    def bw():
        for t, g in zip(tensors, np.split(out.grad, sizes, axis=axis)):
            _accumulate(t, g)

    out = _make(data, tensors, bw)
    return out


def slice_(a: Tensor, idx) -> Tensor:
    out = None

    def bw():
        g = np.zeros_like(a.data)
        np.add.at(g, idx, out.grad)
        _accumulate(a, g)

    out = _make(a.data[idx], (a,), bw)
    return out


def embedding_lookup(weight: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    out = None

    def bw():
        g = np.zeros_like(weight.data)
        np.add.at(g, ids, out.grad)
        _accumulate(weight, g)

    out = _make(weight.data[ids], (weight,), bw)
    return out


def gather_last(a: Tensor, ids) -> Tensor:
    """out[..., ] = a[..., ids[...]] along the final axis."""
    ids = np.asarray(ids, dtype=np.int64)
    if a.shape[:-1] != ids.shape:
        raise ShapeMismatch(f"gather_last: {a.shape} with index {ids.shape}")
    picked = np.take_along_axis(a.data, ids[..., None], axis=-1)[..., 0]
    out = None

    def bw():
        g = np.zeros_like(a.data)
        np.put_along_axis(g, ids[..., None], out.grad[..., None], axis=-1)
        _accumulate(a, g)

    out = _make(picked, (a,), bw)
    return out


# ---------------------------------------------------------------- reductions


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = None

    def bw():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    out = _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)
    return out


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum_(a, axis, keepdims), 1.0 / float(n))


def std(a: Tensor, axis: int = 0, keepdims: bool = False) -> Tensor:
    """Population standard deviation; the gradient is taken as 0 where std == 0."""
    mu = a.data.mean(axis=axis, keepdims=True)
    centered = a.data - mu
    n = a.shape[axis]
    sd = np.sqrt((centered ** 2).mean(axis=axis, keepdims=True))
    out = None

    def bw():
        g = out.grad
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(sd > 0, sd, 1.0)
        _accumulate(a, np.where(sd > 0, g * centered / (n * safe), 0.0))

    data = sd if keepdims else np.squeeze(sd, axis=axis)
    out = _make(data, (a,), bw)
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = None

    def bw():
        g = out.grad
        _accumulate(a, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    out = _make(s, (a,), bw)
    return out


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    ls = shifted - lse
    out = None

    def bw():
        g = out.grad
        _accumulate(a, g - np.exp(ls) * g.sum(axis=axis, keepdims=True))

    out = _make(ls, (a,), bw)
    return out


def layernorm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply the optional affine map."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    parents = [x]
    y = xhat
    if gamma is not None:
        y = y * gamma.data
        parents.append(gamma)
    if beta is not None:
        y = y + beta.data
        parents.append(beta)
    out = None

    def bw():
        g = out.grad
        if gamma is not None:
            _accumulate(gamma, _unbroadcast(g * xhat, gamma.shape))
            gx = g * gamma.data
        else:
            gx = g
        if beta is not None:
            _accumulate(beta, _unbroadcast(g, beta.shape))
        if x.requires_grad:
            d = x.shape[-1]
            gx_sum = gx.sum(axis=-1, keepdims=True)
            gxx = (gx * xhat).sum(axis=-1, keepdims=True)
            _accumulate(x, inv / d * (d * gx - gx_sum - xhat * gxx))

    out = _make(y, parents, bw)
    return out


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    if not training or p <= 0.0:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    return mul(a, Tensor(keep))


def cross_entropy(logits: Tensor, targets, pad_mask=None) -> Tensor:
    """Mean token negative log-likelihood; ``pad_mask`` is True where ignored."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ShapeMismatch(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    nll = scale(gather_last(log_softmax(logits, -1), targets), -1.0)
    if pad_mask is None:
        return mean(nll)
    keep = (~np.asarray(pad_mask, dtype=bool)).astype(get_dtype())
    count = max(float(keep.sum()), 1.0)
    return scale(sum_(mul(nll, Tensor(keep))), 1.0 / count)


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Binary cross-entropy on logits, averaged; numerically stable form."""
    y = np.asarray(labels, dtype=get_dtype()).reshape(logits.shape)
    z = logits.data
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    s = 0.5 * (1.0 + np.tanh(0.5 * z))
    n = float(z.size)
    out = None

    def bw():
        _accumulate(logits, out.grad * (s - y) / n)

    out = _make(np.asarray(loss.mean()), (logits,), bw)
    return out


# ---------------------------------------------------------------- backward


def backward(loss: Tensor) -> None:
    if loss.data.size != 1:
        raise NonScalarLoss(f"backward needs a scalar loss, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward()
    for node in order:
        if node._parents:
            node._parents = ()
            node._backward = None
            node.grad = None


# ---------------------------------------------------------------- modules


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Module:
    """Holds parameters and sub-modules as attributes; names follow attribute paths."""

    training = True

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        out = []
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                if not value.name:
                    value.name = name
                out.append((name, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{name}.{i}."))
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def train(self, mode: bool = True):
        for m in self._modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def _modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value._modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item._modules()

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ShapeMismatch(f"{name}: checkpoint {state[name].shape} vs model {p.shape}")
            p.data = np.ascontiguousarray(state[name], dtype=p.data.dtype)


def parameter_hash(params: Iterable[Parameter]) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def clip_weights(params: Iterable[Parameter], c: float) -> None:
    for p in params:
        np.clip(p.data, -c, c, out=p.data)


# ---------------------------------------------------------------- optimizers


def sgd_step(params: Sequence[Parameter], lr: float) -> None:
    for p in params:
        if p.grad is None:
            raise MissingGrad(f"no gradient for {p.name}")
    for p in params:
        p.data -= (lr * p.grad).astype(p.data.dtype)


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p in self.params:
            if p.grad is None:
                raise MissingGrad(f"no gradient for {p.name}")
        b1, b2 = self.betas
        self.t += 1
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for p, m, v in zip(self.params, self.m, self.v):
            out[f"adam.m/{p.name}"] = m
            out[f"adam.v/{p.name}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int):
        if len({p.name for p in self.params}) != len(self.params):
            raise ValueError("optimizer state needs distinct parameter names")
        for i, p in enumerate(self.params):
            self.m[i] = arrays[f"adam.m/{p.name}"].astype(p.data.dtype)
            self.v[i] = arrays[f"adam.v/{p.name}"].astype(p.data.dtype)
        self.t = t


def adam_step(params, grads, lr, betas, eps, state) -> None:
    """Functional Adam update; ``state`` is a dict with keys t, m, v (created if empty)."""
    if any(g is None for g in grads):
        raise MissingGrad("a parameter has no gradient")
    if not state:
        state.update(t=0, m=[np.zeros_like(p.data) for p in params], v=[np.zeros_like(p.data) for p in params])
    b1, b2 = betas
    state["t"] += 1
    t = state["t"]
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m[...] = b1 * m + (1 - b1) * g
        v[...] = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype)


# ---------------------------------------------------------------- checkpoints

MAGIC = b"RLMG1\n"


def save_checkpoint(path, arrays: dict[str, np.ndarray], vocab: Sequence[str], hparams: dict) -> None:
    """Write ``MAGIC``, a JSON header line block, then little-endian float32 payloads."""
    manifest = [[name, list(a.shape)] for name, a in arrays.items()]
    header = json.dumps({"vocab": list(vocab), "hparams": hparams, "manifest": manifest}, sort_keys=True)
    header_bytes = header.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(f"header {len(header_bytes)}\n".encode("ascii"))
        fh.write(header_bytes)
        fh.write(b"\n")
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], list[str], dict]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not an RLMG1 checkpoint")
        line = fh.readline().decode("ascii").split()
        if len(line) != 2 or line[0] != "header":
            raise ValueError(f"{path}: malformed header length line")
        header = json.loads(fh.read(int(line[1])).decode("utf-8"))
        fh.read(1)
        arrays = {}
        for name, shape in header["manifest"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(4 * count)
            if len(buf) != 4 * count:
                raise ValueError(f"{path}: truncated payload for {name}")
            arrays[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float32)
    return arrays, header["vocab"], header["hparams"]
