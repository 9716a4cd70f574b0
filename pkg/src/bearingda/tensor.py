"""A small reverse-mode automatic differentiation engine on top of numpy.

Only the operations needed by the fault-diagnosis networks are provided:
dense and 1-D convolution layers, ReLU, dropout, softmax / log-softmax,
cross-entropy, reshaping, broadcasting arithmetic and a gradient-scaling
node (used for gradient reversal). Gradients are accumulated by a
topological sweep from a scalar loss. A graph can be swept once; the
intermediate closures are released afterwards.
"""
from __future__ import annotations

import struct
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import FormatError, ParameterError, ShapeError, StateError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_swept", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 _parents: Sequence["Tensor"] = (), _backward: Optional[Callable] = None):
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = tuple(_parents) if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None
        self._swept = False
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(as_tensor(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def parameter(data, name: Optional[str] = None) -> Tensor:
    return Tensor(np.array(data, copy=True), requires_grad=True, name=name)


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
    g = np.asarray(g, dtype=t.dtype)
    t.grad = g.copy() if t.grad is None else t.grad + g


def backward(loss: Tensor, params: Iterable[Tensor] = ()):
    """Populate ``.grad`` on every tensor reachable from a scalar ``loss``.

    Tensors listed in ``params`` that are not reachable get a zero gradient.
    Raises :class:`StateError` if the graph was already swept.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise StateError("backward needs a scalar tensor produced by a forward pass")
    if not loss.requires_grad:
        raise StateError("loss does not depend on any parameter")
    if loss._swept:
        raise StateError("graph already swept by an earlier backward call; run forward again")
    if loss.is_leaf:
        raise StateError("no recorded forward pass: loss is a leaf tensor")

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
            if id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            _accumulate(node, g)
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
        node._backward = None
        node._parents = ()
        node._swept = True
    loss._swept = True

    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    sa, sb = a.shape, b.shape
    return Tensor(a.data + b.data, _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    ad, bd = a.data, b.data
    return Tensor(ad * bd, _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor(np.where(mask, x.data, 0).astype(x.dtype), _parents=(x,),
                  _backward=lambda g: (g * mask,))


def grad_scale(x: Tensor, factor: float) -> Tensor:
    """Identity forward; multiplies the incoming gradient by ``factor``.

    ``factor = -lambda`` gives a gradient-reversal layer.
    """
    factor = float(factor)
    return Tensor(x.data, _parents=(x,), _backward=lambda g: (g * factor,))


def dropout(x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``."""
    if not 0 <= rate < 1:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    if rng is None:
        raise ParameterError("training-mode dropout needs a random generator")
    draw_dtype = np.float32 if x.dtype == np.float32 else np.float64
    keep = (rng.random(x.shape, dtype=draw_dtype) >= rate).astype(x.dtype) / x.dtype.type(1 - rate)
    return Tensor(x.data * keep, _parents=(x,), _backward=lambda g: (g * keep,))


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return Tensor(x.data.reshape(shape), _parents=(x,), _backward=lambda g: (g.reshape(old),))


def flatten(x: Tensor) -> Tensor:
    """Collapse all axes after the batch axis."""
    return reshape(x, (x.shape[0], -1))


def take(x: Tensor, index) -> Tensor:
    shape = x.shape

    def back(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return Tensor(x.data[index], _parents=(x,), _backward=back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), _parents=tuple(tensors),
                  _backward=lambda g: tuple(np.split(g, bounds, axis=axis)))


def sum_(x: Tensor, axis=None) -> Tensor:
    shape = x.shape

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor(np.asarray(x.data.sum(axis=axis)), _parents=(x,), _backward=back)


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return mul(sum_(x), 1.0 / n)


# ---------------------------------------------------------------- layers

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return Tensor(ad @ bd, _parents=(a, b), _backward=lambda g: (g @ bd.T, ad.T @ g))


def dense(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``x @ w + b`` with ``w`` of shape ``[in, out]``."""
    if x.data.ndim != 2:
        raise ShapeError(f"dense expects [batch, features], got {x.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense input width {x.shape[1]} does not match weight {w.shape}")
    out = matmul(x, w)
    return out if b is None else add(out, b)


def conv1d(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Valid cross-correlation, stride 1.

    ``x``: ``[batch, ch_in, length]``, ``w``: ``[ch_out, ch_in, k]``,
    result: ``[batch, ch_out, length - k + 1]``.
    """
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ShapeError(f"conv1d expects 3-D input and weight, got {x.shape} and {w.shape}")
    batch, cin, length = x.shape
    cout, wcin, k = w.shape
    if cin != wcin:
        raise ShapeError(f"input has {cin} channels, kernel expects {wcin}")
    lout = length - k + 1
    if lout < 1:
        raise ShapeError(f"input length {length} shorter than kernel {k}")
    xd, wd = x.data, w.data
    # channel-major layout turns every tap into one large matrix product
    xt = np.ascontiguousarray(xd.transpose(1, 0, 2))
    out = np.zeros((cout, batch, lout), dtype=np.result_type(xd, wd))
    for j in range(k):
        out += np.tensordot(wd[:, :, j], xt[:, :, j:j + lout], axes=(1, 0))
    out = out.transpose(1, 0, 2)

    def back(g):
        gt = np.ascontiguousarray(g.transpose(1, 0, 2))
        gxt = np.zeros_like(xt)
        gw = np.empty_like(wd)
        for j in range(k):
            gxt[:, :, j:j + lout] += np.tensordot(wd[:, :, j].T, gt, axes=(1, 0))
            gw[:, :, j] = np.tensordot(gt, xt[:, :, j:j + lout], axes=([1, 2], [1, 2]))
        return gxt.transpose(1, 0, 2), gw

    y = Tensor(out, _parents=(x, w), _backward=back)
    if b is None:
        return y
    return add(y, reshape(b, (1, cout, 1)))


# ---------------------------------------------------------------- probabilities

def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    p = np.exp(out)
    return Tensor(out, _parents=(x,),
                  _backward=lambda g: (g - p * g.sum(axis=1, keepdims=True),))


def softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return Tensor(p, _parents=(x,),
                  _backward=lambda g: (p * (g - (g * p).sum(axis=1, keepdims=True)),))


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean cross-entropy over the batch.

    ``target`` is either integer class indices ``[batch]`` or a matrix of
    class probabilities ``[batch, K]``.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be [batch, K], got {logits.shape}")
    batch, k = logits.shape
    target = np.asarray(target.data if isinstance(target, Tensor) else target)
    if target.ndim == 1:
        if target.shape[0] != batch:
            raise ShapeError("one target per row required")
        onehot = np.zeros((batch, k), dtype=logits.dtype)
        onehot[np.arange(batch), target.astype(int)] = 1
        target = onehot
    elif target.shape != (batch, k):
        raise ShapeError(f"soft targets must be {(batch, k)}, got {target.shape}")
    target = target.astype(logits.dtype)
    return mul(sum_(mul(log_softmax(logits), target)), -1.0 / batch)


def outer_flatten(e: Tensor, y: Tensor) -> Tensor:
    """Per-row outer product ``e_b (x) y_b`` flattened feature-major (``i*K + k``)."""
    if e.data.ndim != 2 or y.data.ndim != 2 or e.shape[0] != y.shape[0]:
        raise ShapeError(f"outer product needs [B, F] and [B, K], got {e.shape} and {y.shape}")
    batch, f = e.shape
    k = y.shape[1]
    ed, yd = e.data, y.data
    out = (ed[:, :, None] * yd[:, None, :]).reshape(batch, f * k)

    def back(g):
        g3 = g.reshape(batch, f, k)
        return (g3 * yd[:, None, :]).sum(axis=2), (g3 * ed[:, :, None]).sum(axis=1)

    return Tensor(out, _parents=(e, y), _backward=back)


# ---------------------------------------------------------------- optimisation

class AdamState:
    """Moment buffers and hyper-parameters for :func:`adam_step`."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.first_moment = [np.zeros_like(p.data) for p in params]
        self.second_moment = [np.zeros_like(p.data) for p in params]
        self.step_count = 0


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState):
    """Bias-corrected Adam update, in place on ``params``."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeError("params, grads and optimizer state must have the same length")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / c1
        vhat = v / c2
        p.data -= (state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.dtype)


class Adam:
    """Convenience wrapper holding the parameter list and :class:`AdamState`."""

    def __init__(self, params: Sequence[Tensor], **kwargs):
        self.params = list(params)
        self.state = AdamState(self.params, **kwargs)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        adam_step(self.params, grads, self.state)


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"BDCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: Mapping[str, np.ndarray], header: Optional[dict] = None):
    """Write named parameters as little-endian float32.

    Layout: magic, u32 version, u32 header length, JSON header, u32 count,
    then per parameter: u16 name length, name, u8 ndim, u32 dims, data.
    """
    import json

    head = json.dumps(header or {}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(head)))
        fh.write(head)
        fh.write(struct.pack("<I", len(params)))
        for name, arr in params.items():
            arr = np.asarray(arr, dtype="<f4")
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Inverse of :func:`save_checkpoint`; returns ``(header, params)``."""
    import json

    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    try:
        version, hlen = struct.unpack_from("<II", blob, 4)
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        header = json.loads(blob[pos:pos + hlen].decode())
        pos += hlen
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        params = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode()
            pos += nlen
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            n = int(np.prod(shape))
            if pos + 4 * n > len(blob):
                raise FormatError(f"{path}: truncated parameter {name!r}")
            params[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(shape).copy()
            pos += 4 * n
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: corrupt checkpoint ({exc})") from exc
    if pos != len(blob):
        raise FormatError(f"{path}: trailing bytes after parameter table")
    return header, params
