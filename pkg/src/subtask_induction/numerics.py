"""Dense float32 arrays with reverse-mode autodiff, seeded RNG and optimizers.

Every op builds a :class:`Tensor` that remembers its parents and a closure
that maps the output gradient onto the parents.  Ops are deliberately coarse
(fused layer norm, fused causal attention, fused cross-entropy) so that the
Python overhead per training step stays small next to the BLAS work.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

DTYPE = np.float32
LN_EPS = 1e-5


class NonFiniteError(FloatingPointError):
    """Raised when a loss, activation or gradient stops being finite."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype != np.float64 or not isinstance(data, np.ndarray):
            # float64 ndarrays pass through untouched so finite-difference
            # oracles can run the same ops at higher precision.
            arr = arr.astype(DTYPE, copy=False)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor],
            backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if np.broadcast_shapes(a.shape, b.shape) is None:  # pragma: no cover
        raise ValueError("shapes do not broadcast")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = a.data.dtype.type(c)

    def backward(g):
        _accumulate(a, g * c)

    return _result(a.data * c, (a,), backward)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)

    def backward(g):
        _accumulate(x, g * y * (1 - y))

    return _result(y, (x,), backward)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x) -> Tensor:
    """GPT-2 tanh approximation of GELU."""
    x = as_tensor(x)
    v = x.data
    c = v.dtype.type(_GELU_C)
    k = v.dtype.type(0.044715)
    v2 = v * v  # ``**`` on float32 arrays is ~30x slower than multiplies
    t = np.tanh(c * (v + k * v2 * v))
    y = 0.5 * v * (1 + t)

    def backward(g):
        d_inner = c * (1 + 3 * k * v2)
        dy = 0.5 * (1 + t) + 0.5 * v * (1 - t * t) * d_inner
        _accumulate(x, g * dy)

    return _result(y, (x,), backward)


def sum_all(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _result(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), backward)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape

    def backward(g):
        _accumulate(x, g.reshape(old))

    return _result(x.data.reshape(shape), (x,), backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """``a @ b`` for a of shape (..., k) and a 2-D b of shape (k, n)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.data.ndim != 2 or a.data.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            a2 = a.data.reshape(-1, a.shape[-1])
            _accumulate(b, a2.T @ g.reshape(-1, g.shape[-1]))

    return _result(out, (a, b), backward)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` in one node; weight is (in, out)."""
    x, weight = as_tensor(x), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    if weight.data.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear dimension mismatch: {x.shape} x {weight.shape}")
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    if bias is not None:
        out += bias.data
    out = out.reshape(x.shape[:-1] + (weight.shape[1],))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        if x.requires_grad:
            _accumulate(x, (g2 @ weight.data.T).reshape(x.shape))
        if weight.requires_grad:
            _accumulate(weight, x2.T @ g2)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g2.sum(axis=0))

    return _result(out, parents, backward)


def layer_norm(x, gain, bias) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(f"layer_norm expects gain/bias of shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(LN_EPS))
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            _accumulate(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            _accumulate(bias, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
            _accumulate(x, dx)

    return _result(out, (x, gain, bias), backward)


def embedding_lookup(table, ids: np.ndarray) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"token id out of range [0, {table.shape[0]})")

    def backward(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
            _accumulate(table, full)

    return _result(table.data[ids], (table,), backward)


def causal_attention(qkv, n_heads: int) -> Tensor:
    """Multi-head causal self-attention core.

    ``qkv`` has shape (B, T, 3*d) holding concatenated queries, keys and
    values; the result is (B, T, d) before the output projection.
    """
    qkv = as_tensor(qkv)
    B, T, three_d = qkv.shape
    d = three_d // 3
    if d * 3 != three_d or d % n_heads:
        raise ValueError("qkv width must be 3*d with d divisible by n_heads")
    hd = d // n_heads
    heads = qkv.data.reshape(B, T, 3, n_heads, hd).transpose(2, 0, 3, 1, 4)
    q, k, v = heads[0], heads[1], heads[2]  # (B, H, T, hd)
    scale_ = qkv.data.dtype.type(1.0 / math.sqrt(hd))
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale_
    future = np.triu(np.ones((T, T), dtype=bool), k=1)
    scores = np.where(future, -np.inf, scores)
    scores -= scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)
    ctx = w @ v
    out = ctx.transpose(0, 2, 1, 3).reshape(B, T, d)

    def backward(g):
        gctx = g.reshape(B, T, n_heads, hd).transpose(0, 2, 1, 3)
        gw = gctx @ v.transpose(0, 1, 3, 2)
        gv = w.transpose(0, 1, 3, 2) @ gctx
        gs = w * (gw - (gw * w).sum(axis=-1, keepdims=True)) * scale_
        gq = gs @ k
        gk = gs.transpose(0, 1, 3, 2) @ q
        gheads = np.stack([gq, gk, gv])  # (3, B, H, T, hd)
        _accumulate(qkv, gheads.transpose(1, 3, 0, 2, 4).reshape(B, T, three_d))

    return _result(out, (qkv,), backward)


def softmax_cross_entropy(logits, targets) -> Tensor:
    """Mean of ``-log softmax(logits)[target]`` over all leading positions.

    ``logits`` is a vector (single prediction) or an array whose last axis is
    the class axis; ``targets`` holds one integer per leading position.
    """
    logits = as_tensor(logits)
    V = logits.shape[-1]
    z = logits.data.reshape(-1, V)
    t = np.asarray(targets).reshape(-1)
    if t.shape[0] != z.shape[0]:
        raise ValueError("one target per logit row is required")
    if t.size == 0:
        raise ValueError("empty batch")
    if t.min() < 0 or t.max() >= V:
        raise IndexError(f"target index out of range [0, {V})")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    nll = lse - shifted[rows, t]
    n = z.shape[0]
    loss = np.asarray(nll.mean(), dtype=z.dtype)

    def backward(g):
        p = np.exp(shifted - lse[:, None])
        p[rows, t] -= 1
        _accumulate(logits, (p * (g / n)).reshape(logits.shape))

    return _result(loss, (logits,), backward)


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor reachable from a scalar ``loss``.

    Gradients accumulate additively, so shared subexpressions are handled by
    visiting each node once in reverse topological order.
    """
    if loss.data.size != 1:
        raise ValueError("backward() needs a scalar loss")
    if not np.isfinite(loss.data).all():
        raise NonFiniteError(f"non-finite loss {float(loss.data)}")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            # interior buffers are no longer needed
            if node._parents:
                node.grad = None


# ---------------------------------------------------------------------------
# RNG


def seeded_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox4x64 stream; identical seeds give identical draws."""
    return np.random.Generator(np.random.Philox(int(seed)))


def normal_init(shape, mean: float, std: float, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(mean, std, size=shape).astype(DTYPE) if std > 0 else \
        np.full(shape, mean, dtype=DTYPE)


# ---------------------------------------------------------------------------
# optimizers


class _Optimizer:
    """Shared bookkeeping: parameters are updated in place, entries whose
    trainability flag is False are never written."""

    def __init__(self, params: Mapping[str, np.ndarray], lr: float,
                 trainable: Mapping[str, np.ndarray | bool] | None = None):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = params
        self.lr = lr
        self.step_count = 0
        self.trainable: dict[str, np.ndarray | bool] = {}
        for name in params:
            flag = True if trainable is None else trainable.get(name, True)
            if isinstance(flag, np.ndarray):
                if flag.shape != params[name].shape:
                    raise ValueError(f"trainability map for {name} has wrong shape")
                if flag.all():
                    flag = True
                elif not flag.any():
                    flag = False
            self.trainable[name] = flag

    def _apply(self, name: str, delta: np.ndarray) -> None:
        flag = self.trainable[name]
        p = self.params[name]
        if flag is True:
            p -= delta
        elif flag is not False:
            np.subtract(p, delta, out=p, where=flag)

    def _check(self, grads: Mapping[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if g is not None and not np.isfinite(g).all():
                raise NonFiniteError(f"non-finite gradient in {name}")


class AdamW(_Optimizer):
    """Adam with decoupled weight decay."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0, trainable=None):
        super().__init__(params, lr, trainable)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: Mapping[str, np.ndarray | None]) -> None:
        self._check(grads)
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1 - b1 ** self.step_count
        bc2 = 1 - b2 ** self.step_count
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None or self.trainable[name] is False:
                continue
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            delta = (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                delta += (self.lr * self.weight_decay) * p
            self._apply(name, delta.astype(p.dtype, copy=False))


class SGDMomentum(_Optimizer):
    """Heavy-ball SGD: ``buf = mu*buf + g + wd*p``; ``p -= lr*buf``."""

    def __init__(self, params, lr=1e-3, momentum=0.9, weight_decay=0.0, trainable=None):
        super().__init__(params, lr, trainable)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buf = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads):
        self._check(grads)
        self.step_count += 1
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None or self.trainable[name] is False:
                continue
            if self.weight_decay:
                g = g + self.weight_decay * p
            buf = self.buf[name]
            buf *= self.momentum
            buf += g
            self._apply(name, (self.lr * buf).astype(p.dtype, copy=False))


def leaves(params: Mapping[str, np.ndarray], requires_grad: bool = True,
           names: Iterable[str] | None = None) -> dict[str, Tensor]:
    """Wrap raw parameter arrays as graph leaves sharing the same memory."""
    selected = set(params) if names is None else set(names)
    out = {}
    for k, v in params.items():
        t = Tensor.__new__(Tensor)
        t.data, t.grad, t.name = v, None, k
        t.requires_grad = requires_grad and k in selected
        t._parents, t._backward = (), None
        out[k] = t
    return out
