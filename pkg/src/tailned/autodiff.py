"""Dense float64 tensor engine with reverse-mode gradients and Adam.

Every differentiable operation in the disambiguation model is built from
the primitives here.  Tensors wrap row-major numpy arrays; each op records
its parents and a backward closure, and ``backward()`` walks the tape in
reverse topological order.  All arithmetic is 64-bit and any op producing
NaN/Inf raises immediately.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "AdamState",
    "adam_step",
    "add",
    "backward",
    "bmm",
    "concat",
    "constant",
    "cross_entropy",
    "dropout",
    "grad_check",
    "layer_norm",
    "matmul",
    "maximum",
    "mean",
    "mul",
    "neg",
    "parameter",
    "permute",
    "relu",
    "reshape",
    "rowwise_softmax",
    "sub",
    "sum_",
    "take_rows",
    "tanh",
]


class Tensor:
    """Dense float64 array plus optional gradient buffer and tape entry."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor holds non-finite values")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all graph building goes through the module functions
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(value):
    """Wrap a python scalar or array as a non-trainable tensor."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def parameter(value):
    """Wrap an array as a trainable tensor."""
    t = Tensor(value, requires_grad=True)
    return t


def _ensure(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _track(parents):
    return any(p.requires_grad or p._backward is not None for p in parents)


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if _track(parents):
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b):
    a, b = _ensure(a), _ensure(b)
    out_data = a.data + b.data

    def bw(g, acc):
        acc(a, _unbroadcast(g, a.data.shape))
        acc(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), bw)


def sub(a, b):
    a, b = _ensure(a), _ensure(b)
    out_data = a.data - b.data

    def bw(g, acc):
        acc(a, _unbroadcast(g, a.data.shape))
        acc(b, _unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), bw)


def neg(a):
    a = _ensure(a)

    def bw(g, acc):
        acc(a, -g)

    return _make(-a.data, (a,), bw)


def mul(a, b):
    a, b = _ensure(a), _ensure(b)
    out_data = a.data * b.data

    def bw(g, acc):
        acc(a, _unbroadcast(g * b.data, a.data.shape))
        acc(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bw)


def maximum(a, b):
    """Elementwise max; on ties the gradient routes to the first argument."""
    a, b = _ensure(a), _ensure(b)
    take_a = a.data >= b.data
    out_data = np.where(take_a, a.data, b.data)

    def bw(g, acc):
        acc(a, _unbroadcast(g * take_a, a.data.shape))
        acc(b, _unbroadcast(g * ~take_a, b.data.shape))

    return _make(out_data, (a, b), bw)


def tanh(a):
    a = _ensure(a)
    out_data = np.tanh(a.data)

    def bw(g, acc):
        acc(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), bw)


def relu(a):
    a = _ensure(a)
    pos = a.data > 0.0
    out_data = a.data * pos

    def bw(g, acc):
        acc(a, g * pos)

    return _make(out_data, (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    """``a @ b`` where ``b`` is 2-D (k, n) and ``a`` has trailing dim k."""
    a, b = _ensure(a), _ensure(b)
    if b.data.ndim != 2:
        raise ValueError(f"matmul rhs must be 2-D, got shape {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ValueError(
            f"matmul inner dims mismatch: {a.data.shape} @ {b.data.shape}"
        )
    out_data = a.data @ b.data

    def bw(g, acc):
        acc(a, g @ b.data.T)
        k, n = b.data.shape
        acc(b, a.data.reshape(-1, k).T @ g.reshape(-1, n))

    return _make(out_data, (a, b), bw)


def bmm(a, b):
    """Batched matmul: (..., m, k) @ (..., k, n) with identical batch dims."""
    a, b = _ensure(a), _ensure(b)
    if a.data.shape[:-2] != b.data.shape[:-2]:
        raise ValueError(
            f"bmm batch dims differ: {a.data.shape} vs {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"bmm inner dims mismatch: {a.data.shape} @ {b.data.shape}")
    out_data = np.matmul(a.data, b.data)

    def bw(g, acc):
        acc(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        acc(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _make(out_data, (a, b), bw)


def permute(a, axes):
    a = _ensure(a)
    axes = tuple(axes)
    inverse = tuple(int(i) for i in np.argsort(axes))

    def bw(g, acc):
        acc(a, np.transpose(g, inverse))

    return _make(np.transpose(a.data, axes), (a,), bw)


def reshape(a, shape):
    a = _ensure(a)
    old_shape = a.data.shape

    def bw(g, acc):
        acc(a, g.reshape(old_shape))

    return _make(a.data.reshape(shape), (a,), bw)


def concat(tensors, axis=-1):
    tensors = [_ensure(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of empty list")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g, acc):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            acc(t, piece)

    return _make(out_data, tuple(tensors), bw)


def take_rows(a, indices):
    """Gather rows of a 2-D tensor; the gradient scatter-adds back."""
    a = _ensure(a)
    if a.data.ndim != 2:
        raise ValueError(f"take_rows expects a 2-D tensor, got {a.data.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    out_data = a.data[idx]

    def bw(g, acc):
        da = np.zeros_like(a.data)
        np.add.at(da, idx, g)
        acc(a, da)

    return _make(out_data, (a,), bw)


# ---------------------------------------------------------------------------
# reductions


def sum_(a, axis=None, keepdims=False):
    a = _ensure(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g, acc):
        if axis is None:
            acc(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            g_exp = g if keepdims else np.expand_dims(g, axis)
            acc(a, np.broadcast_to(g_exp, a.data.shape).copy())

    return _make(out_data, (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = _ensure(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# softmax family


def rowwise_softmax(x):
    """Softmax along the last axis, stabilized by max-subtraction."""
    x = _ensure(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g, acc):
        acc(x, s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return _make(s, (x,), bw)


def cross_entropy(logits, gold_index):
    """Negative log softmax probability of ``gold_index`` for a 1-D logit row."""
    logits = _ensure(logits)
    if logits.data.ndim != 1:
        raise ValueError(f"cross_entropy expects 1-D logits, got {logits.data.shape}")
    n = logits.data.shape[0]
    if not 0 <= gold_index < n:
        raise ValueError(f"gold index {gold_index} out of range for {n} logits")
    shifted = logits.data - logits.data.max()
    log_z = np.log(np.exp(shifted).sum())
    out_data = log_z - shifted[gold_index]
    soft = np.exp(shifted - log_z)

    def bw(g, acc):
        d = soft.copy()
        d[gold_index] -= 1.0
        acc(logits, g * d)

    return _make(out_data, (logits,), bw)


# ---------------------------------------------------------------------------
# normalization / regularization


def layer_norm(x, gain, bias=None, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then scale by
    ``gain`` and, when given, shift by ``bias``."""
    x, gain = _ensure(x), _ensure(gain)
    bias = _ensure(bias) if bias is not None else None
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data
    if bias is not None:
        out_data = out_data + bias.data

    def bw(g, acc):
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        acc(x, inv * (dxhat - m1 - xhat * m2))
        acc(gain, _unbroadcast((g * xhat).reshape(-1, g.shape[-1]).sum(axis=0), gain.data.shape))
        if bias is not None:
            acc(bias, _unbroadcast(g.reshape(-1, g.shape[-1]).sum(axis=0), bias.data.shape))

    parents = (x, gain) if bias is None else (x, gain, bias)
    return _make(out_data, parents, bw)


def dropout(x, p, rng, train):
    """Inverted dropout; identity when not training or p == 0."""
    x = _ensure(x)
    if not train or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    keep = (rng.random(x.data.shape) >= p) / (1.0 - p)

    def bw(g, acc):
        acc(x, g * keep)

    return _make(x.data * keep, (x,), bw)


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss):
    """Populate ``grad`` on every requires_grad ancestor of a scalar loss.

    Repeated calls accumulate into existing ``grad`` buffers.
    """
    if not isinstance(loss, Tensor):
        raise ValueError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")

    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}

    def acc(node, g):
        if not node.requires_grad and node._backward is None:
            return
        key = id(node)
        if key in grads:
            grads[key] += g
        else:
            grads[key] = np.asarray(g, dtype=np.float64).reshape(node.data.shape).copy()

    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None:
            continue
        if node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
        if node._backward is not None:
            node._backward(g, acc)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Bias-corrected Adam moments, one buffer pair per parameter name."""

    lr: float = 0.0001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One Adam update over a ``name -> Tensor`` dict; updates in place."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter '{name}' {p.data.shape}"
            )
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


# ---------------------------------------------------------------------------
# verification harness


def grad_check(fn, params, eps=1e-5, probes_per_param=1, rng=None):
    """Max relative error between analytic and central-difference directional
    derivatives, one seeded random unit direction per probe and parameter.

    ``fn`` maps the ``name -> Tensor`` dict to a scalar Tensor and must be
    deterministic (fix any rng it uses).  Probing whole directions instead of
    single coordinates keeps the compared quantities at the scale of the
    gradient norm, above the rounding noise of the two loss evaluations;
    coordinates with near-zero partials would otherwise drown in it.
    """
    for p in params.values():
        p.zero_grad()
    loss = fn(params)
    backward(loss)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items()}

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        if flat.size == 0:
            continue
        a_flat = analytic[name].reshape(-1)
        for _ in range(probes_per_param):
            d = rng.standard_normal(flat.size)
            d /= np.linalg.norm(d)
            a = float(a_flat @ d)
            orig = flat.copy()
            flat[:] = orig + eps * d
            f_plus = fn(params).item()
            flat[:] = orig - eps * d
            f_minus = fn(params).item()
            flat[:] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, abs(a - numeric) / denom)
    return worst
