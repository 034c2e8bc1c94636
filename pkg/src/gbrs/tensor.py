"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything in this package runs on 64-bit floats: the models are desk-scale,
so the cost is negligible and it keeps gradient checks tight.

Conventions that the rest of the package relies on:

- Feature maps are row-major ``[N, C, H, W]``.
- A 1-d operand of length C against a 4-d operand is treated as per-channel,
  a 2-d operand matching (H, W) as per-position; anything else follows numpy
  broadcasting.
- ``relu`` has gradient 0 at exactly 0 (refinement loss surfaces can sit on
  the kink, so the convention matters).
- ``upsample_bilinear`` uses the align-corners=false mapping
  ``src = (dst + 0.5) / scale - 0.5`` with source coordinates clamped to the
  input extent.

The computation graph is the linked structure of tensors themselves: each op
output records its input tensors plus a monotonically increasing sequence
number, so the graph is acyclic by construction and ``backward`` visits nodes
in exact reverse creation order.  Gradients for one backward pass are
accumulated in pass-local storage and only added onto ``.grad`` at the end;
repeated backward calls therefore accumulate linearly (two calls double the
grads) at any graph depth.
"""

from __future__ import annotations

import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ContractError, DimensionError

_SEQ = itertools.count()
_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """Enable NaN/Inf checks on every op output (off by default)."""
    global _debug_checks
    _debug_checks = bool(enabled)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self._seq = next(_SEQ)

    # -- bookkeeping ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """A view of the same data with no graph attached."""
        t = Tensor(self.data)
        return t

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def backward(self):
        backward(self)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _make(data, parents, bw) -> Tensor:
    """Create an op output; drops the graph when no input needs gradients."""
    if _debug_checks and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by a forward op")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = bw
    return out


def _accum(acc: dict, t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    key = id(t)
    if key in acc:
        acc[key] += g
    else:
        acc[key] = np.array(g, dtype=np.float64)


def backward(root: Tensor) -> None:
    """Populate ``grad`` for every requires_grad tensor reachable from root.

    ``root`` must be scalar.  Grads accumulate across calls until zeroed.
    """
    if root.data.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.data.shape}")
    nodes = {id(root): root}
    stack = [root]
    while stack:
        t = stack.pop()
        for p in t._parents:
            if p.requires_grad and id(p) not in nodes:
                nodes[id(p)] = p
                if p._parents:
                    stack.append(p)
    order = sorted(nodes.values(), key=lambda t: t._seq, reverse=True)
    acc: dict = {id(root): np.ones_like(root.data)}
    for node in order:
        g = acc.get(id(node))
        if g is None or node._backward is None:
            continue
        node._backward(g, acc)
    for node in order:
        g = acc.get(id(node))
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g


# -- broadcasting binary ops ----------------------------------------------


def _view_shape(shape, other_shape):
    """Convenience alignment: [C] and [H,W] operands against [N,C,H,W]."""
    if len(shape) == 1 and len(other_shape) == 4 and shape[0] == other_shape[1]:
        return (1, shape[0], 1, 1)
    if len(shape) == 2 and len(other_shape) == 4 and tuple(shape) == tuple(other_shape[2:]):
        return (1, 1) + tuple(shape)
    return tuple(shape)


def _unbroadcast(g: np.ndarray, view_shape, orig_shape) -> np.ndarray:
    while g.ndim > len(view_shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(view_shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(orig_shape)


def _binary(kind: str, a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    av = _view_shape(a.data.shape, b.data.shape)
    bv = _view_shape(b.data.shape, a.data.shape)
    ad = a.data.reshape(av)
    bd = b.data.reshape(bv)
    try:
        if kind == "add":
            data = ad + bd
        elif kind == "sub":
            data = ad - bd
        elif kind == "mul":
            data = ad * bd
        else:
            raise ContractError(f"unknown elementwise kind {kind!r}")
    except ValueError:
        raise DimensionError(
            f"shapes {a.data.shape} and {b.data.shape} do not broadcast for {kind}"
        ) from None

    if kind == "mul":

        def bw(g, acc):
            _accum(acc, a, _unbroadcast(g * bd, av, a.data.shape))
            _accum(acc, b, _unbroadcast(g * ad, bv, b.data.shape))

    elif kind == "sub":

        def bw(g, acc):
            _accum(acc, a, _unbroadcast(g, av, a.data.shape))
            _accum(acc, b, _unbroadcast(-g, bv, b.data.shape))

    else:

        def bw(g, acc):
            _accum(acc, a, _unbroadcast(g, av, a.data.shape))
            _accum(acc, b, _unbroadcast(g, bv, b.data.shape))

    return _make(data, (a, b), bw)


def elementwise(kind: str, a, b) -> Tensor:
    """Broadcasting add / mul / sub; see the module docstring for the rules."""
    if kind not in ("add", "mul", "sub"):
        raise ContractError(f"elementwise kind must be add/mul/sub, got {kind!r}")
    return _binary(kind, a, b)


def add(a, b) -> Tensor:
    return _binary("add", a, b)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def bw(g, acc):
        _accum(acc, a, -g)

    return _make(-a.data, (a,), bw)


# -- pointwise activations --------------------------------------------------


def relu(x) -> Tensor:
    x = _as_tensor(x)
    data = np.maximum(x.data, 0.0)

    def bw(g, acc):
        _accum(acc, x, g * (x.data > 0))

    return _make(data, (x,), bw)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    s = expit(x.data)

    def bw(g, acc):
        _accum(acc, x, g * s * (1.0 - s))

    return _make(s, (x,), bw)


def softplus(x) -> Tensor:
    x = _as_tensor(x)
    data = np.logaddexp(0.0, x.data)

    def bw(g, acc):
        _accum(acc, x, g * expit(x.data))

    return _make(data, (x,), bw)


def activation(kind: str, x) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softplus":
        return softplus(x)
    raise ContractError(f"unknown activation {kind!r}")


def log(x) -> Tensor:
    """Natural log; callers guarantee strictly positive input."""
    x = _as_tensor(x)
    data = np.log(x.data)

    def bw(g, acc):
        _accum(acc, x, g / x.data)

    return _make(data, (x,), bw)


# -- reductions / shape ops --------------------------------------------------


def tsum(x) -> Tensor:
    x = _as_tensor(x)
    data = np.asarray(x.data.sum())

    def bw(g, acc):
        _accum(acc, x, np.broadcast_to(g, x.data.shape))

    return _make(data, (x,), bw)


def tmean(x) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size
    data = np.asarray(x.data.mean())

    def bw(g, acc):
        _accum(acc, x, np.broadcast_to(g / n, x.data.shape))

    return _make(data, (x,), bw)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    orig = x.data.shape
    data = x.data.reshape(shape)

    def bw(g, acc):
        _accum(acc, x, g.reshape(orig))

    return _make(data, (x,), bw)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g, acc):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(acc, t, g[tuple(sl)])

    return _make(data, tuple(tensors), bw)


def pick(x, indices) -> Tensor:
    """Fancy-index ``x.data[indices]``; gradient scatter-adds (duplicates sum)."""
    x = _as_tensor(x)
    idx = tuple(np.asarray(i) for i in indices)
    if len(idx) != x.data.ndim:
        raise DimensionError(f"pick needs {x.data.ndim} index arrays, got {len(idx)}")
    data = x.data[idx]

    def bw(g, acc):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        _accum(acc, x, gx)

    return _make(data, (x,), bw)


def take_channels(x, channels) -> Tensor:
    """Select channels of an [N,C,H,W] tensor."""
    x = _as_tensor(x)
    ch = np.asarray(channels, dtype=np.intp)
    data = x.data[:, ch]

    def bw(g, acc):
        gx = np.zeros_like(x.data)
        gx[:, ch] = g
        _accum(acc, x, gx)

    return _make(data, (x,), bw)


def put_channels(base, channels, values) -> Tensor:
    """Copy of ``base`` with the listed channels replaced by ``values``.

    Gradients of the untouched channels pass through to ``base`` unchanged.
    """
    base = _as_tensor(base)
    values = _as_tensor(values)
    ch = np.asarray(channels, dtype=np.intp)
    data = base.data.copy()
    data[:, ch] = values.data

    def bw(g, acc):
        gb = g.copy()
        gb[:, ch] = 0.0
        _accum(acc, base, gb)
        _accum(acc, values, g[:, ch])

    return _make(data, (base, values), bw)


# -- structured ops ----------------------------------------------------------


def conv2d(x, weight, bias, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [N,Cin,H,W] with [Cout,Cin,k,k] plus bias [Cout].

    Stride 1 runs as k*k shifted GEMMs (the refinement loop's hot path);
    other strides use an im2col matrix product.
    """
    x = _as_tensor(x)
    weight = _as_tensor(weight)
    bias = _as_tensor(bias)
    if x.data.ndim != 4:
        raise DimensionError(f"conv2d input must be 4-d, got {x.data.shape}")
    if weight.data.ndim != 4:
        raise DimensionError(f"conv2d weight must be 4-d, got {weight.data.shape}")
    n, cin, h, w = x.data.shape
    cout, cin_w, k, k2 = weight.data.shape
    if k != k2 or k % 2 != 1:
        raise ContractError(f"kernel must be square with odd size, got {k}x{k2}")
    if cin_w != cin:
        raise DimensionError(
            f"weight expects {cin_w} input channels on axis 1, input has {cin}"
        )
    if bias.data.shape != (cout,):
        raise DimensionError(f"bias must have shape ({cout},), got {bias.data.shape}")
    if padding < 0:
        raise ContractError("padding must be >= 0")
    if h < k - 2 * padding or w < k - 2 * padding:
        raise DimensionError(f"input {h}x{w} too small for kernel {k} with padding {padding}")
    if stride == 1:
        return _conv2d_shifted(x, weight, bias, padding)
    return _conv2d_im2col(x, weight, bias, stride, padding)


def _conv2d_shifted(x: Tensor, weight: Tensor, bias: Tensor, padding: int) -> Tensor:
    """Stride-1 conv as one GEMM over an im2col built from strided row copies."""
    n, cin, h, w = x.data.shape
    cout, _, k, _ = weight.data.shape
    ho = h + 2 * padding - k + 1
    wo = w + 2 * padding - k + 1
    hw = ho * wo
    if padding:
        xp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding))
        xp[:, :, padding : padding + h, padding : padding + w] = x.data
    else:
        xp = x.data
    cols = np.empty((n, k * k, cin, ho, wo))
    for a in range(k):
        for b in range(k):
            cols[:, a * k + b] = xp[:, :, a : a + ho, b : b + wo]
    cols3 = cols.reshape(n, k * k * cin, hw)
    # weight reordered to match the (shift, channel) layout of the columns
    w9 = weight.data.transpose(2, 3, 1, 0).reshape(k * k * cin, cout)
    out = np.matmul(w9.T, cols3).reshape(n, cout, ho, wo)
    out += bias.data.reshape(1, cout, 1, 1)

    def bw(g, acc):
        _accum(acc, bias, g.sum(axis=(0, 2, 3)))
        g2 = g.reshape(n, cout, hw)
        if weight.requires_grad:
            gw9 = np.matmul(g2, cols3.transpose(0, 2, 1)).sum(axis=0)  # [O, k*k*C]
            _accum(acc, weight,
                   gw9.reshape(cout, k, k, cin).transpose(0, 3, 1, 2))
        if x.requires_grad:
            gcols = np.matmul(w9, g2).reshape(n, k, k, cin, ho, wo)
            gxp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding))
            for a in range(k):
                for b in range(k):
                    gxp[:, :, a : a + ho, b : b + wo] += gcols[:, a, b]
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
            _accum(acc, x, gx)

    return _make(out, (x, weight, bias), bw)


def _conv2d_im2col(x: Tensor, weight: Tensor, bias: Tensor, stride: int,
                   padding: int) -> Tensor:
    n, cin, h, w = x.data.shape
    cout, _, k, _ = weight.data.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    # [N,Cin,Ho,Wo,k,k] -> matrix [N*Ho*Wo, Cin*k*k] feeding one BLAS matmul
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * ho * wo, cin * k * k
    )
    wm = weight.data.reshape(cout, cin * k * k)
    out = (cols @ wm.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    out = out + bias.data.reshape(1, cout, 1, 1)

    def bw(g, acc):
        _accum(acc, bias, g.sum(axis=(0, 2, 3)))
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, cout)
        if weight.requires_grad:
            _accum(acc, weight, (gm.T @ cols).reshape(cout, cin, k, k))
        if x.requires_grad:
            gcols = (gm @ wm).reshape(n, ho, wo, cin, k, k)
            gxp = np.zeros_like(xp)
            for a in range(k):
                for b in range(k):
                    gxp[
                        :, :, a : a + stride * ho : stride, b : b + stride * wo : stride
                    ] += gcols[:, :, :, :, a, b].transpose(0, 3, 1, 2)
            if padding:
                gx = gxp[:, :, padding : padding + h, padding : padding + w]
            else:
                gx = gxp
            _accum(acc, x, gx)

    return _make(out, (x, weight, bias), bw)


_INTERP_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _interp_matrix(n_in: int, scale: int) -> np.ndarray:
    """Dense [n_in*scale, n_in] interpolation operator for one axis."""
    key = (n_in, scale)
    cached = _INTERP_CACHE.get(key)
    if cached is not None:
        return cached
    dst = np.arange(n_in * scale)
    src = np.clip((dst + 0.5) / scale - 0.5, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    m = np.zeros((n_in * scale, n_in))
    m[dst, i0] += 1.0 - w1
    m[dst, i1] += w1
    _INTERP_CACHE[key] = m
    return m


def upsample_bilinear(x, scale: int) -> Tensor:
    if scale not in (2, 4):
        raise ContractError(f"upsample scale must be 2 or 4, got {scale}")
    x = _as_tensor(x)
    n, c, h, w = x.data.shape
    rows = _interp_matrix(h, scale)
    cols_t = _interp_matrix(w, scale).T
    out = np.matmul(np.matmul(rows, x.data), cols_t)

    def bw(g, acc):
        _accum(acc, x, np.matmul(rows.T, np.matmul(g, cols_t.T)))

    return _make(out, (x,), bw)


def channel_log_softmax(x) -> Tensor:
    """Per-pixel log-probabilities over the class axis (axis 1 for 4-d, 0 for 3-d)."""
    x = _as_tensor(x)
    if x.data.ndim == 4:
        axis = 1
    elif x.data.ndim == 3:
        axis = 0
    else:
        raise DimensionError(f"log-softmax expects 3-d or 4-d input, got {x.data.shape}")
    if x.data.shape[axis] < 2:
        raise DimensionError("log-softmax needs at least 2 classes on the class axis")
    m = x.data.max(axis=axis, keepdims=True)
    z = x.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g, acc):
        _accum(acc, x, g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _make(out, (x,), bw)
