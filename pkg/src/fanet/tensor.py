"""Dense float arrays with reverse-mode automatic differentiation.

Every differentiable operation records a :class:`Node` holding its inputs and
an adjoint closure.  :class:`GradTape` collects the nodes reachable from a
scalar loss and replays their adjoints once each, in reverse execution order.

Broadcasting is deliberately narrow: equal shapes, size-1 operands (scalar
parameters), and 4-D gates of shape ``(B, C, 1, 1)`` or ``(B, 1, H, W)``
against ``(B, C, H, W)``.  Anything else raises :class:`ShapeError`.
"""
import contextlib
import functools
import itertools
import math

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import ShapeError, UsageError

DEFAULT_DTYPE = np.float32

_sequence = itertools.count()
_grad_enabled = True
_kink_log = None


@contextlib.contextmanager
def record_kinks():
    """Collect the branch decisions of piecewise ops (relu masks, argmax
    indices, clamps) so a caller can tell whether two evaluations took the
    same linear piece."""
    global _kink_log
    previous = _kink_log
    _kink_log = log = []
    try:
        yield log
    finally:
        _kink_log = previous


def _note_kink(arr):
    if _kink_log is not None:
        _kink_log.append(np.ascontiguousarray(arr).tobytes())


@contextlib.contextmanager
def no_grad():
    """Run operations without recording nodes."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Node:
    __slots__ = ("op", "inputs", "backward", "seq", "out")

    def __init__(self, op, inputs, backward, out):
        self.op = op
        self.inputs = inputs
        self.backward = backward
        self.seq = next(_sequence)
        self.out = out

    def __repr__(self):
        return f"Node({self.op}, seq={self.seq})"


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")

    def __init__(self, data, requires_grad=False, dtype=None):
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None

    @classmethod
    def _wrap(cls, arr):
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._node = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor._wrap(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Trainable leaf tensor.  ``name`` is the dotted path inside its model."""

    __slots__ = ("name",)

    def __init__(self, data, name="", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def _as_tensor(value, dtype):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _result(data, inputs, backward, op):
    out = Tensor._wrap(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = Node(op, inputs, backward, out)
    return out


class GradTape:
    """Operations reachable from ``root``, kept in execution order."""

    def __init__(self, root):
        self.root = root
        nodes = {}
        seen = set()
        stack = [root]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            node = t._node
            if node is not None:
                nodes[id(node)] = node
                stack.extend(node.inputs)
        self.ops = sorted(nodes.values(), key=lambda n: n.seq)

    def __len__(self):
        return len(self.ops)

    def backward(self, seed=None):
        """Replay adjoints; returns the ops in the order they were visited."""
        root = self.root
        if seed is None:
            seed = np.ones_like(root.data)
        visited = []
        if root._node is None:
            if root.requires_grad:
                _accumulate(root, seed)
            return visited
        pending = {id(root): seed}
        for node in reversed(self.ops):
            visited.append(node)
            g = pending.pop(id(node.out), None)
            if g is None:
                continue
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                if t._node is None:
                    _accumulate(t, gi)
                elif id(t) in pending:
                    pending[id(t)] = pending[id(t)] + gi
                else:
                    pending[id(t)] = gi
        return visited


def _accumulate(leaf, g):
    if g.shape != leaf.data.shape:
        g = g.reshape(leaf.data.shape)
    if leaf.grad is None:
        leaf.grad = np.array(g, dtype=leaf.data.dtype, copy=True)
    else:
        leaf.grad += g


def backward(loss):
    """Populate ``.grad`` of every leaf reachable from the scalar ``loss``.

    Leaf gradients accumulate across calls until zeroed.
    """
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor that requires grad")
    return GradTape(loss).backward()


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def _check_broadcast(a, b, op):
    if a == b:
        return
    for small, big in ((a, b), (b, a)):
        if math.prod(small) == 1:
            return
        if len(small) == 4 and len(big) == 4 and small[0] == big[0]:
            if small[1] == big[1] and small[2:] == (1, 1):
                return
            if small[1] == 1 and small[2:] == big[2:]:
                return
    dim = next((i for i, (x, y) in enumerate(zip(a, b)) if x != y), None) if len(a) == len(b) else "rank"
    raise ShapeError(f"{op}: cannot combine shapes {a} and {b}", dimension=dim)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if math.prod(shape) == 1:
        return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    return g.sum(axis=axes, keepdims=True)


def add(a, b):
    _check_broadcast(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), back, "add")


def mul(a, b):
    _check_broadcast(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def back(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result(ad * bd, (a, b), back, "mul")


def scale(a, factor):
    factor = a.dtype.type(factor)
    return _result(a.data * factor, (a,), lambda g: (g * factor,), "scale")


def sum(a):  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return _result(np.asarray(a.data.sum(), dtype=a.dtype), (a,),
                   lambda g: (np.broadcast_to(g, shape).astype(a.dtype),), "sum")


def mean(a):
    shape, n = a.shape, a.size
    return _result(np.asarray(a.data.mean(), dtype=a.dtype), (a,),
                   lambda g: (np.broadcast_to(g / n, shape).astype(a.dtype),), "mean")


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a, shape):
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {old} -> {shape}", dimension="size") from exc
    return _result(out, (a,), lambda g: (g.reshape(old),), "reshape")


def permute(a, axes):
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return _result(out, (a,), lambda g: (np.ascontiguousarray(g.transpose(inverse)),), "permute")


def concat(tensors, axis=1):
    """Concatenate along ``axis`` (channels by default), preserving order."""
    if not tensors:
        raise ShapeError("concat of an empty list", dimension="count")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref):
            raise ShapeError(f"concat: rank {len(t.shape)} vs {len(ref)}", dimension="rank")
        for i, (x, y) in enumerate(zip(t.shape, ref)):
            if i != axis and x != y:
                raise ShapeError(f"concat: shapes {t.shape} and {ref}", dimension=i)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, bounds, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back, "concat")


concat_channels = functools.partial(concat, axis=1)


def matmul(a, b):
    """Batched matrix product over the last two axes; batch axes must match."""
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
        raise ShapeError(f"matmul: ranks {a.ndim} and {b.ndim}", dimension="rank")
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dims {a.shape[:-2]} vs {b.shape[:-2]}", dimension="batch")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims {a.shape[-1]} vs {b.shape[-2]}", dimension="inner")
    ad, bd = a.data, b.data

    def back(g):
        return np.matmul(g, np.swapaxes(bd, -1, -2)), np.matmul(np.swapaxes(ad, -1, -2), g)

    return _result(np.matmul(ad, bd), (a, b), back, "matmul")


batched_matmul = matmul


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def relu(a):
    mask = a.data > 0
    _note_kink(mask)
    return _result(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a):
    """Logistic function, clipped so outputs stay strictly inside (0, 1)."""
    info = np.finfo(a.dtype)
    y = np.clip(expit(a.data), info.tiny, 1 - info.epsneg).astype(a.dtype)
    return _result(y, (a,), lambda g: (g * y * (1 - y),), "sigmoid")


def softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (a,), back, "softmax")


def softmax_lastdim(a):
    return softmax(a, axis=-1)


# ---------------------------------------------------------------------------
# pooling and reductions
# ---------------------------------------------------------------------------

def _require_4d(a, op):
    if a.ndim != 4:
        raise ShapeError(f"{op} expects (B, C, H, W), got {a.shape}", dimension="rank")


def global_avg_pool(a):
    """(B, C, H, W) -> (B, C, 1, 1) spatial mean."""
    _require_4d(a, "global_avg_pool")
    B, C, H, W = a.shape
    if H * W == 0:
        raise ShapeError("global_avg_pool over an empty plane", dimension="spatial")
    n = H * W
    out = a.data.mean(axis=(2, 3), keepdims=True)
    return _result(out, (a,), lambda g: (np.broadcast_to(g / n, a.shape).astype(a.dtype),),
                   "global_avg_pool")


def global_max_pool(a):
    """(B, C, H, W) -> (B, C, 1, 1) spatial max.

    The gradient goes to the first maximal element in row-major order.
    """
    _require_4d(a, "global_max_pool")
    B, C, H, W = a.shape
    if H * W == 0:
        raise ShapeError("global_max_pool over an empty plane", dimension="spatial")
    flat = a.data.reshape(B, C, H * W)
    idx = flat.argmax(axis=2)[..., None]
    _note_kink(idx)
    out = np.take_along_axis(flat, idx, axis=2).reshape(B, C, 1, 1)

    def back(g):
        gx = np.zeros_like(flat)
        np.put_along_axis(gx, idx, g.reshape(B, C, 1), axis=2)
        return (gx.reshape(a.shape),)

    return _result(out, (a,), back, "global_max_pool")


def channel_mean(a):
    """(B, C, H, W) -> (B, 1, H, W) mean across channels."""
    _require_4d(a, "channel_mean")
    C = a.shape[1]
    if C == 0:
        raise ShapeError("channel_mean over zero channels", dimension="channels")
    out = a.data.mean(axis=1, keepdims=True)
    return _result(out, (a,), lambda g: (np.broadcast_to(g / C, a.shape).astype(a.dtype),),
                   "channel_mean")


def channel_max(a):
    """(B, C, H, W) -> (B, 1, H, W) max across channels, first channel wins ties."""
    _require_4d(a, "channel_max")
    if a.shape[1] == 0:
        raise ShapeError("channel_max over zero channels", dimension="channels")
    idx = a.data.argmax(axis=1)[:, None]
    _note_kink(idx)
    out = np.take_along_axis(a.data, idx, axis=1)

    def back(g):
        gx = np.zeros_like(a.data)
        np.put_along_axis(gx, idx, g, axis=1)
        return (gx,)

    return _result(out, (a,), back, "channel_max")


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=256)
def _interp_matrix(n_in, n_out, dtype):
    """Row i holds the half-pixel linear interpolation weights of output i."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    ratio = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * ratio - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    m = m.astype(dtype)
    m.setflags(write=False)
    return m


def bilinear_upsample(a, out_h, out_w):
    """Bilinear resize of a (B, C, H, W) map with half-pixel centres."""
    _require_4d(a, "bilinear_upsample")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_upsample to {out_h}x{out_w}", dimension="output size")
    H, W = a.shape[2:]
    if (H, W) == (out_h, out_w):
        return _result(a.data.copy(), (a,), lambda g: (g,), "resize_identity")
    ry = _interp_matrix(H, out_h, a.dtype)
    rx = _interp_matrix(W, out_w, a.dtype)
    out = np.matmul(np.matmul(ry, a.data), rx.T)

    def back(g):
        return (np.matmul(np.matmul(ry.T, g), rx),)

    return _result(out, (a,), back, "bilinear_upsample")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

PAD_MODES = ("zeros", "replicate")


def _pad(x, p, mode):
    if p == 0:
        return x
    if mode == "zeros":
        return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode="edge")


def _unpad(g, p, mode):
    if p == 0:
        return g
    inner = g[:, :, p:-p, p:-p]
    if mode == "zeros":
        return np.ascontiguousarray(inner)
    # edge replication: fold the border bands back onto the outermost rows/cols
    rows = g[:, :, p:-p, :].copy()
    rows[:, :, 0, :] += g[:, :, :p, :].sum(axis=2)
    rows[:, :, -1, :] += g[:, :, -p:, :].sum(axis=2)
    out = rows[:, :, :, p:-p].copy()
    out[:, :, :, 0] += rows[:, :, :, :p].sum(axis=3)
    out[:, :, :, -1] += rows[:, :, :, -p:].sum(axis=3)
    return out


def conv_output_size(n, k, stride, padding, dilation):
    return (n + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv2d(x, weight, bias=None, stride=1, padding=0, dilation=1, pad_mode="zeros"):
    """2-D cross-correlation of ``x`` (B, C, H, W) with ``weight`` (O, C, kh, kw)."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be (B, C, H, W), got {x.shape}", dimension="rank")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be (O, C, kh, kw), got {weight.shape}",
                         dimension="weight rank")
    B, C, H, W = x.shape
    O, Ci, kh, kw = weight.shape
    if C != Ci:
        raise ShapeError(f"conv2d: input has {C} channels, weight expects {Ci}",
                         dimension="channels")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ShapeError(f"conv2d: stride={stride} dilation={dilation} padding={padding}",
                         dimension="hyperparameters")
    if pad_mode not in PAD_MODES:
        raise ShapeError(f"conv2d: unknown pad mode {pad_mode!r}", dimension="pad_mode")
    if bias is not None and bias.shape != (O,):
        raise ShapeError(f"conv2d: bias shape {bias.shape}, expected ({O},)", dimension="bias")
    Ho = conv_output_size(H, kh, stride, padding, dilation)
    Wo = conv_output_size(W, kw, stride, padding, dilation)
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d: input {H}x{W} too small for kernel {kh}x{kw} "
                         f"(dilation {dilation}, padding {padding})", dimension="spatial")
    if pad_mode == "replicate" and padding > 0 and (H == 0 or W == 0):
        raise ShapeError("conv2d: cannot replicate-pad an empty plane", dimension="spatial")

    xp = _pad(x.data, padding, pad_mode)
    Hp, Wp = xp.shape[2:]
    cols = kernels.im2col(xp, kh, kw, stride, dilation, Ho, Wo)
    w2 = weight.data.reshape(O, -1)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(O, B, Ho, Wo).transpose(1, 0, 2, 3))

    def back(g):
        gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(O, -1)
        gw = (gm @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = w2.T @ gm
            gxp = kernels.col2im(gcols, B, C, Hp, Wp, kh, kw, stride, dilation, Ho, Wo)
            gx = _unpad(gxp, padding, pad_mode)
        if bias is None:
            return gx, gw
        return gx, gw, gm.sum(axis=1)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, inputs, back, "conv2d")


# ---------------------------------------------------------------------------
# normalisation and loss
# ---------------------------------------------------------------------------

def layer_norm_channels(x, weight, bias, eps=1e-5):
    """Layer normalisation over the channel axis of a (B, C, H, W) map."""
    _require_4d(x, "layer_norm_channels")
    C = x.shape[1]
    if weight.shape != (C,) or bias.shape != (C,):
        raise ShapeError(f"layer_norm: affine shapes {weight.shape}/{bias.shape} for C={C}",
                         dimension="channels")
    mu = x.data.mean(axis=1, keepdims=True)
    centred = x.data - mu
    var = (centred * centred).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = centred * inv
    w = weight.data[None, :, None, None]
    out = xhat * w + bias.data[None, :, None, None]

    def back(g):
        gxhat = g * w
        gx = inv * (gxhat - gxhat.mean(axis=1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=1, keepdims=True))
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return _result(out, (x, weight, bias), back, "layer_norm")


def bce_with_logits(logits, target, eps=1e-7):
    """Mean binary cross-entropy of ``sigmoid(logits)`` against a 0/1 target.

    Probabilities are clamped to ``[eps, 1 - eps]``; this is done in logit
    space, so the gradient is ``(p - t) / n`` inside the clamp and zero outside.
    """
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if t.shape != logits.shape:
        raise ShapeError(f"bce: target {t.shape} vs prediction {logits.shape}", dimension="shape")
    z = logits.data.astype(np.float64)
    bound = math.log((1 - eps) / eps)
    zc = np.clip(z, -bound, bound)
    t64 = t.astype(np.float64)
    # -[t log s(z) + (1-t) log(1-s(z))] = softplus(z) - t z
    losses = np.logaddexp(0.0, zc) - t64 * zc
    n = z.size
    value = np.asarray(losses.sum() / n, dtype=logits.dtype)
    inside = (z >= -bound) & (z <= bound)
    _note_kink(inside)

    def back(g):
        grad = (expit(zc) - t64) / n * inside
        return ((grad * float(g)).astype(logits.dtype),)

    return _result(value, (logits,), back, "bce")
