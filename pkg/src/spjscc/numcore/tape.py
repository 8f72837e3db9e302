"""Reverse-mode autodiff on dense numpy tensors.

A Tape records every operation as it runs (define-by-run). Each node stores
its op kind, input node ids and forward value; backward() walks the records in
reverse and accumulates gradients with hand-written per-op rules. Training
uses float32 tapes; the gradient-check suite runs the same graphs in float64.

Shape conventions
-----------------
Images and feature maps are (N, C, H, W), C-contiguous. conv2d uses zero
padding k//2 per side, so stride 1 with an odd kernel preserves H and W, and
stride s gives H_out = (H + 2*(k//2) - k)//s + 1 (H/2 for even H, k=3, s=2).
transposed-conv2d with stride s, padding k//2 and implicit output padding s-1
maps H to exactly H*s for odd kernels. dense flattens all trailing axes of its
input to (N, K) before the matrix product.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested op."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf, or was fed a non-finite gradient."""


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def _pad_hw(x, ph, pw):
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _contig(a, dtype):
    # ascontiguousarray promotes 0-d to (1,); keep scalars 0-d
    a = np.asarray(a, dtype=dtype)
    return a if a.ndim == 0 else np.ascontiguousarray(a)


class Node:
    __slots__ = ("kind", "inputs", "value", "attrs")

    def __init__(self, kind, inputs, value, attrs):
        self.kind = kind
        self.inputs = inputs
        self.value = value
        self.attrs = attrs


class Tensor:
    """Handle to one node on a tape. Immutable once recorded."""

    __slots__ = ("tape", "nid")

    def __init__(self, tape, nid):
        self.tape = tape
        self.nid = nid

    @property
    def value(self):
        return self.tape.nodes[self.nid].value

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def __repr__(self):
        return f"Tensor(nid={self.nid}, shape={self.shape})"


# ---------------------------------------------------------------------------
# op kernels: forward(attrs, *input_arrays) -> array
#             backward(attrs, grad, input_arrays, out_array) -> per-input grads
# ---------------------------------------------------------------------------


def _conv2d_fwd(attrs, x, w, *rest):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d wants 4-d input/weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs weight {w.shape}")
    s = attrs["stride"]
    kh, kw = w.shape[2], w.shape[3]
    ph, pw = kh // 2, kw // 2
    xp = _pad_hw(x, ph, pw)
    ho = (x.shape[2] + 2 * ph - kh) // s + 1
    wo = (x.shape[3] + 2 * pw - kw) // s + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::s, ::s]  # (N, Cin, ho, wo, kh, kw)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # (N, ho, wo, Cout)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if rest:
        out += rest[0].reshape(1, -1, 1, 1)
    assert out.shape[2:] == (ho, wo)
    return out


def _conv2d_bwd(attrs, g, inputs, out):
    x, w = inputs[0], inputs[1]
    s = attrs["stride"]
    kh, kw = w.shape[2], w.shape[3]
    ph, pw = kh // 2, kw // 2
    ho, wo = g.shape[2], g.shape[3]
    xp = _pad_hw(x, ph, pw)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # (Cout, Cin, kh, kw)
    gxp = np.zeros_like(xp)
    for ki in range(kh):
        for kj in range(kw):
            patch = np.tensordot(g, w[:, :, ki, kj], axes=([1], [0]))  # (N, ho, wo, Cin)
            gxp[:, :, ki:ki + s * ho:s, kj:kj + s * wo:s] += patch.transpose(0, 3, 1, 2)
    gx = gxp[:, :, ph:ph + x.shape[2], pw:pw + x.shape[3]]
    grads = [np.ascontiguousarray(gx), gw]
    if len(inputs) == 3:
        grads.append(g.sum(axis=(0, 2, 3)))
    return grads


def _tconv2d_fwd(attrs, x, w, *rest):
    # weight layout (Cin, Cout, kh, kw); output spatial size = input * stride
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"transposed-conv2d wants 4-d input/weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"transposed-conv2d channel mismatch: input {x.shape} vs weight {w.shape}")
    s = attrs["stride"]
    n, _, h, ww_ = x.shape
    kh, kw = w.shape[2], w.shape[3]
    ph, pw = kh // 2, kw // 2
    ho, wo = h * s, ww_ * s
    buf = np.zeros((n, w.shape[1], ho + 2 * ph, wo + 2 * pw), dtype=x.dtype)
    for ki in range(kh):
        for kj in range(kw):
            patch = np.tensordot(x, w[:, :, ki, kj], axes=([1], [0]))  # (N, h, w, Cout)
            buf[:, :, ki:ki + s * h:s, kj:kj + s * ww_:s] += patch.transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(buf[:, :, ph:ph + ho, pw:pw + wo])
    if rest:
        out += rest[0].reshape(1, -1, 1, 1)
    return out


def _tconv2d_bwd(attrs, g, inputs, out):
    x, w = inputs[0], inputs[1]
    s = attrs["stride"]
    n, _, h, ww_ = x.shape
    kh, kw = w.shape[2], w.shape[3]
    ph, pw = kh // 2, kw // 2
    gp = _pad_hw(g, ph, pw)
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    for ki in range(kh):
        for kj in range(kw):
            sl = gp[:, :, ki:ki + s * h:s, kj:kj + s * ww_:s]  # (N, Cout, h, w)
            gx += np.tensordot(sl, w[:, :, ki, kj], axes=([1], [1])).transpose(0, 3, 1, 2)
            gw[:, :, ki, kj] = np.tensordot(x, sl, axes=([0, 2, 3], [0, 2, 3]))
    grads = [gx, gw]
    if len(inputs) == 3:
        grads.append(g.sum(axis=(0, 2, 3)))
    return grads


def _dense_fwd(attrs, x, w, *rest):
    x2 = x.reshape(x.shape[0], -1)
    if x2.shape[1] != w.shape[0]:
        raise ShapeError(f"dense mismatch: input {x.shape} flattens to {x2.shape} vs weight {w.shape}")
    out = x2 @ w
    if rest:
        out = out + rest[0]
    return out


def _dense_bwd(attrs, g, inputs, out):
    x, w = inputs[0], inputs[1]
    x2 = x.reshape(x.shape[0], -1)
    gx = (g @ w.T).reshape(x.shape)
    gw = x2.T @ g
    grads = [gx, gw]
    if len(inputs) == 3:
        grads.append(g.sum(axis=0))
    return grads


def _prelu_fwd(attrs, x, slope):
    if slope.ndim not in (0, 1):
        raise ShapeError(f"prelu slope must be scalar or per-channel, got {slope.shape}")
    s = slope if slope.ndim == 0 else slope.reshape((1, -1) + (1,) * (x.ndim - 2))
    return np.where(x > 0, x, x * s)


def _prelu_bwd(attrs, g, inputs, out):
    x, slope = inputs
    neg = x <= 0
    s = slope if slope.ndim == 0 else slope.reshape((1, -1) + (1,) * (x.ndim - 2))
    gx = g * np.where(neg, s, np.asarray(1.0, dtype=x.dtype))
    gs_full = g * x * neg
    if slope.ndim == 0:
        gs = gs_full.sum()
    else:
        axes = (0,) + tuple(range(2, x.ndim))
        gs = gs_full.sum(axis=axes)
    return [gx, gs]


def _mean_pool_fwd(attrs, x):
    k = attrs["k"]
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"mean-pool needs H,W divisible by {k}, got {x.shape}")
    return x.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))


def _mean_pool_bwd(attrs, g, inputs, out):
    k = attrs["k"]
    g = g / (k * k)
    return [np.repeat(np.repeat(g, k, axis=2), k, axis=3)]


def _softmax_bwd(attrs, g, inputs, out):
    dot = (g * out).sum(axis=-1, keepdims=True)
    return [out * (g - dot)]


def _ce_fwd(attrs, logits):
    labels = attrs["labels"]
    if logits.ndim != 2 or len(labels) != logits.shape[0]:
        raise ShapeError(f"cross-entropy wants (N,C) logits matching {len(labels)} labels, got {logits.shape}")
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    picked = logits[np.arange(logits.shape[0]), labels]
    return np.asarray((lse - picked).mean(), dtype=logits.dtype)


def _ce_bwd(attrs, g, inputs, out):
    logits = inputs[0]
    labels = attrs["labels"]
    p = _softmax(logits)
    p[np.arange(logits.shape[0]), labels] -= 1.0
    return [p * (g / logits.shape[0])]


def _concat_bwd(attrs, g, inputs, out):
    axis = attrs["axis"]
    sizes = [a.shape[axis] for a in inputs]
    return list(np.split(g, np.cumsum(sizes)[:-1], axis=axis))


def _reduce_fwd(attrs, x, mean):
    axis = attrs["axis"]
    keepdims = attrs["keepdims"]
    r = x.mean(axis=axis, keepdims=keepdims) if mean else x.sum(axis=axis, keepdims=keepdims)
    return np.asarray(r, dtype=x.dtype)


def _reduce_bwd(attrs, g, inputs, out, mean):
    x = inputs[0]
    axis = attrs["axis"]
    if axis is None:
        count = x.size
        gg = np.broadcast_to(g, x.shape)
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(a % x.ndim for a in axes)
        count = int(np.prod([x.shape[a] for a in axes]))
        if not attrs["keepdims"]:
            g = np.expand_dims(g, axes)
        gg = np.broadcast_to(g, x.shape)
    return [gg / count if mean else gg.copy()]


def _slice_fwd(attrs, x):
    axis, start, stop = attrs["axis"], attrs["start"], attrs["stop"]
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    return np.ascontiguousarray(x[tuple(idx)])


def _slice_bwd(attrs, g, inputs, out):
    x = inputs[0]
    gx = np.zeros_like(x)
    idx = [slice(None)] * x.ndim
    idx[attrs["axis"]] = slice(attrs["start"], attrs["stop"])
    gx[tuple(idx)] = g
    return [gx]


def _binary_shape_check(kind, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast") from None


_OPS = {
    "add": (
        lambda at, a, b: (_binary_shape_check("add", a, b), a + b)[1],
        lambda at, g, ins, out: [_unbroadcast(g, ins[0].shape), _unbroadcast(g, ins[1].shape)],
    ),
    "mul": (
        lambda at, a, b: (_binary_shape_check("mul", a, b), a * b)[1],
        lambda at, g, ins, out: [
            _unbroadcast(g * ins[1], ins[0].shape),
            _unbroadcast(g * ins[0], ins[1].shape),
        ],
    ),
    "scalar-mul": (
        lambda at, a: a * at["c"],
        lambda at, g, ins, out: [g * at["c"]],
    ),
    "relu": (
        lambda at, a: np.maximum(a, 0),
        lambda at, g, ins, out: [g * (ins[0] > 0)],
    ),
    "prelu": (_prelu_fwd, _prelu_bwd),
    "sigmoid": (
        lambda at, a: _stable_sigmoid(a),
        lambda at, g, ins, out: [g * out * (1.0 - out)],
    ),
    "softmax": (lambda at, a: _softmax(a), _softmax_bwd),
    "sqrt": (
        lambda at, a: np.sqrt(a),
        lambda at, g, ins, out: [g / (2.0 * out)],
    ),
    "reciprocal": (
        lambda at, a: 1.0 / a,
        lambda at, g, ins, out: [-g * out * out],
    ),
    "conv2d": (_conv2d_fwd, _conv2d_bwd),
    "transposed-conv2d": (_tconv2d_fwd, _tconv2d_bwd),
    "dense": (_dense_fwd, _dense_bwd),
    "mean-pool": (_mean_pool_fwd, _mean_pool_bwd),
    "global-mean-pool": (
        lambda at, a: a.mean(axis=(2, 3)),
        lambda at, g, ins, out: [
            np.broadcast_to(
                g[:, :, None, None] / (ins[0].shape[2] * ins[0].shape[3]), ins[0].shape
            ).copy()
        ],
    ),
    "concat": (
        lambda at, *arrs: np.concatenate(arrs, axis=at["axis"]),
        _concat_bwd,
    ),
    "sum": (
        lambda at, a: _reduce_fwd(at, a, mean=False),
        lambda at, g, ins, out: _reduce_bwd(at, g, ins, out, mean=False),
    ),
    "mean": (
        lambda at, a: _reduce_fwd(at, a, mean=True),
        lambda at, g, ins, out: _reduce_bwd(at, g, ins, out, mean=True),
    ),
    "cross-entropy-with-logits": (_ce_fwd, _ce_bwd),
    "reshape": (
        lambda at, a: a.reshape(at["shape"]),
        lambda at, g, ins, out: [g.reshape(ins[0].shape)],
    ),
    "slice": (_slice_fwd, _slice_bwd),
    # forward: hard threshold; backward: straight-through identity
    "ste-threshold": (
        lambda at, a: (a > at["threshold"]).astype(a.dtype),
        lambda at, g, ins, out: [g.copy()],
    ),
}

OP_KINDS = tuple(sorted(_OPS))


class Tape:
    """Ordered record of ops plus a registry of named parameters."""

    def __init__(self, dtype=np.float32, check_finite=True):
        self.dtype = np.dtype(dtype)
        self.check_finite = check_finite
        self.nodes = []
        self.params = {}  # name -> node id

    # -- construction -------------------------------------------------------

    def leaf(self, value):
        """Record a constant/input tensor (gradient sink, no inputs)."""
        arr = _contig(value, self.dtype)
        self.nodes.append(Node("leaf", (), arr, None))
        return Tensor(self, len(self.nodes) - 1)

    def parameter(self, name, value):
        """Record a named parameter leaf; backward can be queried by name."""
        if name in self.params:
            raise ValueError(f"parameter {name!r} already on tape")
        t = self.leaf(value)
        self.params[name] = t.nid
        return t

    def apply(self, kind, inputs, **attrs):
        """Run one op and append it to the tape.

        `inputs` is a sequence of Tensors living on this tape. Raises
        ShapeError on incompatible operands and NonFiniteError if the op
        produces NaN/Inf (when check_finite is on).
        """
        if kind not in _OPS:
            raise ValueError(f"unknown op kind {kind!r}; valid: {OP_KINDS}")
        for t in inputs:
            if t.tape is not self:
                raise ValueError("input tensor belongs to a different tape")
        arrays = [self.nodes[t.nid].value for t in inputs]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = _OPS[kind][0](attrs, *arrays)
        out = _contig(out, self.dtype)
        if self.check_finite and not np.isfinite(out).all():
            raise NonFiniteError(f"op {kind!r} produced non-finite values")
        self.nodes.append(Node(kind, tuple(t.nid for t in inputs), out, attrs))
        return Tensor(self, len(self.nodes) - 1)

    # -- convenience wrappers -----------------------------------------------

    def add(self, a, b):
        return self.apply("add", (a, b))

    def mul(self, a, b):
        return self.apply("mul", (a, b))

    def scalar_mul(self, a, c):
        return self.apply("scalar-mul", (a,), c=float(c))

    def relu(self, a):
        return self.apply("relu", (a,))

    def prelu(self, a, slope):
        return self.apply("prelu", (a, slope))

    def sigmoid(self, a):
        return self.apply("sigmoid", (a,))

    def softmax(self, a):
        return self.apply("softmax", (a,))

    def sqrt(self, a):
        return self.apply("sqrt", (a,))

    def reciprocal(self, a):
        return self.apply("reciprocal", (a,))

    def conv2d(self, x, w, b=None, stride=1):
        ins = (x, w) if b is None else (x, w, b)
        return self.apply("conv2d", ins, stride=int(stride))

    def tconv2d(self, x, w, b=None, stride=2):
        ins = (x, w) if b is None else (x, w, b)
        return self.apply("transposed-conv2d", ins, stride=int(stride))

    def dense(self, x, w, b=None):
        ins = (x, w) if b is None else (x, w, b)
        return self.apply("dense", ins)

    def mean_pool(self, x, k=2):
        return self.apply("mean-pool", (x,), k=int(k))

    def global_mean_pool(self, x):
        return self.apply("global-mean-pool", (x,))

    def concat(self, tensors, axis):
        return self.apply("concat", tuple(tensors), axis=int(axis))

    def reduce_sum(self, x, axis=None, keepdims=False):
        return self.apply("sum", (x,), axis=axis, keepdims=keepdims)

    def reduce_mean(self, x, axis=None, keepdims=False):
        return self.apply("mean", (x,), axis=axis, keepdims=keepdims)

    def cross_entropy(self, logits, labels):
        labels = np.asarray(labels, dtype=np.int64)
        return self.apply("cross-entropy-with-logits", (logits,), labels=labels)

    def reshape(self, x, shape):
        return self.apply("reshape", (x,), shape=tuple(shape))

    def slice(self, x, axis, start, stop):
        return self.apply("slice", (x,), axis=int(axis), start=int(start), stop=int(stop))

    def ste_threshold(self, x, threshold=0.5):
        return self.apply("ste-threshold", (x,), threshold=float(threshold))

    # -- execution ----------------------------------------------------------

    def replay(self):
        """Recompute every non-leaf value in record order (bit-identical)."""
        for node in self.nodes:
            if node.kind == "leaf":
                continue
            arrays = [self.nodes[i].value for i in node.inputs]
            out = _OPS[node.kind][0](node.attrs, *arrays)
            node.value = _contig(out, self.dtype)

    def backward(self, output, seed=None, wrt=()):
        """Gradients of `output` w.r.t. each tensor in `wrt`.

        `seed` defaults to 1.0 for scalar outputs and must otherwise match the
        output shape. Gradients accumulate across all paths; tensors that do
        not feed `output` get zeros.
        """
        out_node = self.nodes[output.nid]
        if seed is None:
            if out_node.value.ndim != 0:
                raise ShapeError(f"non-scalar output {out_node.value.shape} needs an explicit seed gradient")
            seed = np.asarray(1.0, dtype=self.dtype)
        else:
            seed = np.asarray(seed, dtype=self.dtype)
            if seed.shape != out_node.value.shape:
                raise ShapeError(f"seed gradient shape {seed.shape} != output shape {out_node.value.shape}")
        for t in wrt:
            if t.tape is not self:
                raise ValueError("wrt tensor not on this tape")

        grads = {output.nid: seed.astype(self.dtype, copy=True)}
        for nid in range(output.nid, -1, -1):
            g = grads.pop(nid, None)
            if g is None:
                continue
            node = self.nodes[nid]
            if node.kind == "leaf":
                grads[nid] = g  # keep for wrt lookup
                continue
            if self.check_finite and not np.isfinite(g).all():
                raise NonFiniteError(f"non-finite gradient flowing into op {node.kind!r}")
            arrays = [self.nodes[i].value for i in node.inputs]
            in_grads = _OPS[node.kind][1](node.attrs, g, arrays, node.value)
            for iid, ig in zip(node.inputs, in_grads):
                if iid in grads:
                    grads[iid] = grads[iid] + ig
                else:
                    grads[iid] = ig.astype(self.dtype, copy=False)
        return [
            grads.get(t.nid, np.zeros_like(self.nodes[t.nid].value)) for t in wrt
        ]

    def grad_by_name(self, output, seed=None, names=None):
        """backward() keyed by parameter name; `names` defaults to all."""
        if names is None:
            names = sorted(self.params)
        tensors = [Tensor(self, self.params[n]) for n in names]
        gs = self.backward(output, seed=seed, wrt=tensors)
        return dict(zip(names, gs))


def forward(tape, op_kind, inputs, **attrs):
    """Record one op on `tape`; functional alias for Tape.apply."""
    return tape.apply(op_kind, inputs, **attrs)


def backward(tape, output, seed=None, wrt=()):
    """Functional alias for Tape.backward."""
    return tape.backward(output, seed=seed, wrt=wrt)
