"""Dense tensors with reverse-mode automatic differentiation.

Values are numpy arrays; gradients are computed by replaying a tape of
recorded operations in reverse. A tape is opened for exactly one training
step (``with Tape(): ...``) and is consumed by a single ``backward`` call.
Tensors created outside a tape, or from inputs that do not require
gradients, are plain values and cost nothing extra.

Broadcasting is deliberately narrow: bias addition inside ``linear`` and
``conv2d``, channel-wise map multiplication in ``mul``, and scalars. There
is no GPU path and no operator fusion.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ContractError, DimensionError, InputError

_ACTIVE_TAPE = None


class Tape:
    """Ordered record of differentiable operations for one backward pass.

    Exactly one tape may be active at a time; it is owned by the training
    step that opened it. Replaying the recorded backward rules in reverse
    order yields exact reverse-mode gradients of a scalar root.
    """

    def __init__(self):
        self._nodes = []
        self._consumed = False

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise ContractError("a tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, root: "Tensor") -> None:
        """Populate ``grad`` on every recorded tensor reachable from ``root``."""
        if self._consumed:
            raise ContractError(
                "backward called twice on the same tape; re-record the forward pass"
            )
        if root.tape is not self:
            raise ContractError("root tensor is not connected to this tape")
        if root.data.size != 1:
            raise ContractError(
                f"backward root must be scalar, got shape {root.data.shape}"
            )
        self._consumed = True
        root.grad = np.ones_like(root.data)
        for node in reversed(self._nodes):
            out_grad = node.output.grad
            if out_grad is None:
                continue
            for inp, g in zip(node.inputs, node.backward(out_grad)):
                if g is None or not inp.requires_grad:
                    continue
                if inp.grad is None:
                    inp.grad = g
                else:
                    inp.grad = inp.grad + g
        # The node list closes a reference cycle (tensor -> tape -> node ->
        # tensor) that otherwise waits for a full gc pass; a consumed tape
        # holds hundreds of MB of activations, so release them eagerly.
        self._nodes.clear()


class _Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tensor:
    """A dense real array, optionally attached to the active tape.

    ``data`` is treated as immutable once the tensor participates in a
    recorded operation; only the optimizer mutates parameter data, between
    steps, after the step's tape has been dropped.
    """

    __slots__ = ("data", "grad", "requires_grad", "tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars and same-dtype tensors only
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return take_slice(self, key)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """A trainable tensor with a stable name and a weight-decay flag."""

    __slots__ = ("name", "decay")

    def __init__(self, data, name: str, decay: bool = True, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.decay = decay


def _as_const(value, like: Tensor) -> np.ndarray:
    return np.asarray(value, dtype=like.data.dtype)


def _record(out_data, inputs, backward) -> Tensor:
    """Wrap ``out_data`` in a Tensor, recording the op if a tape is active.

    ``backward(grad_out)`` must return one gradient array (or None) per
    entry of ``inputs``. Exposed for the quantizer's straight-through op.
    """
    tensor_inputs = tuple(i for i in inputs if isinstance(i, Tensor))
    tape = _ACTIVE_TAPE
    track = tape is not None and any(i.requires_grad for i in tensor_inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        out.tape = tape
        tape._nodes.append(_Node(tensor_inputs, out, backward))
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _coerce_pair(a, b):
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        b = Tensor(_as_const(b, a))
    return a, b


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise DimensionError(
            f"{op}: shapes {a.data.shape} and {b.data.shape} are incompatible"
        ) from None


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast(a, b, "add")
    out_data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast(a, b, "sub")
    out_data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast(a, b, "mul")
    out_data = a.data * b.data

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _record(out_data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,))


def log(a: Tensor) -> Tensor:
    out_data = np.log(a.data)
    return _record(out_data, (a,), lambda g: (g / a.data,))


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return _record(out_data, (a,), lambda g: (g * out_data,))


def square(a: Tensor) -> Tensor:
    return _record(a.data * a.data, (a,), lambda g: (g * (2.0 * a.data),))


def relu(a: Tensor) -> Tensor:
    # subgradient at 0 is 0
    out_data = np.maximum(a.data, 0.0)
    return _record(out_data, (a,), lambda g: (g * (a.data > 0),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out_data[~pos] = e / (1.0 + e)

    def backward(g):
        return (g * out_data * (1.0 - out_data),)

    return _record(out_data, (a,), backward)


def softplus(a: Tensor) -> Tensor:
    # ln(1 + e^x); for x > 30 the linear branch is exact to double precision
    x = a.data
    out_data = np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))

    def backward(g):
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        e = np.exp(x[~pos])
        s[~pos] = e / (1.0 + e)
        return (g * s,)

    return _record(out_data, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out_data = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(
            f"reshape: cannot view {a.data.shape} as {shape}"
        ) from None
    return _record(out_data, (a,), lambda g: (g.reshape(a.data.shape),))


def flatten(a: Tensor, start_axis: int = 1) -> Tensor:
    lead = a.data.shape[:start_axis]
    return reshape(a, lead + (-1,))


def take_slice(a: Tensor, key) -> Tensor:
    """Basic (non-fancy) indexing with gradient scatter on the backward pass."""
    out_data = a.data[key]

    def backward(g):
        gx = np.zeros_like(a.data)
        gx[key] = g
        return (gx,)

    return _record(out_data, (a,), backward)


def take(values: Tensor, indices: np.ndarray) -> Tensor:
    """Gather ``values[indices]``; gradients scatter-add back per index."""
    indices = np.asarray(indices)
    if indices.size and (indices.min() < 0 or indices.max() >= values.data.shape[0]):
        raise InputError("take: index out of range")
    out_data = values.data[indices]

    def backward(g):
        gv = np.zeros_like(values.data)
        np.add.at(gv, indices.ravel(), g.ravel())
        return (gv,)

    return _record(out_data, (values,), backward)


def sum_all(a: Tensor) -> Tensor:
    out_data = a.data.sum()

    def backward(g):
        return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=False),)

    return _record(out_data, (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out_data = a.data.mean()

    def backward(g):
        return (np.broadcast_to(g / n, a.data.shape).astype(a.data.dtype, copy=False),)

    return _record(out_data, (a,), backward)


def stop_gradient(a: Tensor) -> Tensor:
    """Pass the value through while blocking all gradient flow."""
    return Tensor(a.data)


def linear(inp: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """inp[N,D] @ weight[D,M] + bias[M]."""
    if inp.data.ndim != 2 or weight.data.ndim != 2:
        raise DimensionError("linear: input and weight must be rank 2")
    if inp.data.shape[1] != weight.data.shape[0]:
        raise DimensionError(
            f"linear: inner dimensions disagree "
            f"({inp.data.shape[1]} vs {weight.data.shape[0]})"
        )
    if bias.data.shape != (weight.data.shape[1],):
        raise DimensionError("linear: bias shape must be (M,)")
    out_data = inp.data @ weight.data + bias.data

    def backward(g):
        return g @ weight.data.T, inp.data.T @ g, g.sum(axis=0)

    return _record(out_data, (inp, weight, bias), backward)


def _im2col(padded: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int):
    n, c, _, _ = padded.shape
    s0, s1, s2, s3 = padded.strides
    shape = (n, c, kh, kw, ho, wo)
    strides = (s0, s1, s2, s3, s2 * stride, s3 * stride)
    cols = np.lib.stride_tricks.as_strided(padded, shape=shape, strides=strides)
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im(gcols: np.ndarray, x_shape, kh, kw, stride, padding, ho, wo):
    n, c, h, w = x_shape
    g6 = gcols.reshape(n, c, kh, kw, ho, wo)
    gx = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += g6[
                :, :, i, j
            ]
    if padding:
        gx = gx[:, :, padding : padding + h, padding : padding + w]
    return gx


def conv2d(
    inp: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0
) -> Tensor:
    """2-D cross-correlation of inp[N,C,H,W] with weight[F,C,kH,kW] plus bias[F].

    Output spatial extents are floor((H + 2*padding - kH)/stride) + 1 and the
    analogue in W. Lowered to batched matrix multiplication via im2col.
    """
    if inp.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError("conv2d: input and weight must be rank 4")
    n, c, h, w = inp.data.shape
    f, cw, kh, kw = weight.data.shape
    if c != cw:
        raise DimensionError(
            f"conv2d: input has {c} channels but weight expects {cw}"
        )
    if bias.data.shape != (f,):
        raise DimensionError("conv2d: bias shape must be (F,)")
    if stride < 1:
        raise DimensionError("conv2d: stride must be >= 1")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError("conv2d: kernel larger than padded input")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1

    padded = (
        np.pad(inp.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        if padding
        else inp.data
    )
    cols = _im2col(np.ascontiguousarray(padded), kh, kw, stride, ho, wo)
    w2 = weight.data.reshape(f, c * kh * kw)
    out_data = (w2[None] @ cols).reshape(n, f, ho, wo) + bias.data.reshape(1, f, 1, 1)

    def backward(g):
        g2 = g.reshape(n, f, ho * wo)
        grad_w = np.einsum("nfp,nkp->fk", g2, cols).reshape(weight.data.shape)
        grad_cols = w2.T[None] @ g2
        grad_x = _col2im(grad_cols, inp.data.shape, kh, kw, stride, padding, ho, wo)
        return grad_x, grad_w, g.sum(axis=(0, 2, 3))

    return _record(out_data, (inp, weight, bias), backward)


def max_pool2d(inp: Tensor, kernel: int = 2, stride: int | None = None) -> Tensor:
    """Max over non-padded kernel x kernel windows; ties route to the first cell."""
    if inp.data.ndim != 4:
        raise DimensionError("max_pool2d: input must be rank 4")
    stride = kernel if stride is None else stride
    n, c, h, w = inp.data.shape
    if kernel > h or kernel > w:
        raise DimensionError("max_pool2d: kernel larger than input")
    ho = (h - kernel) // stride + 1
    wo = (w - kernel) // stride + 1
    x = np.ascontiguousarray(inp.data)
    s0, s1, s2, s3 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, ho, wo, kernel, kernel),
        strides=(s0, s1, s2 * stride, s3 * stride, s2, s3),
    )
    flat = windows.reshape(n, c, ho, wo, kernel * kernel)
    argmax = flat.argmax(axis=-1)
    out_data = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]

    ni, ci, hi, wi = np.ix_(range(n), range(c), range(ho), range(wo))

    def backward(g):
        gx = np.zeros_like(inp.data)
        rows = hi * stride + argmax // kernel
        cols_ = wi * stride + argmax % kernel
        np.add.at(gx, (ni, ci, rows, cols_), g)
        return (gx,)

    return _record(out_data, (inp,), backward)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[n, labels[n]].

    Log-sum-exp is computed with max subtraction, so saturated logits stay
    finite. Always non-negative.
    """
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise DimensionError("softmax_cross_entropy: logits must be [N, C]")
    n, c = logits.data.shape
    if labels.shape != (n,):
        raise DimensionError("softmax_cross_entropy: labels must be [N]")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise InputError(
            f"softmax_cross_entropy: label out of range [0, {c})"
        )
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - lse
    rows = np.arange(n)
    out_data = np.asarray(-log_probs[rows, labels].mean(), dtype=x.dtype)

    def backward(g):
        probs = np.exp(log_probs)
        probs[rows, labels] -= 1.0
        return (probs * (g / n),)

    return _record(out_data, (logits,), backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain (non-differentiable) softmax over the last axis."""
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


def backward(root: Tensor) -> None:
    """Run reverse-mode differentiation from a scalar root on its tape."""
    if root.tape is None:
        raise ContractError("backward: root is not connected to a tape")
    root.tape.backward(root)
