"""Minimal reverse-mode autodiff core for the joint-embedding model.

Everything is float64. A :class:`Tape` records the primitive operations
executed inside its ``with`` block in execution order (which is already a
valid topological order); :func:`backward` replays the records in reverse
to accumulate exact gradients into parameter tensors. With no tape active
the same operations run as plain numpy, which is the inference path.

Only the operations the model needs exist: dense, batch normalization,
a mask-aware LSTM, SELU, row-wise cosine similarity and binary
cross-entropy. No GPU, no convolutions, no general broadcasting beyond
bias/scale/mask patterns.
"""

import struct
import threading
from dataclasses import dataclass
from math import sqrt as _msqrt

import numpy as np

from .errors import DataError

SELU_SCALE = 1.05070098735548
SELU_ALPHA = 1.67326324235437

COSINE_EPS = 1e-12
BATCHNORM_EPS = 1e-5
BATCHNORM_MOMENTUM = 0.99
SIGMOID_CLAMP = 1e-7

_checked = False


def set_checked(flag):
    """Toggle rejection of NaN/Inf at Tensor construction (slower)."""
    global _checked
    _checked = bool(flag)


class Tensor:
    """A shaped block of float64 values, optionally trainable."""

    __slots__ = ("data", "grad", "requires_grad", "_track", "_tape", "_idx")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if _checked and not np.all(np.isfinite(arr)):
            raise ValueError("non-finite values in tensor")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._track = requires_grad
        self._tape = None
        self._idx = -1

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


_state = threading.local()


def _stack():
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def _active_tape():
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Recorder for one forward pass; confined to a single thread."""

    def __init__(self):
        self._nodes = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _stack().pop()
        assert popped is self, "tapes closed out of order"
        return False

    def __len__(self):
        return len(self._nodes)

    def _record(self, out, parents, vjp):
        out._tape = self
        out._idx = len(self._nodes)
        out._track = True
        self._nodes.append((parents, vjp))


def _wrap(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _emit(data, parents, make_vjp):
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(p._track for p in parents):
        tape._record(out, parents, make_vjp())
    return out


def backward(tape, loss):
    """Accumulate d(loss)/d(parameter) into ``.grad`` of every parameter.

    ``loss`` must be a scalar recorded on ``tape``. Parameters that do not
    influence the loss keep their (zero-initialized) gradients.
    """
    if loss.data.shape != ():
        raise ValueError(f"loss must be a scalar, got shape {loss.data.shape}")
    if loss._tape is None:
        if loss.requires_grad:
            loss.grad += 1.0
        return
    if loss._tape is not tape:
        raise ValueError("loss was not recorded on this tape")
    pending = {loss._idx: np.ones((), dtype=np.float64)}
    for idx in range(len(tape._nodes) - 1, -1, -1):
        grad = pending.pop(idx, None)
        if grad is None:
            continue
        parents, vjp = tape._nodes[idx]
        for parent, pgrad in zip(parents, vjp(grad)):
            if pgrad is None:
                continue
            if parent._tape is tape:
                if parent._idx in pending:
                    pending[parent._idx] = pending[parent._idx] + pgrad
                else:
                    pending[parent._idx] = pgrad
            elif parent.requires_grad:
                parent.grad += pgrad


def zero_grads(params):
    for p in params:
        p.grad[...] = 0.0


# ---------------------------------------------------------------------------
# primitive operations


def add(a, b):
    a, b = _wrap(a), _wrap(b)

    def make_vjp():
        sa, sb = a.data.shape, b.data.shape
        return lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))

    return _emit(a.data + b.data, (a, b), make_vjp)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)

    def make_vjp():
        sa, sb = a.data.shape, b.data.shape
        return lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))

    return _emit(a.data - b.data, (a, b), make_vjp)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)

    def make_vjp():
        da, db = a.data, b.data
        return lambda g: (_unbroadcast(g * db, da.shape), _unbroadcast(g * da, db.shape))

    return _emit(a.data * b.data, (a, b), make_vjp)


def div(a, b):
    a, b = _wrap(a), _wrap(b)

    def make_vjp():
        da, db = a.data, b.data
        return lambda g: (
            _unbroadcast(g / db, da.shape),
            _unbroadcast(-g * da / (db * db), db.shape),
        )

    return _emit(a.data / b.data, (a, b), make_vjp)


def neg(a):
    a = _wrap(a)
    return _emit(-a.data, (a,), lambda: lambda g: (-g,))


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")

    def make_vjp():
        da, db = a.data, b.data
        return lambda g: (g @ db.T, da.T @ g)

    return _emit(a.data @ b.data, (a, b), make_vjp)


def mean_all(a):
    a = _wrap(a)

    def make_vjp():
        shape, size = a.data.shape, a.data.size
        return lambda g: (np.full(shape, float(g) / size),)

    return _emit(np.asarray(a.data.mean()), (a,), make_vjp)


def mean_rows(a):
    """Mean over axis 0 of a 2-D tensor (per-feature batch mean)."""
    a = _wrap(a)
    if a.data.ndim != 2:
        raise ValueError("mean_rows expects a 2-D tensor")

    def make_vjp():
        rows, cols = a.data.shape
        return lambda g: (np.broadcast_to(g / rows, (rows, cols)),)

    return _emit(a.data.mean(axis=0), (a,), make_vjp)


def sqrt(a):
    a = _wrap(a)
    out_data = np.sqrt(a.data)

    def make_vjp():
        denom = out_data
        return lambda g: (g * 0.5 / denom,)

    return _emit(out_data, (a,), make_vjp)


def log(a):
    a = _wrap(a)

    def make_vjp():
        da = a.data
        return lambda g: (g / da,)

    return _emit(np.log(a.data), (a,), make_vjp)


def tanh(a):
    a = _wrap(a)
    out_data = np.tanh(a.data)

    def make_vjp():
        t = out_data
        return lambda g: (g * (1.0 - t * t),)

    return _emit(out_data, (a,), make_vjp)


def sigmoid(a):
    a = _wrap(a)
    d = a.data
    out_data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def make_vjp():
        s = out_data
        return lambda g: (g * s * (1.0 - s),)

    return _emit(out_data, (a,), make_vjp)


def clip(a, low, high):
    a = _wrap(a)

    def make_vjp():
        inside = (a.data > low) & (a.data < high)
        return lambda g: (g * inside,)

    return _emit(np.clip(a.data, low, high), (a,), make_vjp)


def selu(a):
    """Scaled exponential linear unit with the canonical pinned constants."""
    a = _wrap(a)
    d = a.data
    neg_part = np.expm1(np.minimum(d, 0.0))
    out_data = np.where(d > 0, SELU_SCALE * d, SELU_SCALE * SELU_ALPHA * neg_part)

    def make_vjp():
        slope = np.where(d > 0, SELU_SCALE, SELU_SCALE * SELU_ALPHA * np.exp(np.minimum(d, 0.0)))
        return lambda g: (g * slope,)

    return _emit(out_data, (a,), make_vjp)


def cosine(u, v, eps=COSINE_EPS):
    """Row-wise normalized dot product of two B x h tensors.

    ``eps`` floors each norm so zero rows score 0 instead of NaN; output
    is always within [-1, 1].
    """
    u, v = _wrap(u), _wrap(v)
    if u.data.shape != v.data.shape or u.data.ndim != 2:
        raise ValueError(f"cosine expects equal 2-D shapes, got {u.data.shape} and {v.data.shape}")
    du, dv = u.data, v.data
    dot = np.einsum("ij,ij->i", du, dv)
    nu = np.sqrt(np.einsum("ij,ij->i", du, du))
    nv = np.sqrt(np.einsum("ij,ij->i", dv, dv))
    fu = np.maximum(nu, eps)
    fv = np.maximum(nv, eps)
    out_data = dot / (fu * fv)

    def make_vjp():
        live_u = (nu > eps)[:, None]
        live_v = (nv > eps)[:, None]
        scale = (1.0 / (fu * fv))[:, None]
        cos_col = out_data[:, None]

        def vjp(g):
            gcol = g[:, None]
            gu = gcol * (dv * scale - live_u * cos_col * du / (fu * fu)[:, None])
            gv = gcol * (du * scale - live_v * cos_col * dv / (fv * fv)[:, None])
            return gu, gv

        return vjp

    return _emit(out_data, (u, v), make_vjp)


# ---------------------------------------------------------------------------
# layers


@dataclass
class DenseParams:
    w: Tensor
    b: Tensor

    @classmethod
    def init(cls, rng, n_in, n_out):
        bound = 1.0 / _msqrt(n_in)
        return cls(
            w=Tensor(rng.uniform(-bound, bound, (n_in, n_out)), requires_grad=True),
            b=Tensor(np.zeros(n_out), requires_grad=True),
        )


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def init(cls, n):
        return cls(
            gamma=Tensor(np.ones(n), requires_grad=True),
            beta=Tensor(np.zeros(n), requires_grad=True),
            running_mean=np.zeros(n),
            running_var=np.ones(n),
        )


LSTM_GATES = ("i", "f", "g", "o")


@dataclass
class LstmParams:
    wx_i: Tensor
    wh_i: Tensor
    b_i: Tensor
    wx_f: Tensor
    wh_f: Tensor
    b_f: Tensor
    wx_g: Tensor
    wh_g: Tensor
    b_g: Tensor
    wx_o: Tensor
    wh_o: Tensor
    b_o: Tensor

    @classmethod
    def init(cls, rng, n_in, n_hidden):
        bound = 1.0 / _msqrt(n_hidden)
        kwargs = {}
        for gate in LSTM_GATES:
            kwargs[f"wx_{gate}"] = Tensor(
                rng.uniform(-bound, bound, (n_in, n_hidden)), requires_grad=True
            )
            kwargs[f"wh_{gate}"] = Tensor(
                rng.uniform(-bound, bound, (n_hidden, n_hidden)), requires_grad=True
            )
            bias = rng.uniform(-bound, bound, (n_hidden,))
            if gate == "f":
                bias = bias + 1.0  # open forget gate at initialization
            kwargs[f"b_{gate}"] = Tensor(bias, requires_grad=True)
        return cls(**kwargs)

    @property
    def hidden_dim(self):
        return self.wh_i.data.shape[0]


def dense_forward(x, p):
    x = _wrap(x)
    if x.data.ndim != 2 or x.data.shape[1] != p.w.data.shape[0]:
        raise ValueError(
            f"dense shape mismatch: input {x.data.shape} vs weight {p.w.data.shape}"
        )
    return add(matmul(x, p.w), p.b)


def batchnorm_forward(x, p, mode="train", eps=BATCHNORM_EPS, momentum=BATCHNORM_MOMENTUM):
    """Per-feature batch normalization.

    Train mode normalizes by the batch's (biased) statistics, updates the
    running statistics as a side effect and needs a batch of at least 2.
    Eval mode normalizes by the stored running statistics.
    """
    x = _wrap(x)
    if x.data.ndim != 2 or x.data.shape[1] != p.gamma.data.shape[0]:
        raise ValueError(
            f"batch norm shape mismatch: input {x.data.shape} vs {p.gamma.data.shape[0]} features"
        )
    if mode == "train":
        if x.data.shape[0] < 2:
            raise ValueError("train-mode batch norm needs a batch of at least 2")
        mu = mean_rows(x)
        centered = sub(x, mu)
        var = mean_rows(mul(centered, centered))
        xhat = div(centered, sqrt(add(var, eps)))
        p.running_mean = momentum * p.running_mean + (1.0 - momentum) * mu.data
        p.running_var = momentum * p.running_var + (1.0 - momentum) * var.data
    elif mode == "eval":
        denom = np.sqrt(p.running_var + eps)
        xhat = div(sub(x, Tensor(p.running_mean)), Tensor(denom))
    else:
        raise ValueError(f"unknown batch norm mode {mode!r}")
    return add(mul(xhat, p.gamma), p.beta)


def lstm_forward(matrix, mask, p):
    """Run an LSTM over a padded batch and return the final hidden state.

    ``matrix`` is B x L x E, ``mask`` is B x L with True marking real
    steps. Masked steps leave a sequence's state untouched, so the result
    is the state at each sequence's last real step and is bit-identical
    under extra trailing padding. A fully masked sequence is an error.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if matrix.ndim != 3 or mask.shape != matrix.shape[:2]:
        raise ValueError(f"sequence batch {matrix.shape} and mask {mask.shape} disagree")
    if matrix.shape[2] != p.wx_i.data.shape[0]:
        raise ValueError(
            f"lstm shape mismatch: input dim {matrix.shape[2]} vs weight {p.wx_i.data.shape}"
        )
    lengths = mask.sum(axis=1)
    if (lengths == 0).any():
        bad = int(np.argmin(lengths))
        raise ValueError(f"all-masked sequence at batch index {bad}")

    batch = matrix.shape[0]
    hidden = p.hidden_dim
    h = Tensor(np.zeros((batch, hidden)))
    c = Tensor(np.zeros((batch, hidden)))
    last_step = int(np.max(np.nonzero(mask.any(axis=0))[0]))
    for t in range(last_step + 1):
        active = mask[:, t]
        if not active.any():
            continue
        xt = Tensor(matrix[:, t, :])
        gi = sigmoid(add(add(matmul(xt, p.wx_i), matmul(h, p.wh_i)), p.b_i))
        gf = sigmoid(add(add(matmul(xt, p.wx_f), matmul(h, p.wh_f)), p.b_f))
        gg = tanh(add(add(matmul(xt, p.wx_g), matmul(h, p.wh_g)), p.b_g))
        go = sigmoid(add(add(matmul(xt, p.wx_o), matmul(h, p.wh_o)), p.b_o))
        c_new = add(mul(gf, c), mul(gi, gg))
        h_new = mul(go, tanh(c_new))
        if active.all():
            c, h = c_new, h_new
        else:
            keep = Tensor(active.astype(np.float64)[:, None])
            hold = Tensor((~active).astype(np.float64)[:, None])
            c = add(mul(c_new, keep), mul(c, hold))
            h = add(mul(h_new, keep), mul(h, hold))
    return h


def bce_loss(score, label):
    """Mean binary cross-entropy of sigmoid scores against 0/1 labels.

    Scores are clamped away from the boundaries before the logs, so the
    loss is finite for any score in [0, 1].
    """
    score = _wrap(score)
    label = np.asarray(label, dtype=np.float64)
    if score.data.shape != label.shape:
        raise ValueError(f"scores {score.data.shape} vs labels {label.shape}")
    if not np.all((label == 0.0) | (label == 1.0)):
        raise ValueError("labels must be 0 or 1")
    s = clip(score, SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)
    positive = mul(Tensor(label), log(s))
    negative = mul(Tensor(1.0 - label), log(sub(1.0, s)))
    return neg(mean_all(add(positive, negative)))


# ---------------------------------------------------------------------------
# parameter checkpoints

CHECKPOINT_MAGIC = b"ZSLM"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, named_arrays):
    """Write named float64 arrays to the versioned binary checkpoint format.

    Layout: magic ``ZSLM``, u32 format version, then per-array records of
    u32 name length, UTF-8 name, u32 rank, u32 dims, little-endian f64
    data. All integers little-endian.
    """
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name, arr in named_arrays.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            handle.write(struct.pack("<I", len(encoded)))
            handle.write(encoded)
            handle.write(struct.pack("<I", arr.ndim))
            handle.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            handle.write(arr.astype("<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    offset = 8
    out = {}

    def take(n, what):
        nonlocal offset
        if offset + n > len(blob):
            raise DataError(f"{path}: truncated checkpoint while reading {what}")
        chunk = blob[offset : offset + n]
        offset += n
        return chunk

    while offset < len(blob):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        count = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(8 * count, f"data of {name}"), dtype="<f8")
        out[name] = data.reshape(dims).astype(np.float64)
    return out
