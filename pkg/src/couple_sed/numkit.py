"""Minimal dense-tensor numeric core with reverse-mode gradients.

Implements exactly the primitive set the CRNN and its objective need:
elementwise arithmetic, matmul, sigmoid/tanh/exp/log, softmax, 2-D
convolution with same padding, max pooling, GLU, a bidirectional GRU
layer, and reductions. Values are numpy float64 arrays. Differentiable
ops record backward closures on their output node; a ``GradTape`` built
from a scalar loss replays them to produce d(loss)/d(parameter) for
every tensor marked ``requires_grad``.

Non-finite guards: tensors built from user data, and the outputs of
``log``/``exp``/``div``, are checked for NaN/Inf. The training loop
additionally checks every loss value.
"""

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes violate a primitive's contract."""


class NonFiniteError(FloatingPointError):
    """Raised when a value that must be finite contains NaN or Inf."""


class UnreliableCheckError(RuntimeError):
    """Raised by grad_check when the loss function is not deterministic."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """A dense float64 array plus an optional position in the op graph.

    Leaf tensors created with ``requires_grad=True`` are the trainable
    parameters; intermediate nodes carry parent links and a backward
    closure instead.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor data contains NaN or Inf")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _needs_grad(t):
    return t.requires_grad or t._parents


def _node(data, parents, backward):
    """Build an output node; degrades to a constant when grads are off."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    if _GRAD_ENABLED and any(_needs_grad(p) for p in parents):
        out._parents = tuple(parents)
        out._backward = backward(out)
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (reverses numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic --------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(out):
        def run():
            if _needs_grad(a):
                a.grad += _unbroadcast(out.grad, a.data.shape)
            if _needs_grad(b):
                b.grad += _unbroadcast(out.grad, b.data.shape)
        return run

    return _node(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(out):
        def run():
            if _needs_grad(a):
                a.grad += _unbroadcast(out.grad, a.data.shape)
            if _needs_grad(b):
                b.grad -= _unbroadcast(out.grad, b.data.shape)
        return run

    return _node(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(out):
        def run():
            if _needs_grad(a):
                a.grad += _unbroadcast(out.grad * b.data, a.data.shape)
            if _needs_grad(b):
                b.grad += _unbroadcast(out.grad * a.data, b.data.shape)
        return run

    return _node(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    res = a.data / b.data
    if not np.all(np.isfinite(res)):
        raise NonFiniteError("division produced NaN or Inf")

    def bw(out):
        def run():
            if _needs_grad(a):
                a.grad += _unbroadcast(out.grad / b.data, a.data.shape)
            if _needs_grad(b):
                b.grad += _unbroadcast(-out.grad * a.data / (b.data * b.data), b.data.shape)
        return run

    return _node(res, (a, b), bw)


def sigmoid(x):
    x = as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-x.data))

    def bw(out):
        def run():
            if _needs_grad(x):
                x.grad += out.grad * s * (1.0 - s)
        return run

    return _node(s, (x,), bw)


def tanh(x):
    x = as_tensor(x)
    t = np.tanh(x.data)

    def bw(out):
        def run():
            if _needs_grad(x):
                x.grad += out.grad * (1.0 - t * t)
        return run

    return _node(t, (x,), bw)


def exp(x):
    x = as_tensor(x)
    e = np.exp(x.data)
    if not np.all(np.isfinite(e)):
        raise NonFiniteError("exp overflow")

    def bw(out):
        def run():
            if _needs_grad(x):
                x.grad += out.grad * e
        return run

    return _node(e, (x,), bw)


def log(x):
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise NonFiniteError("log of non-positive value")
    res = np.log(x.data)

    def bw(out):
        def run():
            if _needs_grad(x):
                x.grad += out.grad / x.data
        return run

    return _node(res, (x,), bw)


def clamp(x, lo, hi):
    """Clip to [lo, hi]; gradient is passed through only inside the band."""
    x = as_tensor(x)
    res = np.clip(x.data, lo, hi)
    mask = (x.data >= lo) & (x.data <= hi)

    def bw(out):
        def run():
            if _needs_grad(x):
                x.grad += out.grad * mask
        return run

    return _node(res, (x,), bw)


# -- linear algebra and shape ops --------------------------------------

def matmul(a, b):
    """a @ b for a of rank >= 2 and b of rank 2 (batch dims on a only)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects (..., m, k) @ (k, n), got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def bw(out):
        def run():
            if _needs_grad(a):
                a.grad += out.grad @ b.data.T
            if _needs_grad(b):
                ga = a.data.reshape(-1, a.data.shape[-1])
                gg = out.grad.reshape(-1, out.grad.shape[-1])
                b.grad += ga.T @ gg
        return run

    return _node(a.data @ b.data, (a, b), bw)


def reshape(x, shape):
    x = as_tensor(x)
    old = x.data.shape

    def bw(out):
        def run():
            if _needs_grad(x):
                x.grad += out.grad.reshape(old)
        return run

    return _node(x.data.reshape(shape), (x,), bw)


def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)

    def bw(out):
        def run():
            if _needs_grad(x):
                x.grad += out.grad.transpose(inv)
        return run

    return _node(x.data.transpose(axes), (x,), bw)


def take(x, idx):
    """Basic (slice/int) indexing with scatter-style backward."""
    x = as_tensor(x)

    def bw(out):
        def run():
            if _needs_grad(x):
                x.grad[idx] += out.grad
        return run

    return _node(x.data[idx], (x,), bw)


def gather_rows(x, indices):
    """Select rows along axis 0 (indices may repeat)."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.intp)

    def bw(out):
        def run():
            if _needs_grad(x):
                np.add.at(x.grad, indices, out.grad)
        return run

    return _node(x.data[indices], (x,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(out):
        def run():
            sl = [slice(None)] * out.grad.ndim
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if _needs_grad(t):
                    sl[axis] = slice(lo, hi)
                    t.grad += out.grad[tuple(sl)]
        return run

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def bw(out):
        def run():
            parts = np.moveaxis(out.grad, axis, 0)
            for t, g in zip(tensors, parts):
                if _needs_grad(t):
                    t.grad += g
        return run

    return _node(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)

    def bw(out):
        def run():
            if not _needs_grad(x):
                return
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            x.grad += np.broadcast_to(g, x.data.shape)
        return run

    return _node(x.data.sum(axis=axis, keepdims=keepdims), (x,), bw)


def tmean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]

    def bw(out):
        def run():
            if not _needs_grad(x):
                return
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            x.grad += np.broadcast_to(g, x.data.shape) / n
        return run

    return _node(x.data.mean(axis=axis, keepdims=keepdims), (x,), bw)


def softmax(x, axis):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(out):
        def run():
            if _needs_grad(x):
                gy = out.grad * y
                x.grad += gy - y * gy.sum(axis=axis, keepdims=True)
        return run

    return _node(y, (x,), bw)


# -- network primitives --------------------------------------------------

def glu(x, axis=None):
    """Gated linear unit: split channels in half, out = a * sigmoid(b).

    Default channel axis is 1 for rank-4 input (batch, channel, t, f)
    and 0 otherwise.
    """
    x = as_tensor(x)
    if axis is None:
        axis = 1 if x.ndim == 4 else 0
    n = x.data.shape[axis]
    if n % 2 != 0:
        raise ShapeError(f"glu needs an even channel count, got {n} on axis {axis}")
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(0, n // 2)
    a = take(x, tuple(sl))
    sl[axis] = slice(n // 2, n)
    b = take(x, tuple(sl))
    return mul(a, sigmoid(b))


def _pad_same(x4, kt, kf):
    pt, pf = (kt - 1) // 2, (kf - 1) // 2
    return np.pad(x4, ((0, 0), (0, 0), (pt, pt), (pf, pf))), pt, pf


def _im2col(x4, kt, kf):
    """[B,C,T,F] -> [B, C*kt*kf, T*F] columns for same-padded windows."""
    xp, _, _ = _pad_same(x4, kt, kf)
    b, c, t, f = x4.shape
    win = np.lib.stride_tricks.sliding_window_view(xp, (kt, kf), axis=(2, 3))
    # win: [B, C, T, F, kt, kf] -> [B, C, kt, kf, T, F]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * kt * kf, t * f)
    return np.ascontiguousarray(cols)


def _conv2d_value(x4, k):
    b = x4.shape[0]
    co, ci, kt, kf = k.shape
    cols = _im2col(x4, kt, kf)
    out = k.reshape(co, ci * kt * kf) @ cols
    return out.reshape(b, co, x4.shape[2], x4.shape[3]), cols


def conv2d(x, kernels):
    """Same-padded 2-D cross-correlation.

    Args:
        x: [C_in, T, F] or [B, C_in, T, F] input.
        kernels: [C_out, C_in, kT, kF] with odd kT, kF.

    Returns:
        [C_out, T, F] (or batched) output.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if kernels.ndim != 4:
        raise ShapeError(f"kernels must be rank 4, got {kernels.shape}")
    co, ci, kt, kf = kernels.data.shape
    if kt % 2 == 0 or kf % 2 == 0:
        raise ShapeError(f"kernel dims must be odd for same padding, got {kt}x{kf}")
    squeeze = x.ndim == 3
    x4 = x.data[None] if squeeze else x.data
    if x4.ndim != 4:
        raise ShapeError(f"input must be rank 3 or 4, got {x.shape}")
    if x4.shape[1] != ci:
        raise ShapeError(f"input has {x4.shape[1]} channels, kernels expect {ci}")

    out_data, cols = _conv2d_value(x4, kernels.data)
    if squeeze:
        out_data = out_data[0]

    def bw(out):
        def run():
            g4 = out.grad[None] if squeeze else out.grad
            gflat = g4.reshape(g4.shape[0], co, -1)
            if _needs_grad(kernels):
                kernels.grad += np.einsum("bop,bkp->ok", gflat, cols).reshape(kernels.data.shape)
            if _needs_grad(x):
                # adjoint of same-padded correlation: correlate the output
                # gradient with the spatially flipped, channel-swapped kernel
                kadj = kernels.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
                gx, _ = _conv2d_value(np.ascontiguousarray(g4), np.ascontiguousarray(kadj))
                x.grad += gx[0] if squeeze else gx
        return run

    return _node(out_data, (x, kernels), bw)


def max_pool2d(x, window):
    """Max pooling over the trailing two axes.

    Partial windows at the edge are padded with -inf so any input length
    is valid; the gradient routes to the first maximal element of each
    window in row-major order.
    """
    x = as_tensor(x)
    pt, pf = int(window[0]), int(window[1])
    if pt < 1 or pf < 1:
        raise ShapeError(f"pool window must be positive, got {window}")
    lead = x.data.shape[:-2]
    t, f = x.data.shape[-2:]
    to, fo = -(-t // pt), -(-f // pf)
    xr = x.data.reshape((-1, t, f))
    padded = np.full((xr.shape[0], to * pt, fo * pf), -np.inf)
    padded[:, :t, :f] = xr
    win = padded.reshape(xr.shape[0], to, pt, fo, pf).transpose(0, 1, 3, 2, 4)
    flat = win.reshape(xr.shape[0], to, fo, pt * pf)
    arg = flat.argmax(axis=-1)
    out_data = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    out_data = out_data.reshape(lead + (to, fo))

    def bw(out):
        def run():
            if not _needs_grad(x):
                return
            g = out.grad.reshape(-1, to, fo)
            buf = np.zeros((xr.shape[0], to, fo, pt * pf))
            np.put_along_axis(buf, arg[..., None], g[..., None], axis=-1)
            buf = buf.reshape(xr.shape[0], to, fo, pt, pf).transpose(0, 1, 3, 2, 4)
            buf = buf.reshape(xr.shape[0], to * pt, fo * pf)[:, :t, :f]
            x.grad += buf.reshape(x.data.shape)
        return run

    return _node(out_data, (x,), bw)


@dataclass
class GruDirection:
    """Weights for one GRU direction: gates z/r, candidate h-tilde."""

    wz: Tensor
    wr: Tensor
    wh: Tensor
    uz: Tensor
    ur: Tensor
    uh: Tensor
    bz: Tensor
    br: Tensor
    bh: Tensor

    def tensors(self):
        return [self.wz, self.wr, self.wh, self.uz, self.ur, self.uh,
                self.bz, self.br, self.bh]


@dataclass
class GruParams:
    fwd: GruDirection
    bwd: GruDirection

    def tensors(self):
        return self.fwd.tensors() + self.bwd.tensors()


def _gru_direction(x, p, reverse):
    """Run one direction over x [B, T, D]; returns list of T [B, H] states.

    Gate equations (Cho-style, biases on the input side):
        z = sigmoid(x W_z + h U_z + b_z)
        r = sigmoid(x W_r + h U_r + b_r)
        c = tanh(x W_h + (r * h) U_h + b_h)
        h' = (1 - z) * c + z * h
    """
    bsz, steps, _ = x.data.shape
    hdim = p.uz.data.shape[0]
    xz = add(matmul(x, p.wz), p.bz)
    xr = add(matmul(x, p.wr), p.br)
    xh = add(matmul(x, p.wh), p.bh)
    h = Tensor(np.zeros((bsz, hdim)))
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    states = [None] * steps
    for t in order:
        z = sigmoid(add(xz[:, t, :], matmul(h, p.uz)))
        r = sigmoid(add(xr[:, t, :], matmul(h, p.ur)))
        c = tanh(add(xh[:, t, :], matmul(mul(r, h), p.uh)))
        h = add(mul(sub(1.0, z), c), mul(z, h))
        states[t] = h
    return states


def bigru_layer(x, params):
    """Bidirectional GRU over a sequence.

    Args:
        x: [T, D] or [B, T, D] input sequence.
        params: GruParams with forward and backward direction weights.

    Returns:
        [T, 2H] (or [B, T, 2H]) concatenation of the forward and
        backward hidden states; initial hidden state is zero.
    """
    x = as_tensor(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.data.shape)
    if x.ndim != 3:
        raise ShapeError(f"bigru_layer expects [T, D] or [B, T, D], got {x.shape}")
    if x.data.shape[1] == 0:
        raise ShapeError("bigru_layer needs at least one time step")
    fwd = _gru_direction(x, params.fwd, reverse=False)
    bwd = _gru_direction(x, params.bwd, reverse=True)
    out = concat([stack(fwd, axis=1), stack(bwd, axis=1)], axis=2)
    return reshape(out, out.data.shape[1:]) if squeeze else out


# -- backward machinery --------------------------------------------------

class GradTape:
    """Topologically ordered record of the ops reachable from a scalar loss.

    Replaying the tape backward deposits gradients on every node; the
    caller collects them from the trainable leaves.
    """

    def __init__(self, loss):
        if loss.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        self.loss = loss
        self._topo = self._toposort(loss)
        self._ran = False

    @staticmethod
    def _toposort(root):
        topo, visited = [], set()
        stack = [(root, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        return topo

    def _run(self):
        if self._ran:
            return
        for node in self._topo:
            node.grad = np.zeros_like(node.data)
        self.loss.grad = np.ones_like(self.loss.data)
        for node in reversed(self._topo):
            if node._backward is not None:
                node._backward()
        self._ran = True

    def gradients(self, params):
        """Return d(loss)/d(p) for each tensor in `params` (same order).

        Parameters that do not influence the loss get zero gradients.
        """
        self._run()
        out = []
        for p in params:
            out.append(p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        return out


def grad_check(loss_fn, params, eps=1e-5):
    """Compare analytic gradients to central finite differences.

    Args:
        loss_fn: callable(params) -> scalar Tensor; must be deterministic
            (freeze any noise sources before calling).
        params: dict of name -> leaf Tensor with requires_grad=True.
        eps: finite-difference step.

    Returns:
        Max over all parameter elements of |analytic - numeric| divided
        by max(1, |analytic|, |numeric|); the unit floor means near-zero
        gradients are judged by absolute error.
    """
    first = loss_fn(params)
    second = loss_fn(params)
    if first.item() != second.item():
        raise UnreliableCheckError(
            "loss_fn returned different values on identical inputs; "
            "freeze noise sources before grad_check")
    tape = GradTape(first)
    analytic = tape.gradients(params.values())
    worst = 0.0
    with no_grad():
        for p, grad in zip(params.values(), analytic):
            flat = p.data.reshape(-1)
            gflat = grad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = loss_fn(params).item()
                flat[i] = orig - eps
                fm = loss_fn(params).item()
                flat[i] = orig
                numeric = (fp - fm) / (2.0 * eps)
                err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]), abs(numeric))
                if err > worst:
                    worst = err
    return worst
