"""Dense tensors with reverse-mode automatic differentiation.

A `Graph` is a tape: every differentiable op executed while the graph is
active appends the result tensor (with its vjp closure) in execution
order, which is a valid topological order. `Graph.backward(loss)` walks
the tape in exact reverse order, accumulating gradients additively into
every reachable input. Accumulation order is therefore fixed, which
keeps training bit-reproducible.

Shapes are explicit everywhere. The only implicit broadcast is the
row-wise bias addition in `add_bias`; `matmul` additionally accepts a
stacked (batched) left operand against a shared 2-D right operand,
which is the weight-sharing case written out in the op contract.

Every op output and every gradient visited during backward is checked
for NaN/Inf and reported with the offending node id.
"""

from __future__ import annotations

import itertools
import threading

import numpy as np

from ..errors import ContractError, NumericError, PreflabError, ShapeError, StateError
from . import kernels

DEFAULT_DTYPE = np.float32

_node_counter = itertools.count()
_tls = threading.local()

AutodiffError = PreflabError


def _active_graph():
    return getattr(_tls, "graph", None)


class Graph:
    """Recording tape for one forward/backward pass."""

    def __init__(self):
        self._nodes = []
        self._consumed = False

    def __enter__(self):
        if _active_graph() is not None:
            raise StateError("a graph is already active on this thread")
        _tls.graph = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _tls.graph = None
        return False

    def __len__(self):
        return len(self._nodes)

    def _record(self, tensor):
        self._nodes.append(tensor)

    def backward(self, loss: "Tensor") -> None:
        """Populate .grad on every tensor reachable from `loss`."""
        if self._consumed:
            raise StateError("backward already ran on this graph; call reset()")
        if loss.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
        if loss._vjp is None and not self._nodes:
            # Constant loss: nothing reachable, nothing to do.
            self._consumed = True
            return
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            g = node.grad
            if g is None or node._vjp is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(
                    f"non-finite gradient at node {node.node_id}", node_id=node.node_id
                )
            node._vjp(g)
        self._consumed = True

    def reset(self) -> None:
        """Clear the tape so the graph can record a fresh pass."""
        self._nodes.clear()
        self._consumed = False


class Tensor:
    """N-dimensional float32/float64 array, optionally on a tape."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_vjp")

    def __init__(self, data, dtype=None, requires_grad=False):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.ascontiguousarray(arr, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_counter)
        self._parents = ()
        self._vjp = None
        _check_finite(self.data, self.node_id)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, id={self.node_id})"


def parameter(data, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(data, dtype=dtype, requires_grad=True)


def _check_finite(arr, node_id):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value at node {node_id}", node_id=node_id)


def _result(data, parents, vjp):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.node_id = next(_node_counter)
    out.requires_grad = any(p.requires_grad for p in parents)
    graph = _active_graph()
    if graph is not None and out.requires_grad:
        out._parents = parents
        out._vjp = vjp
        graph._record(out)
    else:
        out._parents = ()
        out._vjp = None
    _check_finite(out.data, out.node_id)
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        # Views must be copied: the buffer may belong to another node's grad.
        t.grad = g.copy() if (g.base is not None or not g.flags.owndata) else g
    else:
        t.grad = t.grad + g


# ---------------------------------------------------------------------------
# elementwise and affine ops
# ---------------------------------------------------------------------------


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a.data, b.data, "add")

    def vjp(g):
        _accum(a, g)
        _accum(b, g)

    return _result(a.data + b.data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a.data, b.data, "sub")

    def vjp(g):
        _accum(a, g)
        _accum(b, -g)

    return _result(a.data - b.data, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    def vjp(g):
        _accum(a, -g)

    return _result(-a.data, (a,), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a.data, b.data, "mul")

    def vjp(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _result(a.data * b.data, (a, b), vjp)


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)

    def vjp(g):
        _accum(a, g * c)

    return _result(a.data * c, (a,), vjp)


def add_const(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)

    def vjp(g):
        _accum(a, g)

    return _result(a.data + c, (a,), vjp)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-wise bias addition, the single permitted broadcast."""
    if b.data.ndim != 1 or x.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"add_bias: bias {b.data.shape} does not match rows of {x.data.shape}")

    def vjp(g):
        _accum(x, g)
        _accum(b, g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _result(x.data + b.data, (x, b), vjp)


def add_mat(x: Tensor, y: Tensor) -> Tensor:
    """Add a (R, d) matrix to every stacked (R, d) slice of x.

    Degenerates to plain `add` when shapes already agree; the stacked form
    is the weight-sharing counterpart of matmul's shared 2-D operand.
    """
    if y.data.ndim != 2 or x.data.shape[-2:] != y.data.shape:
        raise ShapeError(f"add_mat: {y.data.shape} does not match trailing dims of {x.data.shape}")

    def vjp(g):
        _accum(x, g)
        _accum(y, g.reshape(-1, *y.data.shape).sum(axis=0))

    return _result(x.data + y.data, (x, y), vjp)


# ---------------------------------------------------------------------------
# matrix ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    Accepted shapes: (m,k)@(k,n); (B,m,k)@(k,n) with the 2-D operand
    shared across the stack; (B,m,k)@(B,k,n) stack-by-stack.
    """
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul: inner dims {ad.shape} @ {bd.shape}")

        def vjp(g):
            _accum(a, g @ bd.T)
            _accum(b, ad.T @ g)

    elif ad.ndim == 3 and bd.ndim == 2:
        if ad.shape[2] != bd.shape[0]:
            raise ShapeError(f"matmul: inner dims {ad.shape} @ {bd.shape}")

        def vjp(g):
            _accum(a, g @ bd.T)
            # Shared right operand: fold the stack into rows for one GEMM.
            _accum(b, ad.reshape(-1, ad.shape[2]).T @ g.reshape(-1, g.shape[2]))

    elif ad.ndim == 3 and bd.ndim == 3:
        if ad.shape[0] != bd.shape[0] or ad.shape[2] != bd.shape[1]:
            raise ShapeError(f"matmul: stacked dims {ad.shape} @ {bd.shape}")

        def vjp(g):
            _accum(a, g @ bd.swapaxes(-1, -2))
            _accum(b, ad.swapaxes(-1, -2) @ g)

    else:
        raise ShapeError(f"matmul: unsupported ranks {ad.shape} @ {bd.shape}")
    return _result(ad @ bd, (a, b), vjp)


def transpose_last2(a: Tensor) -> Tensor:
    if a.data.ndim < 2:
        raise ShapeError(f"transpose_last2: rank {a.data.ndim} < 2")

    def vjp(g):
        _accum(a, g.swapaxes(-1, -2))

    return _result(np.ascontiguousarray(a.data.swapaxes(-1, -2)), (a,), vjp)


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(B, T, D) -> (B*H, T, D/H): move each head's column block into the
    stack dimension so attention runs as one stacked matmul per projection."""
    if x.data.ndim != 3:
        raise ShapeError(f"split_heads: need rank 3, got {x.data.shape}")
    b, t, d = x.data.shape
    if d % n_heads != 0:
        raise ShapeError(f"split_heads: width {d} not divisible by {n_heads} heads")
    dk = d // n_heads

    def vjp(g):
        _accum(x, g.reshape(b, n_heads, t, dk).transpose(0, 2, 1, 3).reshape(b, t, d))

    out = np.ascontiguousarray(
        x.data.reshape(b, t, n_heads, dk).transpose(0, 2, 1, 3).reshape(b * n_heads, t, dk)
    )
    return _result(out, (x,), vjp)


def merge_heads(x: Tensor, n_heads: int) -> Tensor:
    """(B*H, T, D/H) -> (B, T, D): inverse of split_heads."""
    if x.data.ndim != 3:
        raise ShapeError(f"merge_heads: need rank 3, got {x.data.shape}")
    bh, t, dk = x.data.shape
    if bh % n_heads != 0:
        raise ShapeError(f"merge_heads: stack {bh} not divisible by {n_heads} heads")
    b = bh // n_heads

    def vjp(g):
        _accum(x, g.reshape(b, t, n_heads, dk).transpose(0, 2, 1, 3).reshape(bh, t, dk))

    out = np.ascontiguousarray(
        x.data.reshape(b, n_heads, t, dk).transpose(0, 2, 1, 3).reshape(b, t, n_heads * dk)
    )
    return _result(out, (x,), vjp)


# ---------------------------------------------------------------------------
# neural-net ops backed by the kernel backends
# ---------------------------------------------------------------------------


def masked_softmax(logits: Tensor) -> Tensor:
    """Causally masked row softmax over the trailing (T, T) dims.

    Positions with column > row receive an additive -1e9 before the
    softmax, which underflows to exactly zero probability.
    """
    shp = logits.data.shape
    if logits.data.ndim < 2 or shp[-1] != shp[-2]:
        raise ShapeError(f"masked_softmax: trailing dims of {shp} are not square")
    t = shp[-1]
    flat = np.ascontiguousarray(logits.data.reshape(-1, t, t))
    probs = kernels.causal_softmax_fwd(flat)

    def vjp(g):
        gin = kernels.causal_softmax_bwd(probs, np.ascontiguousarray(g.reshape(-1, t, t)))
        _accum(logits, gin.reshape(shp))

    return _result(probs.reshape(shp), (logits,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance normalization over the last dim, then affine."""
    d = x.data.shape[-1] if x.data.ndim else 0
    if d == 0:
        raise ShapeError("layer_norm: empty feature dimension")
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain {gain.data.shape} / bias {bias.data.shape} do not match d={d}"
        )
    if eps <= 0:
        raise ContractError("layer_norm: eps must be positive")
    shp = x.data.shape
    flat = np.ascontiguousarray(x.data.reshape(-1, d))
    out, mean, rstd = kernels.layernorm_fwd(flat, gain.data, bias.data, x.data.dtype.type(eps))

    def vjp(g):
        gx, ggain, gbias = kernels.layernorm_bwd(
            flat, gain.data, mean, rstd, np.ascontiguousarray(g.reshape(-1, d))
        )
        _accum(x, gx.reshape(shp))
        _accum(gain, ggain)
        _accum(bias, gbias)

    return _result(out.reshape(shp), (x, gain, bias), vjp)


def gelu(x: Tensor) -> Tensor:
    xc = np.ascontiguousarray(x.data)
    out, th = kernels.gelu_fwd(xc)

    def vjp(g):
        _accum(x, kernels.gelu_bwd(xc, th, np.ascontiguousarray(g)))

    return _result(out, (x,), vjp)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def vjp(g):
        _accum(x, g * mask)

    return _result(np.where(mask, x.data, x.data.dtype.type(0)), (x,), vjp)


def logsigmoid(x: Tensor, clamp: float = -30.0) -> Tensor:
    """Numerically stable log(sigmoid(x)), clamped below at `clamp`."""
    xd = x.data
    out = np.where(xd >= 0, -np.log1p(np.exp(-np.abs(xd))), xd - np.log1p(np.exp(-np.abs(xd))))
    clamped = out < clamp
    out = np.where(clamped, xd.dtype.type(clamp), out)

    def vjp(g):
        sig_neg = np.where(
            xd >= 0,
            np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd))),
            1.0 / (1.0 + np.exp(-np.abs(xd))),
        )
        _accum(x, g * np.where(clamped, 0.0, sig_neg).astype(xd.dtype))

    return _result(out.astype(xd.dtype), (x,), vjp)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout: p={p} outside [0, 1)")
    if p == 0.0:
        return x
    draw_dtype = x.data.dtype if x.data.dtype in (np.float32, np.float64) else np.float64
    keep = (rng.random(x.data.shape, dtype=draw_dtype) >= p).astype(x.data.dtype)
    keep /= x.data.dtype.type(1.0 - p)

    def vjp(g):
        _accum(x, g * keep)

    return _result(x.data * keep, (x,), vjp)


# ---------------------------------------------------------------------------
# indexing / shape ops
# ---------------------------------------------------------------------------


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows (axis -2) by integer index; gradients scatter-add back."""
    if x.data.ndim < 2:
        raise ShapeError(f"gather_rows: rank {x.data.ndim} < 2")
    idx = np.asarray(idx, dtype=np.int64)
    rows = x.data.shape[-2]
    if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= rows)):
        raise ShapeError(f"gather_rows: bad index set for {rows} rows")
    moved = np.moveaxis(x.data, -2, 0)

    def vjp(g):
        gm = np.zeros_like(moved)
        np.add.at(gm, idx, np.moveaxis(g, -2, 0))
        _accum(x, np.moveaxis(gm, 0, -2))

    return _result(np.ascontiguousarray(np.moveaxis(moved[idx], 0, -2)), (x,), vjp)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim < 1 or not (0 <= start < stop <= x.data.shape[-1]):
        raise ShapeError(f"slice_cols: [{start}:{stop}] on shape {x.data.shape}")

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[..., start:stop] = g
        _accum(x, gx)

    return _result(np.ascontiguousarray(x.data[..., start:stop]), (x,), vjp)


def concat_cols(parts: list) -> Tensor:
    widths = [p.data.shape[-1] for p in parts]
    base = parts[0].data.shape[:-1]
    for p in parts:
        if p.data.shape[:-1] != base:
            raise ShapeError("concat_cols: leading dims differ")

    def vjp(g):
        off = 0
        for p, w in zip(parts, widths):
            _accum(p, g[..., off : off + w])
            off += w

    return _result(np.concatenate([p.data for p in parts], axis=-1), tuple(parts), vjp)


def concat_rows(parts: list) -> Tensor:
    heights = [p.data.shape[-2] for p in parts]
    for p in parts:
        if p.data.ndim < 2:
            raise ShapeError("concat_rows: rank < 2")
        if p.data.shape[:-2] != parts[0].data.shape[:-2] or p.data.shape[-1] != parts[0].data.shape[-1]:
            raise ShapeError("concat_rows: incompatible shapes")

    def vjp(g):
        off = 0
        for p, h in zip(parts, heights):
            _accum(p, g[..., off : off + h, :])
            off += h

    return _result(np.concatenate([p.data for p in parts], axis=-2), tuple(parts), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def vjp(g):
        _accum(x, g.reshape(x.data.shape))

    return _result(np.ascontiguousarray(x.data.reshape(shape)), (x,), vjp)


def sum_all(x: Tensor) -> Tensor:
    def vjp(g):
        _accum(x, np.full_like(x.data, g.reshape(())))

    return _result(x.data.sum(dtype=x.data.dtype).reshape(()), (x,), vjp)


def sum_axis(x: Tensor, axis: int) -> Tensor:
    def vjp(g):
        _accum(x, np.broadcast_to(np.expand_dims(g, axis), x.data.shape))

    return _result(np.ascontiguousarray(x.data.sum(axis=axis, dtype=x.data.dtype)), (x,), vjp)
