"""Dense-array reverse-mode autodiff core.

Define-by-run: every operation returns a new Tensor holding its value, its
parent tensors, and a closure that routes the incoming gradient to those
parents. ``backward`` walks the tape once in reverse topological order.

Conventions:
  - float64 everywhere; finite values enforced at graph boundaries (leaf
    construction and the backward root).
  - Tensors are never mutated while a graph referencing them is alive.
    The optimizer rewrites leaf ``.data`` between graphs.
  - Elementwise ops accept any matching shapes plus the broadcasts the
    model needs: scalar, (m,n) op (m,1), (m,n) op (1,n).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, NumericError, ShapeError

Array = np.ndarray

LAYER_NORM_EPS = 1e-5


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite values rejected at graph boundary")
        self.data = arr
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @staticmethod
    def _from_op(data: Array, parents: tuple, backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = parents if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: Array) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def topo_order(root: Tensor) -> list[Tensor]:
    """Reverse topological order of the graph below ``root`` (each node once)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


def backward(root: Tensor) -> None:
    """Populate ``.grad`` on every tensor reachable from ``root``.

    ``root`` must be scalar-shaped and finite.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {root.data.shape}")
    if not np.isfinite(root.data).all():
        raise NumericError("backward root is non-finite")
    if not root.requires_grad:
        return
    root.grad = np.ones_like(root.data)
    for node in reversed(topo_order(root)):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def _unbroadcast(g: Array, shape: tuple) -> Array:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return Tensor._from_op(out, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return Tensor._from_op(out, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return Tensor._from_op(out, (a, b), back)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return Tensor._from_op(out, (a, b), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product with gradients for both operands."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}")
    out = a.data @ b.data

    def back(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor._from_op(out, (a, b), back)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose expects a 2-D tensor")
    out = a.data.T.copy()

    def back(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return Tensor._from_op(out, (a,), back)


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())

    def back(g):
        if a.requires_grad:
            a._accumulate(np.broadcast_to(g, a.data.shape).astype(np.float64))

    return Tensor._from_op(out, (a,), back)


def row_sum(a: Tensor) -> Tensor:
    """(m, n) -> (m, 1) sums along axis 1."""
    if a.data.ndim != 2:
        raise ShapeError("row_sum expects a 2-D tensor")
    out = a.data.sum(axis=1, keepdims=True)

    def back(g):
        if a.requires_grad:
            a._accumulate(np.broadcast_to(g, a.data.shape).astype(np.float64))

    return Tensor._from_op(out, (a,), back)


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def back(g):
        if a.requires_grad:
            a._accumulate(g / (2.0 * out))

    return Tensor._from_op(out, (a,), back)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def back(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - out * out))

    return Tensor._from_op(out, (a,), back)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor; shift-invariant and stable."""
    if x.data.ndim != 2:
        raise ShapeError("softmax_rows expects a 2-D tensor")
    if x.data.shape[1] == 0:
        raise ShapeError("softmax_rows: empty rows")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def back(g):
        if x.requires_grad:
            dot = (g * out).sum(axis=1, keepdims=True)
            x._accumulate(out * (g - dot))

    return Tensor._from_op(out, (x,), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Per-row normalization to zero mean / unit variance, then affine."""
    if x.data.ndim != 2:
        raise ShapeError("layer_norm expects a 2-D tensor")
    d = x.data.shape[1]
    if d < 2:
        raise ShapeError("layer_norm needs feature dimension >= 2")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def back(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0))
        if x.requires_grad:
            gh = g * gain.data
            # d/dx of (x - mu) * inv with mu, inv functions of the row
            term = gh - gh.mean(axis=1, keepdims=True) - xhat * (gh * xhat).mean(axis=1, keepdims=True)
            x._accumulate(term * inv)

    return Tensor._from_op(out, (x, gain, bias), back)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows ``table[ids]``; backward scatter-adds into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError("embedding expects a 1-D id array")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError(
            f"embedding id out of range [0, {table.data.shape[0]}): {int(ids.min())}..{int(ids.max())}"
        )
    out = table.data[ids].copy()

    def back(g):
        if table.requires_grad:
            acc = np.zeros_like(table.data)
            np.add.at(acc, ids, g)
            table._accumulate(acc)

    return Tensor._from_op(out, (table,), back)


def slice_cols(a: Tensor, j0: int, j1: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("slice_cols expects a 2-D tensor")
    out = a.data[:, j0:j1].copy()

    def back(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, j0:j1] = g
            a._accumulate(full)

    return Tensor._from_op(out, (a,), back)


def concat_cols(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_cols needs at least one part")
    widths = [p.data.shape[1] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=1)

    def back(g):
        j = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                p._accumulate(g[:, j : j + w])
            j += w

    return Tensor._from_op(out, tuple(parts), back)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused affine map x @ w + b for 2-D x; one tape node."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ShapeError("linear expects 2-D input and weight")
    if x.data.shape[1] != w.data.shape[0] or w.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"linear shapes disagree: x{x.data.shape} w{w.data.shape} b{b.data.shape}"
        )
    out = x.data @ w.data + b.data

    def back(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            w._accumulate(x.data.T @ g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))

    return Tensor._from_op(out, (x, w, b), back)


def attention(
    q: Tensor, k: Tensor, v: Tensor, heads: int, mask: np.ndarray | None = None
) -> Tensor:
    """Fused multi-head scaled-dot-product attention over one sequence.

    q is (Nq, d); k and v are (Nk, d); d splits into ``heads`` slices.
    ``mask`` is an additive (Nq, Nk) constant (e.g. a causal mask). The
    whole block is a single tape node with a hand-derived backward.
    """
    nq, d = q.data.shape
    nk = k.data.shape[0]
    if d % heads != 0:
        raise ShapeError("attention width must be divisible by heads")
    if k.data.shape[1] != d or v.data.shape != k.data.shape:
        raise ShapeError("attention operand shapes disagree")
    hd = d // heads
    scale = 1.0 / np.sqrt(hd)
    # head-major batched layout (heads, N, hd) keeps everything on BLAS matmul
    qh = np.ascontiguousarray(q.data.reshape(nq, heads, hd).transpose(1, 0, 2))
    kh = np.ascontiguousarray(k.data.reshape(nk, heads, hd).transpose(1, 0, 2))
    vh = np.ascontiguousarray(v.data.reshape(nk, heads, hd).transpose(1, 0, 2))
    scores = (qh @ kh.transpose(0, 2, 1)) * scale
    if mask is not None:
        scores += mask[None, :, :]
    scores -= scores.max(axis=2, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=2, keepdims=True)
    out = (weights @ vh).transpose(1, 0, 2).reshape(nq, d)

    def back(g):
        gh = np.ascontiguousarray(g.reshape(nq, heads, hd).transpose(1, 0, 2))
        if v.requires_grad:
            gv = weights.transpose(0, 2, 1) @ gh
            v._accumulate(gv.transpose(1, 0, 2).reshape(nk, d))
        if q.requires_grad or k.requires_grad:
            gw = gh @ vh.transpose(0, 2, 1)
            gs = weights * (gw - np.sum(weights * gw, axis=2, keepdims=True))
            if q.requires_grad:
                gq = (gs @ kh) * scale
                q._accumulate(gq.transpose(1, 0, 2).reshape(nq, d))
            if k.requires_grad:
                gk = (gs.transpose(0, 2, 1) @ qh) * scale
                k._accumulate(gk.transpose(1, 0, 2).reshape(nk, d))

    return Tensor._from_op(out, (q, k, v), back)


def floor_norm(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Lift rows of a 2-D tensor to L2 norm >= eps.

    Rows already above the floor pass through with an identity gradient (the
    only regime a trained model reaches). Sub-floor rows are rescaled to the
    floor; exactly-zero rows become eps * e_1 with zero gradient.
    """
    if x.data.ndim != 2:
        raise ShapeError("floor_norm expects a 2-D tensor")
    norms = np.linalg.norm(x.data, axis=1)
    out = x.data.copy()
    scale = np.ones_like(norms)
    low = norms < eps
    if low.any():
        pos = low & (norms > 0)
        scale[pos] = eps / norms[pos]
        out[pos] *= scale[pos, None]
        zero = low & (norms == 0)
        out[zero, 0] = eps
        scale[zero] = 0.0

    def back(g):
        if x.requires_grad:
            x._accumulate(g * scale[:, None])

    return Tensor._from_op(out, (x,), back)


def cosine(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity of two 1-D vectors as a differentiable scalar.

    Zero-norm operands are rejected; upstream code floors norms so this
    never fires on model outputs.
    """
    u, v = _as_tensor(u), _as_tensor(v)
    if u.data.ndim != 1 or v.data.ndim != 1:
        raise ShapeError("cosine expects 1-D vectors")
    if u.data.shape != v.data.shape:
        raise ShapeError(f"cosine operand shapes disagree: {u.data.shape} vs {v.data.shape}")
    if float(np.linalg.norm(u.data)) == 0.0 or float(np.linalg.norm(v.data)) == 0.0:
        raise DegenerateInputError("cosine of a zero-norm vector is undefined")
    dot = sum_all(mul(u, v))
    nu = sqrt(sum_all(mul(u, u)))
    nv = sqrt(sum_all(mul(v, v)))
    return div(dot, mul(nu, nv))


def normalize_rows(x: Tensor) -> Tensor:
    """Scale each row of a 2-D tensor to unit L2 norm (differentiable)."""
    sq = mul(x, x)
    norms = sqrt(row_sum(sq))
    return div(x, norms)


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    worst_index: tuple
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    tol: float
    eps: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_err={self.max_rel_err:.3e} tol={self.tol:.1e} ({len(self.entries)} params)"


def grad_check(
    f,
    params: dict[str, Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare backward gradients of ``f()`` against central finite differences.

    ``f`` is a zero-argument callable that rebuilds the scalar loss graph from
    the current ``params`` data. Relative error per coordinate is
    ``|a - n| / max(|a|, |n|, 1.0)``; the unit floor keeps near-zero gradients
    from amplifying finite-difference rounding noise.

    When a parameter is large, ``max_coords_per_param`` probes a seeded random
    subset of its coordinates instead of all of them.
    """
    for p in params.values():
        p.zero_grad()
    loss = f()
    if loss.data.size != 1:
        raise ShapeError("grad_check target must be scalar-valued")
    if not np.isfinite(loss.data).all():
        raise NumericError("grad_check: loss is non-finite at the probe point")
    backward(loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    report = GradCheckReport(tol=tol, eps=eps)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = np.arange(n)
        worst = GradCheckEntry(name=name, max_rel_err=0.0, worst_index=(), analytic=0.0, numeric=0.0)
        ga = analytic[name].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            hi = float(f().data)
            flat[c] = orig - eps
            lo = float(f().data)
            flat[c] = orig
            num = (hi - lo) / (2.0 * eps)
            ana = float(ga[c])
            rel = abs(ana - num) / max(abs(ana), abs(num), 1.0)
            if rel >= worst.max_rel_err:
                worst = GradCheckEntry(
                    name=name,
                    max_rel_err=rel,
                    worst_index=np.unravel_index(int(c), p.data.shape),
                    analytic=ana,
                    numeric=num,
                )
        report.entries.append(worst)
    return report
