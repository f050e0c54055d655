"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation that consumes ``Tensor`` inputs records the inputs and a
vector-Jacobian-product closure on the output node, so calling
:meth:`Tensor.backward` on a scalar loss fills ``.grad`` on every reachable
leaf.  The graph is rebuilt on every forward pass (define-by-run); nothing
here is retained between training steps except the parameter leaves.

Design notes
------------
* Storage is always ``np.float64``.  Mixed precision is out of scope and the
  gradient checker depends on fp64 headroom.
* Shapes are validated eagerly: binary elementwise ops demand equal shapes,
  and the only implicit broadcast lives in :func:`broadcast_add` (scalar to
  anything, length-``d`` vector to the rows of a matrix with ``d`` rows).
  Everything else raises ``ValueError`` naming both shapes.
* ``backward`` orders nodes with an iterative depth-first topological sort;
  recursion would overflow on graphs from long unrolled sequences.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray

_LN_EPS = 1e-5


def _as_array(x) -> Array:
    a = np.asarray(x, dtype=np.float64)
    return a


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode.

    Attributes
    ----------
    data:
        The forward value, an ``np.ndarray`` of dtype float64.
    grad:
        Accumulated gradient of the last ``backward`` root with respect to
        this node, or ``None`` before any backward pass touches it.
    requires_grad:
        Leaves opt in explicitly; interior nodes inherit from parents.
    parents, vjp, op:
        Tape record.  ``vjp(g)`` maps the output cotangent to a tuple of
        parent cotangents (``None`` entries allowed for constant parents).
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "vjp", "op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        vjp: Callable[[Array], tuple] | None = None,
        op: str = "leaf",
    ):
        self.data = _as_array(data)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self.parents = parents
        self.vjp = vjp
        self.op = op

    # -- conveniences -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar used by tests and scripts; the model code calls the
    # module-level functions directly.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    # -- reverse pass ------------------------------------------------------

    def backward(self) -> None:
        """Reverse-accumulate gradients from this scalar node.

        Raises ``ValueError`` unless ``self`` is a scalar (shape ``()``).
        Gradients accumulate with ``+=`` so shared subexpressions are
        handled; leaves keep ``grad=None`` until first touched, and callers
        should zero or drop grads between backward passes.
        """
        if self.data.shape != ():
            raise ValueError(f"backward requires a scalar root, got shape {self.data.shape}")

        order = _toposort(self)
        self.grad = np.ones((), dtype=np.float64)
        for node in order:
            g = node.grad
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += pg


def _toposort(root: Tensor) -> list[Tensor]:
    """Reverse topological order via an explicit stack (no recursion)."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, child_idx = stack.pop()
        if child_idx == 0:
            if id(node) in visited:
                continue
            visited.add(id(node))
        if child_idx < len(node.parents):
            stack.append((node, child_idx + 1))
            child = node.parents[child_idx]
            if id(child) not in visited and child.requires_grad:
                stack.append((child, 0))
        else:
            order.append(node)
    order.reverse()
    return order


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: Array, parents: tuple[Tensor, ...], vjp, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, vjp=vjp, op=op)
    return Tensor(data, op=op)


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# -- elementwise ops -------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product; equal shapes required."""
    _check_same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, s) -> Tensor:
    """Multiply by a python float or a scalar (shape ``()``) Tensor.

    The scalar may require grad (used for the learnable write strengths),
    in which case its cotangent is ``sum(g * a)``.
    """
    if isinstance(s, Tensor):
        if s.data.shape != ():
            raise ValueError(f"scale: scalar operand must have shape (), got {s.data.shape}")
        ad, sd = a.data, s.data
        return _node(
            ad * sd,
            (a, s),
            lambda g: (g * sd, np.sum(g * ad)),
            "scale",
        )
    c = float(s)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def broadcast_add(a: Tensor, b: Tensor) -> Tensor:
    """Add with the one sanctioned broadcast: scalar->any, vector->matrix rows.

    A length-``d`` vector aligns with the first axis of a ``(d, n)`` matrix,
    i.e. ``out[i, j] = m[i, j] + v[i]``.  The result always has the larger
    operand's shape.  Anything else is a ``ValueError``.
    """
    ad, bd = a.data, b.data
    if ad.shape == bd.shape:
        return add(a, b)
    # Normalise so that `big` is the higher-rank operand.
    if ad.ndim < bd.ndim:
        small, big, flipped = a, b, True
    else:
        small, big, flipped = b, a, False
    sd, gd = small.data, big.data
    if sd.shape == ():
        out = gd + sd

        def vjp_scalar(g):
            gs = np.sum(g)
            return (gs, g) if flipped else (g, gs)

        return _node(out, (a, b), vjp_scalar, "broadcast_add")
    if sd.ndim == 1 and gd.ndim == 2 and gd.shape[0] == sd.shape[0]:
        out = gd + sd[:, None]

        def vjp_vec(g):
            gs = np.sum(g, axis=1)
            return (gs, g) if flipped else (g, gs)

        return _node(out, (a, b), vjp_vec, "broadcast_add")
    raise ValueError(f"broadcast_add: incompatible shapes {ad.shape} vs {bd.shape}")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def sqrt_pos(a: Tensor) -> Tensor:
    """Elementwise sqrt clamped at zero: ``sqrt(max(x, 0))``.

    Gradient is ``g / (2 sqrt x)`` where ``x > 0`` and zero elsewhere, which
    keeps the clamped region flat instead of blowing up at the kink.
    """
    x = a.data
    out = np.sqrt(np.maximum(x, 0.0))

    def vjp(g):
        gx = np.zeros_like(x)
        mask = x > 0.0
        gx[mask] = g[mask] * 0.5 / out[mask]
        return (gx,)

    return _node(out, (a,), vjp, "sqrt_pos")


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _node(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


# -- contractions ----------------------------------------------------------


def outer(a: Tensor, b: Tensor) -> Tensor:
    """Outer product of two vectors: ``out[i, j] = a[i] * b[j]``."""
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ValueError(f"outer: expected two vectors, got {a.data.shape} and {b.data.shape}")
    ad, bd = a.data, b.data
    return _node(
        np.outer(ad, bd),
        (a, b),
        lambda g: (g @ bd, ad @ g),
        "outer",
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix/vector product for ranks (2,2), (2,1), (1,2) and (1,1).

    Rank (1,1) is the dot product and returns a scalar.
    """
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ValueError(f"matmul: inner dims differ {ad.shape} vs {bd.shape}")
        return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")
    if ad.ndim == 2 and bd.ndim == 1:
        if ad.shape[1] != bd.shape[0]:
            raise ValueError(f"matmul: inner dims differ {ad.shape} vs {bd.shape}")
        return _node(ad @ bd, (a, b), lambda g: (np.outer(g, bd), ad.T @ g), "matmul")
    if ad.ndim == 1 and bd.ndim == 2:
        if ad.shape[0] != bd.shape[0]:
            raise ValueError(f"matmul: inner dims differ {ad.shape} vs {bd.shape}")
        return _node(ad @ bd, (a, b), lambda g: (bd @ g, np.outer(ad, g)), "matmul")
    if ad.ndim == 1 and bd.ndim == 1:
        if ad.shape[0] != bd.shape[0]:
            raise ValueError(f"matmul: inner dims differ {ad.shape} vs {bd.shape}")
        return _node(np.dot(ad, bd), (a, b), lambda g: (g * bd, g * ad), "matmul")
    raise ValueError(f"matmul: unsupported ranks {ad.shape} @ {bd.shape}")


# -- reductions ------------------------------------------------------------


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    ad = a.data
    out = np.sum(ad, axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, ad.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), ad.shape).copy(),)

    return _node(out, (a,), vjp, "reduce_sum")


def reduce_mean(a: Tensor, axis: int | None = None) -> Tensor:
    ad = a.data
    n = ad.size if axis is None else ad.shape[axis]
    out = np.mean(ad, axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / n, ad.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, ad.shape).copy(),)

    return _node(out, (a,), vjp, "reduce_mean")


def reduce_max(a: Tensor, axis: int | None = None) -> Tensor:
    """Max reduction; on ties the gradient is split evenly across argmaxes."""
    ad = a.data
    out = np.max(ad, axis=axis)

    def vjp(g):
        if axis is None:
            mask = (ad == out).astype(np.float64)
            return (mask * (g / mask.sum()),)
        expanded = np.expand_dims(out, axis)
        mask = (ad == expanded).astype(np.float64)
        mask /= mask.sum(axis=axis, keepdims=True)
        return (mask * np.expand_dims(g, axis),)

    return _node(out, (a,), vjp, "reduce_max")


# -- normalisers -----------------------------------------------------------


def softmax(a: Tensor) -> Tensor:
    """Softmax over a vector, computed with max-subtraction for stability."""
    if a.data.ndim != 1:
        raise ValueError(f"softmax: expected a vector, got shape {a.data.shape}")
    z = a.data - np.max(a.data)
    e = np.exp(z)
    s = e / np.sum(e)

    def vjp(g):
        return ((g - np.dot(g, s)) * s,)

    return _node(s, (a,), vjp, "softmax")


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = _LN_EPS) -> Tensor:
    """Row-wise layer normalisation of a matrix.

    Each row of ``a`` (shape ``(n, d)``) is shifted/scaled to zero mean and
    unit variance (biased variance, ``eps`` inside the square root), then
    scaled by ``gain`` and shifted by ``bias`` (both length ``d``, shared
    across rows).
    """
    ad = a.data
    if ad.ndim != 2:
        raise ValueError(f"layer_norm: expected a matrix, got shape {ad.shape}")
    d = ad.shape[1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ValueError(
            f"layer_norm: gain/bias must have shape ({d},), got {gain.data.shape} and {bias.data.shape}"
        )
    mu = np.mean(ad, axis=1, keepdims=True)
    var = np.var(ad, axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (ad - mu) * inv
    out = xhat * gain.data + bias.data
    gd = gain.data

    def vjp(g):
        dgain = np.sum(g * xhat, axis=0)
        dbias = np.sum(g, axis=0)
        dxhat = g * gd
        m1 = np.mean(dxhat, axis=1, keepdims=True)
        m2 = np.mean(dxhat * xhat, axis=1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return (dx, dgain, dbias)

    return _node(out, (a, gain, bias), vjp, "layer_norm")


# -- shape plumbing ----------------------------------------------------------


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    ad = a.data
    out = np.reshape(ad, shape)
    return _node(out, (a,), lambda g: (np.reshape(g, ad.shape),), "reshape")


def flatten_last_two(a: Tensor) -> Tensor:
    """Merge the last two axes: rank 3 -> rank 2, rank 2 -> rank 1."""
    s = a.data.shape
    if a.data.ndim == 3:
        return reshape(a, (s[0], s[1] * s[2]))
    if a.data.ndim == 2:
        return reshape(a, (s[0] * s[1],))
    raise ValueError(f"flatten_last_two: expected rank 2 or 3, got shape {s}")


def flatten_first_two(a: Tensor) -> Tensor:
    """Merge the first two axes of a rank-3 tensor: (a, b, c) -> (a*b, c)."""
    s = a.data.shape
    if a.data.ndim != 3:
        raise ValueError(f"flatten_first_two: expected rank 3, got shape {s}")
    return reshape(a, (s[0] * s[1], s[2]))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"transpose: expected a matrix, got shape {a.data.shape}")
    return _node(a.data.T.copy(), (a,), lambda g: (g.T.copy(),), "transpose")


def take(a: Tensor, index: int) -> Tensor:
    """Slice along the first axis: ``a[index]`` with gradient scatter-add."""
    ad = a.data
    if not -ad.shape[0] <= index < ad.shape[0]:
        raise ValueError(f"take: index {index} out of range for first axis of {ad.shape}")

    def vjp(g):
        full = np.zeros_like(ad)
        full[index] = g
        return (full,)

    return _node(ad[index].copy(), (a,), vjp, "take")


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-shaped tensors along a new leading axis."""
    ts = list(tensors)
    if not ts:
        raise ValueError("stack: need at least one tensor")
    s0 = ts[0].data.shape
    for t in ts[1:]:
        if t.data.shape != s0:
            raise ValueError(f"stack: shape mismatch {s0} vs {t.data.shape}")
    out = np.stack([t.data for t in ts])

    def vjp(g):
        return tuple(g[i] for i in range(len(ts)))

    return _node(out, tuple(ts), vjp, "stack")


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate vectors into one long vector."""
    ts = list(tensors)
    for t in ts:
        if t.data.ndim != 1:
            raise ValueError(f"concat: expected vectors, got shape {t.data.shape}")
    sizes = [t.data.shape[0] for t in ts]
    out = np.concatenate([t.data for t in ts])
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(g[offsets[i] : offsets[i + 1]] for i in range(len(ts)))

    return _node(out, tuple(ts), vjp, "concat")


# -- gradient checking -------------------------------------------------------


def grad_check(
    f: Callable[[Sequence[Tensor]], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` maps the parameter list to a scalar ``Tensor`` and is re-invoked
    for every probe, so it must be a pure function of ``params``.  Returns
    the worst relative error over all parameter entries, where each entry's
    error is ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    for p in params:
        p.grad = None
        p.requires_grad = True
    out = f(params)
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        ga_flat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = f(params).item()
            flat[i] = orig - eps
            f_minus = f(params).item()
            flat[i] = orig
            gn = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(ga_flat[i]), abs(gn), 1e-8)
            worst = max(worst, abs(ga_flat[i] - gn) / denom)
    return worst
