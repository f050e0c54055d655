"""Dot-product and outer-product attention, plus their algebraic bridges.

Dot-product attention (DPA) assigns one scalar score per key and returns a
weighted sum of values.  Outer-product attention (OPA) replaces the scalar
score with an elementwise-transformed vector and accumulates full outer
products, so its output is a ``d_qk x d_v`` relationship matrix per query
instead of a single value vector.

The two are linked by a contraction: left-multiplying the OPA output by a
row vector collapses it back to value space, and for affine score/transform
choices the collapse reproduces DPA exactly (checked in
:mod:`samstm.props`).  ``bilinear_expand`` exposes the other reading of the
OPA output: a linear map applied to its flattening is a bilinear form in
the transformed query-key vector and the value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from samstm import tensor as T
from samstm.tensor import Tensor


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class DpaSpec:
    """Score transform for DPA: ``softmax`` over keys or affine ``a*x + b``."""

    scoring: str = "softmax"
    a: float = 1.0
    b: float = 0.0

    def __post_init__(self):
        if self.scoring not in ("softmax", "affine"):
            raise ValueError(f"DpaSpec: unknown scoring {self.scoring!r}")
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError("DpaSpec: affine coefficients must be finite")


@dataclass(frozen=True)
class OpaSpec:
    """Elementwise transform for OPA.

    Kinds:
      * ``tanh`` - the training default.
      * ``affine`` - ``af * x + bf`` with per-coordinate vectors.
      * ``scaled`` - affine with zero bias and all coefficients nonzero
        (the linear-independence argument for perfect retrieval needs
        every coordinate to survive).
      * ``sqrt`` - ``sqrt(max(x, 0))``, used only in the two-step
        retrieval construction.
    """

    kind: str = "tanh"
    af: np.ndarray | None = field(default=None)
    bf: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.kind not in ("tanh", "affine", "scaled", "sqrt"):
            raise ValueError(f"OpaSpec: unknown kind {self.kind!r}")
        if self.kind == "affine":
            if self.af is None or self.bf is None:
                raise ValueError("OpaSpec: affine kind needs af and bf vectors")
        if self.kind == "scaled":
            if self.af is None:
                raise ValueError("OpaSpec: scaled kind needs af")
            if np.any(np.asarray(self.af) == 0.0):
                raise ValueError("OpaSpec: scaled kind requires all af entries nonzero")

    def apply(self, x: Tensor) -> Tensor:
        if self.kind == "tanh":
            return T.tanh(x)
        if self.kind == "sqrt":
            return T.sqrt_pos(x)
        af = Tensor(np.broadcast_to(np.asarray(self.af, dtype=np.float64), x.shape).copy())
        out = T.mul(af, x)
        if self.kind == "affine":
            bf = Tensor(np.broadcast_to(np.asarray(self.bf, dtype=np.float64), x.shape).copy())
            out = T.add(out, bf)
        return out


@dataclass(frozen=True)
class Contraction:
    """Row vector ``a_p``; contracts a d_qk x d_v matrix to a d_v vector."""

    a_p: np.ndarray

    def __post_init__(self):
        ap = np.asarray(self.a_p, dtype=np.float64)
        if ap.ndim != 1 or not np.all(np.isfinite(ap)):
            raise ValueError("Contraction: a_p must be a finite vector")
        object.__setattr__(self, "a_p", ap)


def dpa(q, K, V, spec: DpaSpec = DpaSpec()) -> Tensor:
    """Dot-product attention: sum_i score(q . k_i) * v_i.

    ``softmax`` scoring normalises the scores over keys first; ``affine``
    scoring uses them raw.  Returns a length-``d_v`` vector.
    """
    q, K, V = _wrap(q), _wrap(K), _wrap(V)
    n_kv = K.shape[0]
    if n_kv == 0:
        raise ValueError("dpa: need at least one key-value pair")
    if V.shape[0] != n_kv or q.shape[0] != K.shape[1]:
        raise ValueError(f"dpa: shape mismatch q{q.shape} K{K.shape} V{V.shape}")
    raw = T.matmul(K, q)  # (n_kv,)
    if spec.scoring == "softmax":
        scores = T.softmax(raw)
    else:
        scores = T.broadcast_add(T.scale(raw, spec.a), Tensor(np.float64(spec.b)))
    return T.matmul(scores, V)


def opa(q, K, V, spec: OpaSpec = OpaSpec()) -> Tensor:
    """Outer-product attention: sum_i F(q * k_i) (outer) v_i.

    Returns the ``d_qk x d_v`` relationship matrix.  This is the reference
    (per-pair loop) form; the memory operator vectorises the same algebra.
    """
    q, K, V = _wrap(q), _wrap(K), _wrap(V)
    n_kv = K.shape[0]
    if n_kv == 0:
        raise ValueError("opa: need at least one key-value pair")
    if V.shape[0] != n_kv or q.shape[0] != K.shape[1]:
        raise ValueError(f"opa: shape mismatch q{q.shape} K{K.shape} V{V.shape}")
    acc = None
    for i in range(n_kv):
        fi = spec.apply(T.mul(q, T.take(K, i)))
        term = T.outer(fi, T.take(V, i))
        acc = term if acc is None else T.add(acc, term)
    return acc


def contract_p(A, c: Contraction) -> Tensor:
    """Collapse a relationship matrix to value space: ``a_p @ A``."""
    A = _wrap(A)
    if A.ndim != 2:
        raise ValueError(f"contract_p: expected a matrix, got shape {A.shape}")
    if c.a_p.shape[0] != A.shape[0]:
        raise ValueError(f"contract_p: a_p length {c.a_p.shape[0]} vs matrix {A.shape}")
    return T.matmul(Tensor(c.a_p), A)


def bilinear_expand(Wg: np.ndarray, f: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear form out[s] = sum_{j,t} Wg[s,j,t] f[j] v[t].

    Evaluates both the direct bilinear contraction and the equivalent
    flattened-linear path ``Wg_flat @ vec(outer(f, v))`` and insists they
    agree to 1e-12 before returning; the agreement *is* the point of the
    construction (a linear readout of an outer-product matrix is a
    bilinear model).
    """
    Wg = np.asarray(Wg, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if Wg.ndim != 3 or Wg.shape[1] != f.shape[0] or Wg.shape[2] != v.shape[0]:
        raise ValueError(f"bilinear_expand: shape mismatch Wg{Wg.shape} f{f.shape} v{v.shape}")
    direct = np.array([f @ Wg[s] @ v for s in range(Wg.shape[0])])
    flat = Wg.reshape(Wg.shape[0], -1) @ np.outer(f, v).reshape(-1)
    if np.max(np.abs(direct - flat)) >= 1e-12:
        raise AssertionError("bilinear_expand: direct and flattened paths disagree")
    return direct
