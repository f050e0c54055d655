"""The self-attentive memory operator and classical associative recall.

``sam_forward`` is the heart of the relational pathway: it projects an item
matrix ``M`` into query/key/value row sets (with layer norm per
projection), then emits one outer-product-attention matrix per query row,
yielding an ``(n_q, d, d)`` relational tensor.

The rest of the module is the associative-memory toolkit used to analyse
that operator: plain Hebbian writes (``assoc_write``), correlation-matrix
readout (``assoc_read``), Gram-Schmidt key orthogonalisation, the
Widrow-Hoff error-correcting write rule, and a constructive demonstration
that with the right projections the relational read reduces to a two-step
contraction that retrieves stored patterns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from samstm import tensor as T
from samstm.rng import Rng
from samstm.tensor import Tensor


@dataclass
class SamParams:
    """Projections and per-projection layer-norm parameters.

    ``W_q`` has ``n_q`` rows; ``W_k``/``W_v`` have ``n_kv`` rows.  The
    recurrent model always uses ``n_kv = n_q`` and square ``n = d``, but the
    operator itself only needs the row counts to agree between keys and
    values.
    """

    W_q: Tensor
    W_k: Tensor
    W_v: Tensor
    ln_q: tuple[Tensor, Tensor]  # (gain, bias), length d
    ln_k: tuple[Tensor, Tensor]
    ln_v: tuple[Tensor, Tensor]

    @property
    def n_q(self) -> int:
        return self.W_q.shape[0]

    @property
    def n_kv(self) -> int:
        return self.W_k.shape[0]

    def named(self, prefix: str = "sam") -> list[tuple[str, Tensor]]:
        return [
            (f"{prefix}_Wq", self.W_q),
            (f"{prefix}_Wk", self.W_k),
            (f"{prefix}_Wv", self.W_v),
            (f"{prefix}_lnq_gain", self.ln_q[0]),
            (f"{prefix}_lnq_bias", self.ln_q[1]),
            (f"{prefix}_lnk_gain", self.ln_k[0]),
            (f"{prefix}_lnk_bias", self.ln_k[1]),
            (f"{prefix}_lnv_gain", self.ln_v[0]),
            (f"{prefix}_lnv_bias", self.ln_v[1]),
        ]


def sam_init(d: int, n_q: int, n_kv: int, rng: Rng, requires_grad: bool = True) -> SamParams:
    """Uniform(-1/sqrt(d)) projections, unit-gain/zero-bias layer norms."""
    bound = 1.0 / np.sqrt(d)

    def w(rows):
        return Tensor(rng.uniform(-bound, bound, (rows, d)), requires_grad=requires_grad)

    def ln():
        return (
            Tensor(np.ones(d), requires_grad=requires_grad),
            Tensor(np.zeros(d), requires_grad=requires_grad),
        )

    return SamParams(W_q=w(n_q), W_k=w(n_kv), W_v=w(n_kv), ln_q=ln(), ln_k=ln(), ln_v=ln())


def sam_forward(M: Tensor, p: SamParams, use_ln: bool = True) -> Tensor:
    """Relational tensor of ``M``: one OPA matrix per extracted query row.

    ``M_q = LN(W_q M)`` and likewise for keys/values; slice ``s`` of the
    output is ``sum_j tanh(M_q[s] * M_k[j]) (outer) M_v[j]``.  The sum over
    ``j`` is evaluated as ``tanh(...)^T @ M_v``, which is the same algebra
    with the pair loop folded into one matrix product.

    ``use_ln=False`` drops the layer norms; the retrieval constructions
    are stated without them.
    """
    d = M.shape[0]
    if M.ndim != 2 or M.shape[1] != d:
        raise ValueError(f"sam_forward: item memory must be square, got {M.shape}")
    if p.W_q.shape[1] != d:
        raise ValueError(f"sam_forward: W_q expects n={p.W_q.shape[1]}, memory is {d}x{d}")
    Mq = T.matmul(p.W_q, M)
    Mk = T.matmul(p.W_k, M)
    Mv = T.matmul(p.W_v, M)
    if use_ln:
        Mq = T.layer_norm(Mq, *p.ln_q)
        Mk = T.layer_norm(Mk, *p.ln_k)
        Mv = T.layer_norm(Mv, *p.ln_v)
    ones_kv = Tensor(np.ones(p.n_kv))
    slices = []
    for s in range(p.n_q):
        q_s = T.take(Mq, s)
        scores = T.tanh(T.mul(T.outer(ones_kv, q_s), Mk))  # (n_kv, d)
        slices.append(T.matmul(T.transpose(scores), Mv))  # == sum_j scores[j] (outer) Mv[j]
    return T.stack(slices)


# -- correlation-matrix associative memory ----------------------------------


@dataclass
class AssocMemory:
    """A square correlation-matrix store ``sum_i x_i (outer) v_i``."""

    store: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.store, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError(f"AssocMemory: store must be square, got {s.shape}")
        self.store = s


def assoc_write(pairs: list[tuple[np.ndarray, np.ndarray]], d: int | None = None) -> AssocMemory:
    """Hebbian batch write: store = sum_i outer(x_i, v_i)."""
    if not pairs and d is None:
        raise ValueError("assoc_write: empty pair list needs an explicit d")
    if d is None:
        d = len(pairs[0][0])
    store = np.zeros((d, d))
    for x, v in pairs:
        store += np.outer(np.asarray(x, dtype=np.float64), np.asarray(v, dtype=np.float64))
    return AssocMemory(store)


def assoc_read(m: AssocMemory, cue: np.ndarray) -> np.ndarray:
    """Correlation readout ``cue^T @ store``.

    With orthonormal keys and ``cue = x_j`` this returns ``v_j`` exactly;
    cross-talk otherwise.
    """
    return np.asarray(cue, dtype=np.float64) @ m.store


def gram_schmidt(keys: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Orthonormalise the rows of ``keys`` (classical Gram-Schmidt).

    Rejects linearly dependent inputs: if the residual of row ``i`` after
    removing projections onto earlier rows has norm below ``tol``, raises
    ``ValueError`` naming that row.
    """
    K = np.array(keys, dtype=np.float64)
    out = np.zeros_like(K)
    for i in range(K.shape[0]):
        r = K[i].copy()
        for j in range(i):
            r -= (out[j] @ K[i]) * out[j]
        nrm = np.linalg.norm(r)
        if nrm < tol:
            raise ValueError(f"gram_schmidt: row {i} is linearly dependent on earlier rows")
        out[i] = r / nrm
    return out


def widrow_hoff_write(pairs: list[tuple[np.ndarray, np.ndarray]], passes: int = 1) -> AssocMemory:
    """Error-correcting incremental write: A += (v_i - A x_i) (outer) x_i.

    Unlike :func:`assoc_write`, this rule stores value-by-key (readout is
    ``store @ cue``), and repeated ``passes`` over the same pairs shrink
    the readout error even for merely independent (non-orthogonal) keys.
    """
    if not pairs:
        raise ValueError("widrow_hoff_write: need at least one pair")
    d = len(pairs[0][0])
    A = np.zeros((d, d))
    for _ in range(passes):
        for x, v in pairs:
            x = np.asarray(x, dtype=np.float64)
            v = np.asarray(v, dtype=np.float64)
            A = A + np.outer(v - A @ x, x)
    return AssocMemory(A)


def widrow_hoff_read(m: AssocMemory, cue: np.ndarray) -> np.ndarray:
    return m.store @ np.asarray(cue, dtype=np.float64)


# -- two-step contraction retrieval ------------------------------------------


def two_step_retrieval_demo(
    patterns: list[np.ndarray],
    probe: np.ndarray,
    n_q: int = 2,
    n_kv: int = 2,
) -> tuple[np.ndarray, float]:
    """Retrieve a stored pattern from the relational tensor by contraction.

    Construction: the item memory is the autocorrelation ``M = sum_i x_i
    (outer) x_i`` of nonnegative, near-orthonormal patterns.  Projection
    rows are solved (least squares) so that, writing ``p`` for the pattern
    nearest the probe, ``W_q[s] x_i = W_k[j] x_i = [i == p]`` and
    ``W_v[j] x_i = 1``.  With the sqrt transform in place of tanh and no
    layer norm, every slice of the relational tensor collapses to
    ``n_kv * sum_i x_p (outer) x_i``, so

        retrieved = softmax(z)^T @ Mr @ (probe / n_kv)  ~=  x_p

    for any slice-weighting ``z`` (uniform here).  Returns the retrieved
    vector and its Euclidean distance to ``x_p``.
    """
    X = np.array([np.asarray(x, dtype=np.float64) for x in patterns])
    probe = np.asarray(probe, dtype=np.float64)
    n, d = X.shape
    if d <= n:
        raise ValueError(f"two_step_retrieval_demo: need d > #patterns, got d={d}, n={n}")
    if np.min(X) < -1e-12:
        raise ValueError("two_step_retrieval_demo: patterns must be nonnegative")
    gram = X @ X.T
    off = gram - np.diag(np.diag(gram))
    if np.max(np.abs(off)) >= 0.05:
        raise ValueError("two_step_retrieval_demo: patterns too correlated (|dot| >= 0.05)")

    p_idx = int(np.argmax(X @ probe))
    one_hot = np.zeros(n)
    one_hot[p_idx] = 1.0

    def solve_rows(rhs: np.ndarray, rows: int) -> np.ndarray:
        w, residual, _, _ = np.linalg.lstsq(X, rhs, rcond=None)
        res = np.linalg.norm(X @ w - rhs)
        if res > 1e-6:
            raise ValueError(f"two_step_retrieval_demo: projection system residual {res:.2e} (patterns too correlated)")
        return np.tile(w, (rows, 1))

    W_q = solve_rows(one_hot, n_q)
    W_k = solve_rows(one_hot, n_kv)
    W_v = solve_rows(np.ones(n), n_kv)

    M = X.T @ X  # sum_i x_i (outer) x_i
    Mq, Mk, Mv = W_q @ M, W_k @ M, W_v @ M
    Mr = np.zeros((n_q, d, d))
    for s in range(n_q):
        for j in range(n_kv):
            f = np.sqrt(np.maximum(Mq[s] * Mk[j], 0.0))
            Mr[s] += np.outer(f, Mv[j])

    z = np.zeros(n_q)
    weights = np.exp(z - z.max())
    weights /= weights.sum()
    collapsed = np.tensordot(weights, Mr, axes=1)  # first contraction
    retrieved = collapsed @ (probe / n_kv)  # second contraction
    return retrieved, float(np.linalg.norm(retrieved - X[p_idx]))
