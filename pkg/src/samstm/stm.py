"""The two-memory recurrent cell and a plain LSTM baseline.

One step of the cell, in execution order:

1. encode the raw input to ``d`` dims,
2. write the encoded input into the item memory ``Mi`` (outer product of
   two tanh feature maps, gated LSTM-style),
3. read a refresh vector ``v_r`` from the previous relational memory
   ``Mr`` by a softmax-weighted two-step contraction,
4. write relations: run the memory operator over ``Mi`` plus the
   outer-product refresh and add the result into ``Mr``,
5. transfer a learned projection of the flattened ``Mr`` back into ``Mi``,
6. distil ``Mr`` through two flatten/affine stages into the step output.

The item memory is a ``d x d`` matrix; the relational memory is an
``(n_q, d, d)`` tensor.  Both are zeroed at sequence start and threaded
through the step functions as :class:`StmState`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from samstm import tensor as T
from samstm.rng import Rng
from samstm.tensor import Tensor

from samstm.sam import SamParams, sam_forward, sam_init


@dataclass(frozen=True)
class StmConfig:
    d: int = 96
    n_q: int = 8
    n_r: int = 96
    n_o: int = 8
    in_dim: int = 8
    alphas_learnable: bool = True

    def __post_init__(self):
        for name in ("d", "n_q", "n_r", "n_o", "in_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"StmConfig: {name} must be positive")


@dataclass
class StmParams:
    """All learned weights of one cell.  Shapes in terms of StmConfig:

    E (d, in_dim); f1/f2 affine (d, d)+(d,) with tanh; f3 affine (n_q, d)+(n_q,);
    gates W_F/U_F/W_I/U_I (d, d) with scalar biases; the memory-operator
    projections; scalar write strengths alpha1..3; transfer G1 (d, n_q*d);
    readout G2 (n_r, d*d)+(n_r,) shared over the n_q axis and G3
    (n_o, n_q*n_r)+(n_o,).
    """

    E: Tensor
    f1_W: Tensor
    f1_b: Tensor
    f2_W: Tensor
    f2_b: Tensor
    f3_W: Tensor
    f3_b: Tensor
    W_F: Tensor
    U_F: Tensor
    b_F: Tensor
    W_I: Tensor
    U_I: Tensor
    b_I: Tensor
    sam: SamParams
    alpha1: Tensor
    alpha2: Tensor
    alpha3: Tensor
    G1: Tensor
    G2: Tensor
    G2_b: Tensor
    G3: Tensor
    G3_b: Tensor

    def named(self) -> list[tuple[str, Tensor]]:
        out = [
            ("E", self.E),
            ("f1_W", self.f1_W),
            ("f1_b", self.f1_b),
            ("f2_W", self.f2_W),
            ("f2_b", self.f2_b),
            ("f3_W", self.f3_W),
            ("f3_b", self.f3_b),
            ("W_F", self.W_F),
            ("U_F", self.U_F),
            ("b_F", self.b_F),
            ("W_I", self.W_I),
            ("U_I", self.U_I),
            ("b_I", self.b_I),
        ]
        out.extend(self.sam.named())
        out.extend(
            [
                ("alpha1", self.alpha1),
                ("alpha2", self.alpha2),
                ("alpha3", self.alpha3),
                ("G1", self.G1),
                ("G2", self.G2),
                ("G2_b", self.G2_b),
                ("G3", self.G3),
                ("G3_b", self.G3_b),
            ]
        )
        return out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named()]


@dataclass
class StmState:
    Mi: Tensor  # (d, d)
    Mr: Tensor  # (n_q, d, d)


def stm_init(cfg: StmConfig, rng: Rng) -> tuple[StmParams, StmState]:
    """Fresh parameters (uniform +-1/sqrt(fan_in), zero biases, unit alphas)
    and an all-zero memory state."""
    d, n_q, n_r, n_o = cfg.d, cfg.n_q, cfg.n_r, cfg.n_o

    def w(rows, cols):
        bound = 1.0 / np.sqrt(cols)
        return Tensor(rng.uniform(-bound, bound, (rows, cols)), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    def alpha():
        return Tensor(np.float64(1.0), requires_grad=cfg.alphas_learnable)

    params = StmParams(
        E=w(d, cfg.in_dim),
        f1_W=w(d, d),
        f1_b=zeros(d),
        f2_W=w(d, d),
        f2_b=zeros(d),
        f3_W=w(n_q, d),
        f3_b=zeros(n_q),
        W_F=w(d, d),
        U_F=w(d, d),
        b_F=Tensor(np.float64(0.0), requires_grad=True),
        W_I=w(d, d),
        U_I=w(d, d),
        b_I=Tensor(np.float64(0.0), requires_grad=True),
        sam=sam_init(d, n_q, n_q, rng),
        alpha1=alpha(),
        alpha2=alpha(),
        alpha3=alpha(),
        G1=w(d, n_q * d),
        G2=w(n_r, d * d),
        G2_b=zeros(n_r),
        G3=w(n_o, n_q * n_r),
        G3_b=zeros(n_o),
    )
    state = StmState(Mi=Tensor(np.zeros((d, d))), Mr=Tensor(np.zeros((n_q, d, d))))
    return params, state


def encode(x_raw: Tensor, p: StmParams) -> Tensor:
    return T.matmul(p.E, x_raw)


def _f1(x_t: Tensor, p: StmParams) -> Tensor:
    return T.tanh(T.add(T.matmul(p.f1_W, x_t), p.f1_b))


def _f2(x_t: Tensor, p: StmParams) -> Tensor:
    return T.tanh(T.add(T.matmul(p.f2_W, x_t), p.f2_b))


def _f3(x_t: Tensor, p: StmParams) -> Tensor:
    return T.add(T.matmul(p.f3_W, x_t), p.f3_b)


def _gate(x_t: Tensor, Mi_tanh: Tensor, W: Tensor, U: Tensor, b: Tensor) -> Tensor:
    """sigmoid(W x_t + U tanh(Mi) + b); the vector term lands row-wise."""
    pre = T.broadcast_add(T.matmul(W, x_t), T.matmul(U, Mi_tanh))
    return T.sigmoid(T.broadcast_add(pre, b))


def item_write(state: StmState, x_raw: Tensor, p: StmParams) -> Tensor:
    """Gated outer-product write of the encoded input into the item memory."""
    x_t = encode(x_raw, p)
    X_t = T.outer(_f1(x_t, p), _f2(x_t, p))
    Mi_tanh = T.tanh(state.Mi)
    F_t = _gate(x_t, Mi_tanh, p.W_F, p.U_F, p.b_F)
    I_t = _gate(x_t, Mi_tanh, p.W_I, p.U_I, p.b_I)
    return T.add(T.mul(F_t, state.Mi), T.mul(I_t, X_t))


def relational_read(state: StmState, x_t: Tensor, p: StmParams) -> Tensor:
    """Two-step contraction of the previous relational memory.

    Softmax over queries collapses the slice axis, then the collapsed
    matrix contracts against the second feature map of the input.
    """
    weights = T.softmax(_f3(x_t, p))
    flat = T.flatten_last_two(state.Mr)  # (n_q, d*d)
    collapsed = T.reshape(T.matmul(weights, flat), state.Mr.shape[1:])
    return T.matmul(collapsed, _f2(x_t, p))


def relational_write(state: StmState, x_t: Tensor, v_r: Tensor, p: StmParams) -> Tensor:
    """Mr + alpha1 * SAM(Mi + alpha2 * v_r (outer) f2(x_t)).

    ``state.Mi`` must already hold this step's item write.
    """
    refresh = T.scale(T.outer(v_r, _f2(x_t, p)), p.alpha2)
    sam_out = sam_forward(T.add(state.Mi, refresh), p.sam)
    return T.add(state.Mr, T.scale(sam_out, p.alpha1))


def transfer(state: StmState, p: StmParams) -> Tensor:
    """Mi + alpha3 * G1 @ (Mr flattened along its first two axes)."""
    flat = T.flatten_first_two(state.Mr)  # (n_q*d, d)
    return T.add(state.Mi, T.scale(T.matmul(p.G1, flat), p.alpha3))


def distill_output(state: StmState, p: StmParams) -> Tensor:
    """Flatten/affine twice: (n_q,d,d) -> (n_q,n_r) -> (n_q*n_r,) -> (n_o,)."""
    Zl = T.flatten_last_two(state.Mr)  # (n_q, d*d)
    H = T.transpose(T.broadcast_add(T.matmul(p.G2, T.transpose(Zl)), p.G2_b))  # (n_q, n_r)
    return T.add(T.matmul(p.G3, T.flatten_last_two(H)), p.G3_b)


def stm_step(state: StmState, x_raw: Tensor, p: StmParams) -> tuple[Tensor, StmState]:
    """One full cell step; returns the output and the updated state."""
    x_t = encode(x_raw, p)
    Mi_written = item_write(state, x_raw, p)
    v_r = relational_read(state, x_t, p)  # reads the *previous* Mr
    mid = StmState(Mi=Mi_written, Mr=state.Mr)
    Mr_new = relational_write(mid, x_t, v_r, p)
    after_write = StmState(Mi=Mi_written, Mr=Mr_new)
    Mi_new = transfer(after_write, p)
    new_state = StmState(Mi=Mi_new, Mr=Mr_new)
    o_t = distill_output(new_state, p)
    return o_t, new_state


# -- LSTM baseline -----------------------------------------------------------


@dataclass
class LstmParams:
    """Fused-gate LSTM (gate order i, f, g, o) plus an affine output head."""

    W_x: Tensor  # (4h, in_dim)
    W_h: Tensor  # (4h, h)
    b: Tensor  # (4h,)
    W_o: Tensor  # (n_o, h)
    b_o: Tensor  # (n_o,)

    def named(self) -> list[tuple[str, Tensor]]:
        return [
            ("lstm_Wx", self.W_x),
            ("lstm_Wh", self.W_h),
            ("lstm_b", self.b),
            ("lstm_out_W", self.W_o),
            ("lstm_out_b", self.b_o),
        ]

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named()]

    @property
    def hidden(self) -> int:
        return self.W_h.shape[1]


@dataclass
class LstmState:
    h: Tensor
    c: Tensor


def lstm_init(in_dim: int, hidden: int, n_o: int, rng: Rng) -> tuple[LstmParams, LstmState]:
    def w(rows, cols):
        bound = 1.0 / np.sqrt(cols)
        return Tensor(rng.uniform(-bound, bound, (rows, cols)), requires_grad=True)

    params = LstmParams(
        W_x=w(4 * hidden, in_dim),
        W_h=w(4 * hidden, hidden),
        b=Tensor(np.zeros(4 * hidden), requires_grad=True),
        W_o=w(n_o, hidden),
        b_o=Tensor(np.zeros(n_o), requires_grad=True),
    )
    state = LstmState(h=Tensor(np.zeros(hidden)), c=Tensor(np.zeros(hidden)))
    return params, state


def lstm_step(state: LstmState, x_raw: Tensor, p: LstmParams) -> tuple[Tensor, LstmState]:
    hidden = p.hidden
    z = T.add(T.add(T.matmul(p.W_x, x_raw), T.matmul(p.W_h, state.h)), p.b)
    Z = T.reshape(z, (4, hidden))
    i = T.sigmoid(T.take(Z, 0))
    f = T.sigmoid(T.take(Z, 1))
    g = T.tanh(T.take(Z, 2))
    o = T.sigmoid(T.take(Z, 3))
    c_new = T.add(T.mul(f, state.c), T.mul(i, g))
    h_new = T.mul(o, T.tanh(c_new))
    out = T.add(T.matmul(p.W_o, h_new), p.b_o)
    return out, LstmState(h=h_new, c=c_new)
