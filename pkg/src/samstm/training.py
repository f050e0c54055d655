"""Losses, optimizers, the training loop, and capacity/cost diagnostics.

The loop is deliberately plain: generate a batch of episodes, run the
recurrent cell over each sequence (a fresh tape per episode), average the
per-episode losses, backpropagate, clip the global gradient norm, and take
an optimizer step.  Evaluation runs on a frozen stream of episodes drawn
once from the eval seed so curves are comparable across runs and
bit-for-bit reproducible given the config.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from samstm import tensor as T
from samstm.rng import Rng, STREAM_EVAL, STREAM_INIT, STREAM_TRAIN
from samstm.stm import (
    LstmState,
    StmConfig,
    StmState,
    lstm_init,
    lstm_step,
    stm_init,
    stm_step,
)
from samstm.tasks import Episode, TaskConfig, generate, task_dims
from samstm.tensor import Tensor


class Divergence(RuntimeError):
    """Loss became non-finite; carries the iteration where it happened."""

    def __init__(self, iteration: int):
        super().__init__(f"training diverged (non-finite loss) at iteration {iteration}")
        self.iteration = iteration


# -- losses -------------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def loss_bits(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Masked-mean sigmoid cross-entropy over per-step bit logits.

    Computed in the log-sum-exp form ``max(z,0) - z*t + log1p(exp(-|z|))``
    so large logits cannot overflow; the backward rule is the exact
    ``sigmoid(z) - t``, wired as a fused node.
    """
    targets = np.asarray(targets, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if logits.shape != targets.shape:
        raise ValueError(f"loss_bits: logits {logits.shape} vs targets {targets.shape}")
    n_masked = int(np.sum(mask))
    if n_masked == 0:
        raise ValueError("loss_bits: mask selects no steps")
    z = logits.data
    elem = np.maximum(z, 0.0) - z * targets + np.log1p(np.exp(-np.abs(z)))
    weights = mask[:, None] / (n_masked * targets.shape[1])
    value = np.sum(elem * weights)

    def vjp(g):
        return (g * weights * (_sigmoid(z) - targets),)

    return T.Tensor(np.float64(value), requires_grad=logits.requires_grad,
                    parents=(logits,), vjp=vjp, op="loss_bits")


def loss_classify(logits: Tensor, target: int) -> Tensor:
    """Softmax cross-entropy against a class index, in stable form."""
    z = logits.data
    C = z.shape[0]
    if not 0 <= target < C:
        raise ValueError(f"loss_classify: target {target} out of range for {C} classes")
    m = np.max(z)
    lse = m + np.log(np.sum(np.exp(z - m)))
    value = lse - z[target]
    probs = np.exp(z - lse)

    def vjp(g):
        grad = probs.copy()
        grad[target] -= 1.0
        return (g * grad,)

    return T.Tensor(np.float64(value), requires_grad=logits.requires_grad,
                    parents=(logits,), vjp=vjp, op="loss_classify")


# -- optimizers ---------------------------------------------------------------


class Optimizer:
    """Holds parameter references and per-parameter state.  ``step``
    consumes ``p.grad`` (or an explicit grads list in parameter order)
    and clears the gradients afterwards."""

    def __init__(self, params: list[Tensor], lr: float):
        if lr < 0:
            raise ValueError("Optimizer: lr must be nonnegative")
        self.params = list(params)
        self.lr = lr
        self.t = 0

    def _gather(self, grads: list[np.ndarray] | None) -> list[np.ndarray]:
        if grads is None:
            grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        if len(grads) != len(self.params):
            raise ValueError(f"{type(self).__name__}: {len(grads)} grads for {len(self.params)} params")
        for p, g in zip(self.params, grads):
            if np.shape(g) != p.data.shape:
                raise ValueError(f"{type(self).__name__}: grad shape {np.shape(g)} != param {p.data.shape}")
        return grads

    def _clear(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, grads: list[np.ndarray] | None = None) -> None:
        raise NotImplementedError


class RmsProp(Optimizer):
    def __init__(self, params, lr=1e-4, rho=0.9, eps=1e-8):
        super().__init__(params, lr)
        self.rho, self.eps = rho, eps
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads=None):
        grads = self._gather(grads)
        self.t += 1
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.v[i] = self.rho * self.v[i] + (1.0 - self.rho) * g * g
            p.data = p.data - self.lr * g / np.sqrt(self.v[i] + self.eps)
        self._clear()


class Adam(Optimizer):
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads=None):
        grads = self._gather(grads)
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (self.m[i] / b1t) / (np.sqrt(self.v[i] / b2t) + self.eps)
        self._clear()


def make_optimizer(kind: str, params: list[Tensor], lr: float, **kw) -> Optimizer:
    if kind == "rmsprop":
        return RmsProp(params, lr=lr, **kw)
    if kind == "adam":
        return Adam(params, lr=lr, **kw)
    raise ValueError(f"make_optimizer: unknown kind {kind!r}")


def optimizer_step(opt: Optimizer, grads: list[np.ndarray] | None = None) -> None:
    opt.step(grads)


def clip_global_norm(params: list[Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


# -- metrics ------------------------------------------------------------------


def bit_error_per_sequence(
    preds: list[np.ndarray], targets: list[np.ndarray], masks: list[np.ndarray]
) -> float:
    """Mean over sequences of mismatched bit counts on masked steps.

    ``preds`` are probabilities (or logits shifted so 0.5 <-> 0); each is
    thresholded at 0.5.
    """
    errs = []
    for p, t, m in zip(preds, targets, masks):
        bits = (np.asarray(p) >= 0.5).astype(np.float64)
        sel = np.asarray(m) == 1.0
        errs.append(float(np.sum(bits[sel] != np.asarray(t)[sel])))
    return float(np.mean(errs))


@dataclass
class MetricsRow:
    iteration: int
    loss: float
    bit_error: float  # NaN for classification tasks
    accuracy: float
    seconds: float


@dataclass
class MetricsLog:
    rows: list[MetricsRow] = field(default_factory=list)

    def append(self, row: MetricsRow) -> None:
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ValueError("MetricsLog: iterations must be strictly increasing")
        self.rows.append(row)

    def last(self) -> MetricsRow:
        return self.rows[-1]

    def write_csv(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write("iteration,loss,bit_error,accuracy,seconds\n")
            for r in self.rows:
                fh.write(f"{r.iteration},{r.loss!r},{r.bit_error!r},{r.accuracy!r},{r.seconds:.3f}\n")


# -- run configuration --------------------------------------------------------


@dataclass
class RunConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    model: str = "stm"  # or "lstm"
    d: int = 32
    n_q: int = 2
    n_r: int = 32
    alphas_learnable: bool = True
    lstm_hidden: int = 128
    optimizer: str = "rmsprop"
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    batch: int = 32
    iters: int = 625
    eval_interval: int = 50
    eval_episodes: int = 512
    seed: int = 0
    grad_clip: float = 10.0
    # optional early stop on an eval metric ("bit_error" falls below, or
    # "accuracy" rises above, stop_value); purely a wall-clock convenience
    stop_metric: str | None = None
    stop_value: float = 0.0
    out_metrics: str | None = None
    out_checkpoint: str | None = None

    def __post_init__(self):
        if self.model not in ("stm", "lstm"):
            raise ValueError(f"RunConfig: unknown model {self.model!r}")
        if self.optimizer not in ("rmsprop", "adam"):
            raise ValueError(f"RunConfig: unknown optimizer {self.optimizer!r}")
        if self.lr < 0:
            raise ValueError("RunConfig: lr must be nonnegative")
        for name in ("batch", "iters", "eval_interval", "eval_episodes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"RunConfig: {name} must be positive")


def build_model(cfg: RunConfig):
    """(named params, fresh-state fn, step fn) for the configured model."""
    in_dim, n_o, _ = task_dims(cfg.task)
    init_rng = Rng(cfg.seed, STREAM_INIT)
    if cfg.model == "stm":
        scfg = StmConfig(
            d=cfg.d, n_q=cfg.n_q, n_r=cfg.n_r, n_o=n_o, in_dim=in_dim,
            alphas_learnable=cfg.alphas_learnable,
        )
        params, _ = stm_init(scfg, init_rng)

        def fresh_state():
            return StmState(
                Mi=Tensor(np.zeros((scfg.d, scfg.d))),
                Mr=Tensor(np.zeros((scfg.n_q, scfg.d, scfg.d))),
            )

        return params.named(), fresh_state, stm_step, params
    params, _ = lstm_init(in_dim, cfg.lstm_hidden, n_o, init_rng)

    def fresh_state():
        h = cfg.lstm_hidden
        return LstmState(h=Tensor(np.zeros(h)), c=Tensor(np.zeros(h)))

    return params.named(), fresh_state, lstm_step, params


def episode_forward(ep: Episode, fresh_state, step_fn, params) -> Tensor:
    """Stacked per-step output logits for one episode."""
    state = fresh_state()
    outs = []
    for t in range(ep.inputs.shape[0]):
        o, state = step_fn(state, Tensor(ep.inputs[t]), params)
        outs.append(o)
    return T.stack(outs)


def episode_loss(logits: Tensor, ep: Episode, kind: str) -> Tensor:
    if kind == "bits":
        return loss_bits(logits, ep.targets, ep.mask)
    step = int(np.nonzero(ep.mask)[0][-1])
    target = int(np.argmax(ep.targets[step]))
    return loss_classify(T.take(logits, step), target)


def evaluate(episodes: list[Episode], fresh_state, step_fn, params, kind: str) -> tuple[float, float, float]:
    """(mean loss, bit error per sequence, accuracy) over an episode list."""
    losses, preds, targets, masks, hits = [], [], [], [], []
    for ep in episodes:
        logits = episode_forward(ep, fresh_state, step_fn, params)
        losses.append(episode_loss(logits, ep, kind).item())
        if kind == "bits":
            preds.append(_sigmoid(logits.data))
            targets.append(ep.targets)
            masks.append(ep.mask)
        else:
            step = int(np.nonzero(ep.mask)[0][-1])
            hits.append(float(np.argmax(logits.data[step]) == np.argmax(ep.targets[step])))
    loss = float(np.mean(losses))
    if kind == "bits":
        be = bit_error_per_sequence(preds, targets, masks)
        acc = float(np.mean([np.all((p >= 0.5)[m == 1.0] == t[m == 1.0]) for p, t, m in zip(preds, targets, masks)]))
        return loss, be, acc
    return loss, float("nan"), float(np.mean(hits))


def train(cfg: RunConfig) -> MetricsLog:
    """Run the full loop; returns the metrics log and (optionally) writes
    the metrics CSV and final checkpoint.  Raises :class:`Divergence` with
    the failing iteration if the loss goes non-finite."""
    _, _, kind = task_dims(cfg.task)
    named, fresh_state, step_fn, params = build_model(cfg)
    plist = [t for _, t in named]
    trainables = [p for p in plist if p.requires_grad]
    opt = make_optimizer(
        cfg.optimizer, trainables, cfg.lr,
        **({"beta1": cfg.beta1, "beta2": cfg.beta2} if cfg.optimizer == "adam" else {}),
    )

    eval_rng = Rng(cfg.seed, STREAM_EVAL)
    eval_set = [generate(cfg.task, eval_rng) for _ in range(cfg.eval_episodes)]
    train_rng = Rng(cfg.seed, STREAM_TRAIN)

    log = MetricsLog()
    start = time.time()
    for it in range(1, cfg.iters + 1):
        batch = [generate(cfg.task, train_rng) for _ in range(cfg.batch)]
        for p in trainables:
            p.grad = None
        batch_loss = 0.0
        for ep in batch:
            logits = episode_forward(ep, fresh_state, step_fn, params)
            loss = episode_loss(logits, ep, kind)
            batch_loss += loss.item()
            T.scale(loss, 1.0 / cfg.batch).backward()
        batch_loss /= cfg.batch
        if not np.isfinite(batch_loss):
            raise Divergence(it)
        clip_global_norm(trainables, cfg.grad_clip)
        opt.step()

        if it % cfg.eval_interval == 0 or it == cfg.iters:
            loss, be, acc = evaluate(eval_set, fresh_state, step_fn, params, kind)
            log.append(MetricsRow(it, loss, be, acc, time.time() - start))
            if _stop_hit(cfg, be, acc):
                break

    if cfg.out_metrics:
        log.write_csv(cfg.out_metrics)
    if cfg.out_checkpoint:
        from samstm.checkpoint import save_checkpoint

        save_checkpoint(cfg.out_checkpoint, named)
    return log


def _stop_hit(cfg: RunConfig, bit_error: float, accuracy: float) -> bool:
    if cfg.stop_metric == "bit_error":
        return bit_error < cfg.stop_value
    if cfg.stop_metric == "accuracy":
        return accuracy >= cfg.stop_value
    return False


# -- diagnostics --------------------------------------------------------------


def numerical_rank(W: np.ndarray, tol: float = 1e-9, max_iters: int = 10000) -> float:
    """Soft rank ||W||_F^2 / ||W||_2^2.

    The spectral norm comes from power iteration on ``W^T W`` (applied as
    two matrix-vector products per sweep), run to relative tolerance
    ``tol`` on the Rayleigh estimate or ``max_iters`` sweeps.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ValueError(f"numerical_rank: expected a matrix, got shape {W.shape}")
    fro2 = float(np.sum(W * W))
    if fro2 == 0.0:
        raise ValueError("numerical_rank: zero matrix has no numerical rank")
    v = Rng(0).normal(size=W.shape[1])
    v /= np.linalg.norm(v)
    sigma2 = 0.0
    for _ in range(max_iters):
        u = W @ v
        v_new = W.T @ u
        nrm = np.linalg.norm(v_new)
        if nrm == 0.0:  # v landed exactly in the null space; restart shifted
            v = np.ones(W.shape[1]) / np.sqrt(W.shape[1])
            continue
        sigma2_new = float(v_new @ v)  # Rayleigh quotient for W^T W
        v = v_new / nrm
        if abs(sigma2_new - sigma2) <= tol * max(abs(sigma2_new), 1e-300):
            sigma2 = sigma2_new
            break
        sigma2 = sigma2_new
    return fro2 / sigma2


@dataclass(frozen=True)
class OpCounts:
    adds: int
    mults: int
    storage: int


def _counted_opa(q, K, V) -> tuple[np.ndarray, OpCounts]:
    n_kv, d_qk = K.shape
    d_v = V.shape[1]
    adds = mults = 0
    out = np.zeros((d_qk, d_v))
    for j in range(n_kv):
        f = q * K[j]
        mults += d_qk
        for a in range(d_qk):
            for b in range(d_v):
                out[a, b] += f[a] * V[j, b]
                mults += 1
                adds += 1
    return out, OpCounts(adds, mults, d_qk * d_v)


def _counted_dpa(q, K, V) -> tuple[np.ndarray, OpCounts]:
    n_kv, d_qk = K.shape
    d_v = V.shape[1]
    adds = mults = 0
    scores = np.zeros(n_kv)
    for i in range(n_kv):
        acc = 0.0
        for a in range(d_qk):
            acc += q[a] * K[i, a]
            mults += 1
            adds += 1
        scores[i] = acc
    out = np.zeros(d_v)
    for i in range(n_kv):
        for b in range(d_v):
            out[b] += scores[i] * V[i, b]
            mults += 1
            adds += 1
    return out, OpCounts(adds, mults, n_kv)


def flop_counters(kind: str, n_q: int, n_kv: int, d_qk: int, d_v: int) -> dict:
    """Measured scalar-op counts of a loop reference implementation next to
    the asymptotic cost formulas, for ``n_q`` independent queries."""
    if min(n_q, n_kv, d_qk, d_v) <= 0:
        raise ValueError("flop_counters: dimensions must be positive")
    rng = Rng(0, 7)
    K = rng.uniform(-1, 1, (n_kv, d_qk))
    V = rng.uniform(-1, 1, (n_kv, d_v))
    adds = mults = storage = 0
    for _ in range(n_q):
        q = rng.uniform(-1, 1, d_qk)
        _, c = (_counted_opa if kind == "opa" else _counted_dpa)(q, K, V)
        adds, mults, storage = adds + c.adds, mults + c.mults, storage + c.storage
    if kind == "opa":
        formula = OpCounts(n_q * n_kv * d_qk * d_v, n_q * d_qk * d_v, n_q * d_qk * d_v)
    elif kind == "dpa":
        formula = OpCounts((d_qk * n_q + d_v) * n_kv, (d_qk + d_v) * n_q * n_kv, n_q * n_kv)
    else:
        raise ValueError(f"flop_counters: unknown kind {kind!r}")
    return {
        "measured": OpCounts(adds, mults, storage),
        "formula": formula,
    }
