"""Synthetic sequence tasks: generators, brute-force oracles, file format.

Five tasks are provided.  Copy and priority sort are the classic
algorithmic benchmarks (emit the stored vectors back, optionally in
priority order).  Associative retrieval is key-value recall over one-hot
tokens.  Nth-farthest asks for the label of the vector whose distance
from a query vector ranks n-th from farthest — a purely relational
question.  RAR (relational associative recall) combines both memory
kinds: reconstruct the stored *item* (a group of vectors) that is
farthest from or closest to a query item, with the query's last bit
selecting the mode.

Every generator validates its episode against an independent oracle
(identity / stable sort / dictionary lookup / exhaustive distance
ranking) before returning, so a bad episode can never enter a batch.
Episodes serialize to a line-oriented ``.ep`` text format (see
``write_episodes``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from samstm.rng import Rng

N_LETTERS = 26  # associative-retrieval key vocabulary
N_DIGITS = 10  # associative-retrieval value vocabulary


@dataclass
class TaskConfig:
    """Shape parameters for all tasks; unused fields are ignored per task.

    Desk-scale defaults; the paper-scale presets (w=32 and friends) are
    just different field values.
    """

    task: str = "copy"
    w: int = 8  # bit width (copy / priority sort / rar)
    max_len: int = 10  # copy: L is drawn from [1, max_len]
    n_items: int = 6  # priority sort: number of vectors
    pairs: int = 4  # associative retrieval: number of key-value pairs
    m: int = 4  # nth-farthest: number of vectors
    k: int = 8  # nth-farthest: vector dimension
    items: int = 4  # rar: number of stored items
    vecs: int = 2  # rar: vectors per item
    seed: int | None = None  # recorded by the CLI; generators take an Rng

    def __post_init__(self):
        known = {"copy", "sort", "assoc", "nth", "rar"}
        if self.task not in known:
            raise ValueError(f"TaskConfig: unknown task {self.task!r} (choose from {sorted(known)})")
        for name in ("w", "max_len", "n_items", "pairs", "m", "k", "items", "vecs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TaskConfig: {name} must be positive")
        if self.task == "assoc" and self.pairs > N_LETTERS:
            raise ValueError(f"TaskConfig: pairs={self.pairs} exceeds key vocabulary ({N_LETTERS})")


@dataclass
class Episode:
    inputs: np.ndarray  # (T, in_dim)
    targets: np.ndarray  # (T, n_o); all-zero on unmasked steps
    mask: np.ndarray  # (T,) of {0.0, 1.0}
    task: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        T = self.inputs.shape[0]
        if self.targets.shape[0] != T or self.mask.shape[0] != T:
            raise ValueError("Episode: inputs/targets/mask disagree on sequence length")


def task_dims(cfg: TaskConfig) -> tuple[int, int, str]:
    """(in_dim, n_o, loss kind) for a task; kind is 'bits' or 'classify'."""
    if cfg.task == "copy":
        return cfg.w + 2, cfg.w, "bits"
    if cfg.task == "sort":
        return cfg.w + 3, cfg.w, "bits"
    if cfg.task == "assoc":
        return N_LETTERS + N_DIGITS, N_DIGITS, "classify"
    if cfg.task == "nth":
        return cfg.k + 3 * cfg.m, cfg.m, "classify"
    if cfg.task == "rar":
        return cfg.w + 2, cfg.w, "bits"
    raise ValueError(cfg.task)


# -- copy ---------------------------------------------------------------------


def gen_copy(cfg: TaskConfig, rng: Rng) -> Episode:
    """Start flag, L random bit vectors, go flag, then L decode steps."""
    w = cfg.w
    L = int(rng.integers(1, cfg.max_len + 1))
    vecs = rng.bits((L, w))
    T = 2 * L + 2
    inputs = np.zeros((T, w + 2))
    targets = np.zeros((T, w))
    mask = np.zeros(T)
    inputs[0, w] = 1.0  # start
    inputs[1 : L + 1, :w] = vecs
    inputs[L + 1, w + 1] = 1.0  # go
    targets[L + 2 :] = vecs
    mask[L + 2 :] = 1.0
    ep = Episode(inputs, targets, mask, "copy", {"L": L, "w": w})
    _validate(ep, oracle_copy)
    return ep


def oracle_copy(ep: Episode) -> np.ndarray:
    go = int(np.argmax(ep.inputs[:, -1]))
    stored = ep.inputs[1:go, : ep.targets.shape[1]]
    out = np.zeros_like(ep.targets)
    out[ep.mask == 1.0] = stored
    return out


# -- priority sort ------------------------------------------------------------


def gen_priority_sort(cfg: TaskConfig, rng: Rng) -> Episode:
    """N bit vectors with scalar priorities; decode in descending priority."""
    w, N = cfg.w, cfg.n_items
    vecs = rng.bits((N, w))
    prios = rng.uniform(-1.0, 1.0, N)
    T = 2 * N + 2
    inputs = np.zeros((T, w + 3))
    targets = np.zeros((T, w))
    mask = np.zeros(T)
    inputs[0, w + 1] = 1.0  # start
    inputs[1 : N + 1, :w] = vecs
    inputs[1 : N + 1, w] = prios
    inputs[N + 1, w + 2] = 1.0  # go
    order = sorted(range(N), key=lambda i: (-prios[i], i))  # ties: earlier first
    targets[N + 2 :] = vecs[order]
    mask[N + 2 :] = 1.0
    ep = Episode(inputs, targets, mask, "sort", {"N": N, "w": w})
    _validate(ep, oracle_priority_sort)
    return ep


def oracle_priority_sort(ep: Episode) -> np.ndarray:
    w = ep.targets.shape[1]
    go = int(np.argmax(ep.inputs[:, w + 2]))
    vecs = ep.inputs[1:go, :w]
    prios = ep.inputs[1:go, w]
    order = sorted(range(len(prios)), key=lambda i: (-prios[i], i))
    out = np.zeros_like(ep.targets)
    out[ep.mask == 1.0] = vecs[order]
    return out


# -- associative retrieval ----------------------------------------------------


def gen_assoc_retrieval(cfg: TaskConfig, rng: Rng) -> Episode:
    """R one-hot key/value token pairs, then a query key; answer its value."""
    R = cfg.pairs
    keys = rng.choice(N_LETTERS, R, replace=False)
    values = rng.integers(0, N_DIGITS, R)
    q = int(rng.integers(0, R))
    T = 2 * R + 1
    in_dim = N_LETTERS + N_DIGITS
    inputs = np.zeros((T, in_dim))
    targets = np.zeros((T, N_DIGITS))
    mask = np.zeros(T)
    for i in range(R):
        inputs[2 * i, keys[i]] = 1.0
        inputs[2 * i + 1, N_LETTERS + values[i]] = 1.0
    inputs[T - 1, keys[q]] = 1.0
    targets[T - 1, values[q]] = 1.0
    mask[T - 1] = 1.0
    ep = Episode(inputs, targets, mask, "assoc", {"R": R})
    _validate(ep, oracle_assoc_retrieval)
    return ep


def oracle_assoc_retrieval(ep: Episode) -> np.ndarray:
    T = ep.inputs.shape[0]
    binding = {}
    for i in range(0, T - 1, 2):
        key = int(np.argmax(ep.inputs[i, :N_LETTERS]))
        val = int(np.argmax(ep.inputs[i + 1, N_LETTERS:]))
        binding[key] = val
    query = int(np.argmax(ep.inputs[T - 1, :N_LETTERS]))
    out = np.zeros_like(ep.targets)
    out[T - 1, binding[query]] = 1.0
    return out


# -- nth farthest -------------------------------------------------------------


def gen_nth_farthest(cfg: TaskConfig, rng: Rng) -> Episode:
    """Which vector (by label) is n-th farthest from the query vector?

    Each step input is [vector, one-hot label, one-hot n, one-hot query
    label]; the n/query channels repeat on every step.  The candidate set
    includes the query vector itself (self-distance 0), recorded in meta
    so the convention is explicit.  Duplicate distances would make the
    ranking ambiguous; such draws are regenerated.
    """
    m, k = cfg.m, cfg.k
    for _ in range(100):
        vecs = rng.uniform(-1.0, 1.0, (m, k))
        labels = rng.permutation(m)
        n = int(rng.integers(1, m + 1))
        query_label = int(rng.integers(0, m))
        q_pos = int(np.where(labels == query_label)[0][0])
        dists = np.linalg.norm(vecs - vecs[q_pos], axis=1)
        if len(np.unique(dists)) < m:
            continue
        rank = np.argsort(-dists)  # farthest first
        answer = int(labels[rank[n - 1]])
        inputs = np.zeros((m, k + 3 * m))
        for i in range(m):
            inputs[i, :k] = vecs[i]
            inputs[i, k + labels[i]] = 1.0
            inputs[i, k + m + (n - 1)] = 1.0
            inputs[i, k + 2 * m + query_label] = 1.0
        targets = np.zeros((m, m))
        targets[m - 1, answer] = 1.0
        mask = np.zeros(m)
        mask[m - 1] = 1.0
        ep = Episode(
            inputs, targets, mask, "nth",
            {"n": n, "query_label": query_label, "include_self": True},
        )
        _validate(ep, oracle_nth_farthest)
        return ep
    raise RuntimeError("gen_nth_farthest: could not draw distinct distances")


def oracle_nth_farthest(ep: Episode) -> np.ndarray:
    m = ep.targets.shape[1]
    k = ep.inputs.shape[1] - 3 * m
    vecs = ep.inputs[:, :k]
    labels = np.argmax(ep.inputs[:, k : k + m], axis=1)
    n = int(np.argmax(ep.inputs[0, k + m : k + 2 * m])) + 1
    query_label = int(np.argmax(ep.inputs[0, k + 2 * m :]))
    q_pos = int(np.where(labels == query_label)[0][0])
    dists = np.linalg.norm(vecs - vecs[q_pos], axis=1)
    rank = np.argsort(-dists)
    out = np.zeros_like(ep.targets)
    out[-1, int(labels[rank[n - 1]])] = 1.0
    return out


# -- relational associative recall -------------------------------------------


def _rar_select(items: np.ndarray, query: np.ndarray) -> int | None:
    """Index of the farthest (flag=1) or closest (flag=0) item unequal to
    the query; None if ambiguous (tie) or no candidate remains.

    ``items`` is (I, V*w); ``query`` is (V*w,).  The flag position (last
    coordinate) is excluded from both the distance and the equality test.
    """
    flag = query[-1]
    q = query[:-1]
    cand = items[:, :-1]
    dists = np.linalg.norm(cand - q, axis=1)
    keep = [i for i in range(len(items)) if not np.array_equal(cand[i], q)]
    if not keep:
        return None
    kept = dists[keep]
    if len(np.unique(kept)) < len(kept):
        return None
    pick = np.argmax(kept) if flag == 1.0 else np.argmin(kept)
    return int(keep[pick])


def gen_rar(cfg: TaskConfig, rng: Rng) -> Episode:
    """Store I items of V vectors each; reconstruct the one selected by a
    query item (farthest if the query's last bit is 1, closest if 0)."""
    I, V, w = cfg.items, cfg.vecs, cfg.w
    for _ in range(100):
        items = rng.bits((I, V, w))
        query = rng.bits((V, w))
        target_index = _rar_select(items.reshape(I, V * w), query.reshape(V * w))
        if target_index is None:
            continue
        T = I * V + V + 1 + V
        inputs = np.zeros((T, w + 2))
        targets = np.zeros((T, w))
        mask = np.zeros(T)
        inputs[: I * V, :w] = items.reshape(I * V, w)
        inputs[I * V : I * V + V, :w] = query
        inputs[I * V : I * V + V, w] = 1.0  # query marker
        inputs[I * V + V, w + 1] = 1.0  # go
        targets[I * V + V + 1 :] = items[target_index]
        mask[I * V + V + 1 :] = 1.0
        mode = "far" if query[V - 1, w - 1] == 1.0 else "near"
        ep = Episode(
            inputs, targets, mask, "rar",
            {"I": I, "V": V, "w": w, "mode": mode, "target_index": target_index},
        )
        _validate(ep, oracle_rar)
        return ep
    raise RuntimeError("gen_rar: could not draw an unambiguous instance")


def oracle_rar(ep: Episode) -> np.ndarray:
    w = ep.targets.shape[1]
    marker = ep.inputs[:, w]
    q_steps = np.where(marker == 1.0)[0]
    V = len(q_steps)
    I = int(q_steps[0]) // V
    items = ep.inputs[: I * V, :w].reshape(I, V * w)
    query = ep.inputs[q_steps, :w].reshape(V * w)
    idx = _rar_select(items, query)
    out = np.zeros_like(ep.targets)
    out[ep.mask == 1.0] = items[idx].reshape(V, w)
    return out


def rar_guess_plateau(episodes: list[Episode]) -> float:
    """Expected bit error per sequence of a copy-the-wrong-item guesser.

    The guesser answers with a uniformly random stored item; its expected
    error on one episode is the mean Hamming distance from each stored
    item to the true target.  This is the plateau a model reaches by
    learning to copy *some* item without resolving which one.
    """
    total = 0.0
    for ep in episodes:
        w = ep.targets.shape[1]
        marker = ep.inputs[:, w]
        V = int(np.sum(marker))
        I = int(np.where(marker == 1.0)[0][0]) // V
        items = ep.inputs[: I * V, :w].reshape(I, V * w)
        target = ep.targets[ep.mask == 1.0].reshape(V * w)
        total += float(np.mean([np.sum(item != target) for item in items]))
    return total / len(episodes)


# -- dispatch -----------------------------------------------------------------

GENERATORS = {
    "copy": gen_copy,
    "sort": gen_priority_sort,
    "assoc": gen_assoc_retrieval,
    "nth": gen_nth_farthest,
    "rar": gen_rar,
}

ORACLES = {
    "copy": oracle_copy,
    "sort": oracle_priority_sort,
    "assoc": oracle_assoc_retrieval,
    "nth": oracle_nth_farthest,
    "rar": oracle_rar,
}


def generate(cfg: TaskConfig, rng: Rng) -> Episode:
    return GENERATORS[cfg.task](cfg, rng)


def _validate(ep: Episode, oracle) -> None:
    want = oracle(ep)
    if not np.array_equal(want, ep.targets):
        raise RuntimeError(f"{ep.task}: generated episode fails its oracle")


# -- serialization ------------------------------------------------------------

FORMAT_HEADER = "format-version: 1"
_FIXED_KEYS = ("task", "T", "in_dim", "n_o")


def _fmt_val(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    s = str(v)
    if any(c.isspace() for c in s) or "=" in s:
        raise ValueError(f"meta value {s!r} cannot contain whitespace or '='")
    return s


def _parse_val(s: str):
    if s == "true":
        return True
    if s == "false":
        return False
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        pass
    return s


def write_episodes(path: str, episodes: list[Episode]) -> None:
    lines = [FORMAT_HEADER]
    for ep in episodes:
        T, in_dim = ep.inputs.shape
        n_o = ep.targets.shape[1]
        head = [f"task={ep.task}", f"T={T}", f"in_dim={in_dim}", f"n_o={n_o}"]
        head += [f"{k}={_fmt_val(ep.meta[k])}" for k in sorted(ep.meta)]
        lines.append("episode " + " ".join(head))
        for t in range(T):
            row_in = " ".join(repr(float(x)) for x in ep.inputs[t])
            row_tg = " ".join(repr(float(x)) for x in ep.targets[t])
            lines.append(f"{row_in} | {row_tg} | {int(ep.mask[t])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_episodes(path: str) -> list[Episode]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty episode file")
    if lines[0].strip() != FORMAT_HEADER:
        raise ValueError(f"{path}:1: expected '{FORMAT_HEADER}', got {lines[0]!r}")
    episodes: list[Episode] = []
    i = 1
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        if not lines[i].startswith("episode "):
            raise ValueError(f"{path}:{i + 1}: expected an 'episode' header line")
        fields = {}
        for tok in lines[i].split()[1:]:
            if "=" not in tok:
                raise ValueError(f"{path}:{i + 1}: malformed field {tok!r}")
            k, v = tok.split("=", 1)
            fields[k] = v
        missing = [k for k in _FIXED_KEYS if k not in fields]
        if missing:
            raise ValueError(f"{path}:{i + 1}: missing fields {missing}")
        task = fields.pop("task")
        T = int(fields.pop("T"))
        in_dim = int(fields.pop("in_dim"))
        n_o = int(fields.pop("n_o"))
        meta = {k: _parse_val(v) for k, v in fields.items()}
        inputs = np.zeros((T, in_dim))
        targets = np.zeros((T, n_o))
        mask = np.zeros(T)
        for t in range(T):
            ln = i + 1 + t
            if ln >= len(lines):
                raise ValueError(f"{path}:{ln + 1}: unexpected end of file inside episode")
            parts = lines[ln].split(" | ")
            if len(parts) != 3:
                raise ValueError(f"{path}:{ln + 1}: expected 'inputs | targets | mask'")
            try:
                inputs[t] = [float(x) for x in parts[0].split()]
                targets[t] = [float(x) for x in parts[1].split()]
                mask[t] = float(int(parts[2]))
            except (ValueError, IndexError) as e:
                raise ValueError(f"{path}:{ln + 1}: bad step line ({e})") from None
        episodes.append(Episode(inputs, targets, mask, task, meta))
        i += 1 + T
    return episodes
