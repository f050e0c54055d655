"""Checkpoint files: a plain-text header followed by raw float64 data.

Layout::

    samstm-checkpoint 1
    tensor <name> <dim0,dim1,...> <byte-offset>
    ...
    data
    <concatenated row-major little-endian float64 blocks>

Offsets are relative to the first byte after the ``data`` line.  Scalars
use an empty shape field (``-``).  Names must be unique; the reader
returns an ordered ``{name: ndarray}`` mapping and the writer accepts any
iterable of ``(name, Tensor-or-ndarray)`` pairs.
"""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

MAGIC = "samstm-checkpoint 1"


def save_checkpoint(path: str, named_tensors: Iterable[tuple[str, object]]) -> None:
    entries = []
    offset = 0
    blobs = []
    seen = set()
    for name, t in named_tensors:
        if name in seen:
            raise ValueError(f"save_checkpoint: duplicate tensor name {name!r}")
        seen.add(name)
        data = np.asarray(getattr(t, "data", t), dtype=np.float64)
        shape = ",".join(str(s) for s in data.shape) if data.shape else "-"
        entries.append(f"tensor {name} {shape} {offset}")
        blob = data.astype("<f8").tobytes(order="C")
        blobs.append(blob)
        offset += len(blob)
    header = MAGIC + "\n" + "\n".join(entries) + "\ndata\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    sep = b"\ndata\n"
    cut = raw.find(sep)
    if cut < 0:
        raise ValueError(f"load_checkpoint: {path} has no data section")
    header = raw[:cut].decode("ascii").splitlines()
    body = raw[cut + len(sep):]
    if not header or header[0] != MAGIC:
        raise ValueError(f"load_checkpoint: {path} is not a checkpoint file")
    out: dict[str, np.ndarray] = {}
    for line in header[1:]:
        parts = line.split()
        if len(parts) != 4 or parts[0] != "tensor":
            raise ValueError(f"load_checkpoint: malformed header line {line!r}")
        _, name, shape_s, offset_s = parts
        shape = () if shape_s == "-" else tuple(int(x) for x in shape_s.split(","))
        offset = int(offset_s)
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=offset)
        out[name] = arr.reshape(shape).astype(np.float64).copy()
    return out


def restore_into(named_tensors: Iterable[tuple[str, object]], loaded: Mapping[str, np.ndarray]) -> None:
    """Copy loaded arrays into existing parameter tensors, checking shapes."""
    for name, t in named_tensors:
        if name not in loaded:
            raise KeyError(f"restore_into: checkpoint is missing tensor {name!r}")
        src = loaded[name]
        if src.shape != t.data.shape:
            raise ValueError(f"restore_into: {name} shape {src.shape} != expected {t.data.shape}")
        t.data = src.copy()
