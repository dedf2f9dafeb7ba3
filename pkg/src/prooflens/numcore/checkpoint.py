"""Plain-text checkpoint files.

Layout::

    PLCKPT 1
    encoder.layer0.b1 1 256
    ...
    <blank line>
    <values of the first tensor, space separated>
    ...

Values use Python's shortest round-trip ``repr`` so a save/load cycle is
bit-exact.
"""
from __future__ import annotations

import math
import os

import numpy as np

from .params import ParamStore

MAGIC = "PLCKPT 1"


class CheckpointError(Exception):
    pass


class FileMissing(CheckpointError, FileNotFoundError):
    pass


class ManifestShapeMismatch(CheckpointError):
    pass


class CorruptValue(CheckpointError):
    pass


class CheckpointMismatch(CheckpointError):
    pass


def write_checkpoint(path: str | os.PathLike, values: dict[str, np.ndarray]) -> None:
    names = sorted(values)
    lines = [MAGIC]
    for name in names:
        lines.append(" ".join([name] + [str(d) for d in np.shape(values[name])]))
    lines.append("")
    for name in names:
        flat = np.asarray(values[name], dtype=np.float64).reshape(-1)
        lines.append(" ".join(repr(float(x)) for x in flat))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    if not os.path.exists(path):
        raise FileMissing(f"checkpoint not found: {path}")
    with open(path, encoding="ascii") as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0].strip() != MAGIC:
        raise CorruptValue(f"{path}: missing '{MAGIC}' header")
    try:
        blank = lines.index("", 1)
    except ValueError:
        raise CorruptValue(f"{path}: manifest is not terminated by a blank line") from None
    manifest = []
    for lineno, line in enumerate(lines[1:blank], start=2):
        parts = line.split()
        try:
            manifest.append((parts[0], tuple(int(d) for d in parts[1:])))
        except (IndexError, ValueError):
            raise CorruptValue(f"{path}:{lineno}: bad manifest line {line!r}") from None
    body = lines[blank + 1:]
    if body and body[-1] == "":
        body = body[:-1]
    if len(body) != len(manifest):
        raise ManifestShapeMismatch(
            f"{path}: manifest lists {len(manifest)} tensors, found {len(body)} value lines")
    out: dict[str, np.ndarray] = {}
    for (name, shape), line in zip(manifest, body):
        tokens = line.split()
        expected = math.prod(shape)
        if len(tokens) != expected:
            raise ManifestShapeMismatch(
                f"{path}: {name} declared {shape} ({expected} values) but has {len(tokens)}")
        try:
            vals = [float(tok) for tok in tokens]
        except ValueError:
            raise CorruptValue(f"{path}: unparsable value in {name}") from None
        if not all(math.isfinite(v) for v in vals):
            raise CorruptValue(f"{path}: non-finite value in {name}")
        out[name] = np.array(vals, dtype=np.float64).reshape(shape)
    return out


def save_store(path: str | os.PathLike, store: ParamStore) -> None:
    """Write every parameter and batch-norm running statistic of ``store``."""
    write_checkpoint(path, store.snapshot())


def load_store(path: str | os.PathLike, store: ParamStore, prefix: str | None = None) -> list[str]:
    """Copy checkpoint values into ``store``.

    With ``prefix`` only names starting with it are transferred (others in the
    file are ignored); every matching store entry must be present with the same
    shape.  Returns the names loaded.
    """
    values = read_checkpoint(path)
    current = store.snapshot()
    wanted = [n for n in current if prefix is None or n.startswith(prefix)]
    missing = [n for n in wanted if n not in values]
    if missing:
        raise CheckpointMismatch(f"checkpoint lacks {missing[:3]}")
    for n in wanted:
        if values[n].shape != current[n].shape:
            raise CheckpointMismatch(
                f"{n}: checkpoint shape {values[n].shape} vs model {current[n].shape}")
    store.restore({n: values[n] for n in wanted})
    return wanted
