"""Text formats: COO tensor files and factor-matrix CSV files."""

from __future__ import annotations

import io as _io
import os
from pathlib import Path

import numpy as np

from .tensor import FactorSet, SparseTensor3


class CooParseError(ValueError):
    """Malformed COO input; carries the offending 1-based line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def load_coo(source) -> SparseTensor3:
    """Read a whitespace-separated "i j k value" stream into a tensor.

    An optional leading "%dims I J K" header fixes the dimensions; without
    it each dimension is the largest index seen plus one. '#' starts a
    comment, blank lines are skipped, duplicate coordinates are summed.

    `source` may be a path or an open text stream.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, "r", encoding="utf-8") as fh:
            return load_coo(fh)
    dims = None
    subs: list[tuple[int, int, int]] = []
    vals: list[float] = []
    seen_entry = False
    for lineno, raw in enumerate(source, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("%"):
            fields = line[1:].split()
            if not fields or fields[0] != "dims":
                raise CooParseError(lineno, f"unknown directive {line.split()[0]!r}")
            if seen_entry or dims is not None:
                raise CooParseError(lineno, "%dims must be the first content line")
            if len(fields) != 4:
                raise CooParseError(lineno, "%dims requires exactly three sizes")
            try:
                dims = tuple(int(f) for f in fields[1:])
            except ValueError:
                raise CooParseError(lineno, "non-integer dimension in %dims") from None
            if any(d <= 0 for d in dims):
                raise CooParseError(lineno, "dimensions must be positive")
            continue
        fields = line.split()
        if len(fields) != 4:
            raise CooParseError(lineno, f"expected 'i j k value', got {len(fields)} fields")
        try:
            i, j, k = (int(f) for f in fields[:3])
            v = float(fields[3])
        except ValueError:
            raise CooParseError(lineno, f"could not parse entry {line!r}") from None
        if min(i, j, k) < 0:
            raise CooParseError(lineno, "indices must be nonnegative")
        if dims is not None and (i >= dims[0] or j >= dims[1] or k >= dims[2]):
            raise CooParseError(lineno, f"index ({i}, {j}, {k}) outside declared dims {dims}")
        subs.append((i, j, k))
        vals.append(v)
        seen_entry = True
    if dims is None:
        if not subs:
            raise CooParseError(0, "empty input and no %dims header")
        arr = np.asarray(subs, dtype=np.int64)
        dims = tuple(int(m) + 1 for m in arr.max(axis=0))
    return SparseTensor3(dims, np.asarray(subs, dtype=np.int64).reshape(-1, 3), vals)


def save_coo(t: SparseTensor3, path) -> None:
    """Write a tensor in the format read by :func:`load_coo`."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("%dims {} {} {}\n".format(*t.dims))
        for (i, j, k), v in zip(t.subs, t.vals):
            fh.write(f"{i} {j} {k} {v!r}\n")


def loads_coo(text: str) -> SparseTensor3:
    return load_coo(_io.StringIO(text))


def save_matrix_csv(m: np.ndarray, path) -> None:
    """Comma-separated matrix with a "# rows cols" header line."""
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {m.shape[0]} {m.shape[1]}\n")
        for row in m:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def load_matrix_csv(path) -> np.ndarray:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValueError(f"{path}: missing '# rows cols' header")
        try:
            rows, cols = (int(f) for f in header[1:].split())
        except ValueError:
            raise ValueError(f"{path}: bad '# rows cols' header {header!r}") from None
        data = [[float(x) for x in line.strip().split(",")] for line in fh if line.strip()]
    m = np.asarray(data, dtype=np.float64)
    if m.size == 0:
        m = m.reshape(0, cols)
    if m.shape != (rows, cols):
        raise ValueError(f"{path}: header says {(rows, cols)}, data is {m.shape}")
    return m


_FACTOR_FILES = ("A.csv", "B.csv", "C.csv")


def save_factors(fs: FactorSet, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, mat in zip(_FACTOR_FILES, fs.matrices()):
        save_matrix_csv(mat, directory / name)
    save_matrix_csv(fs.weights.reshape(1, -1), directory / "weights.csv")


def load_factors(directory) -> FactorSet:
    directory = Path(directory)
    mats = []
    for name in _FACTOR_FILES:
        path = directory / name
        if not path.exists():
            raise FileNotFoundError(f"missing factor file {path}")
        mats.append(load_matrix_csv(path))
    weights_path = directory / "weights.csv"
    weights = load_matrix_csv(weights_path).ravel() if weights_path.exists() else None
    return FactorSet(*mats, weights=weights)
