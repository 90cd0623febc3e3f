"""Sparse 3-mode tensor storage and the dense-factor kernels built on it."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import khatri_rao

logger = logging.getLogger("autoten.tensor")

# Above this many cells a dense materialization is refused outright.
_DENSE_CELL_LIMIT = 1 << 27

# Khatri-Rao products larger than this many doubles fall back to the
# gather/bincount MTTKRP path.
_KRP_CELL_LIMIT = 1 << 24


class DimensionMismatchError(ValueError):
    """Shapes of tensors and factor matrices disagree."""


def _check_matrix(m: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite values")
    return m


@dataclass(frozen=True, eq=False)
class SparseTensor3:
    """Coordinate-format 3-mode tensor.

    Entries are deduplicated at construction (duplicate coordinates are
    summed), sorted by linear index with the mode-1 index varying slowest,
    and stored read-only.

    Parameters
    ----------
    dims:
        (I, J, K), all positive.
    subs:
        (nnz, 3) integer coordinates, 0-based.
    vals:
        (nnz,) real values.
    """

    dims: tuple[int, int, int]
    subs: np.ndarray
    vals: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise ValueError(f"dims must be three positive integers, got {self.dims}")
        subs = np.asarray(self.subs, dtype=np.int64).reshape(-1, 3)
        vals = np.asarray(self.vals, dtype=np.float64).ravel()
        if subs.shape[0] != vals.shape[0]:
            raise ValueError("subs and vals lengths differ")
        if not np.all(np.isfinite(vals)):
            raise ValueError("tensor values must be finite")
        if subs.size:
            if subs.min() < 0 or np.any(subs >= np.array(dims, dtype=np.int64)):
                raise ValueError("tensor index out of bounds")
            linear = np.ravel_multi_index((subs[:, 0], subs[:, 1], subs[:, 2]), dims)
            uniq, inverse = np.unique(linear, return_inverse=True)
            if uniq.shape[0] != linear.shape[0]:
                vals = np.bincount(inverse, weights=vals, minlength=uniq.shape[0])
                ii, jj, kk = np.unravel_index(uniq, dims)
                subs = np.stack([ii, jj, kk], axis=1).astype(np.int64)
            else:
                order = np.argsort(linear, kind="stable")
                subs = subs[order]
                vals = vals[order]
        subs.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "subs", subs)
        object.__setattr__(self, "vals", vals)
        object.__setattr__(self, "_unfoldings", {})

    def __reduce__(self):
        # keep worker payloads lean: cached unfoldings are rebuilt on demand
        return (SparseTensor3, (self.dims, self.subs, self.vals))

    @property
    def nnz(self) -> int:
        return int(self.vals.shape[0])

    def norm(self) -> float:
        """Frobenius norm over stored entries."""
        return float(np.sqrt(np.dot(self.vals, self.vals)))

    def is_count_valued(self) -> bool:
        """True when every stored value is a nonnegative integer."""
        if self.nnz == 0:
            return True
        return bool(self.vals.min() >= 0 and np.all(self.vals == np.floor(self.vals)))

    def has_negative(self) -> bool:
        return bool(self.nnz and self.vals.min() < 0)

    def clamp_nonnegative(self) -> "SparseTensor3":
        """Copy with negative values set to zero (zeros are dropped)."""
        keep = self.vals > 0
        return SparseTensor3(self.dims, self.subs[keep], self.vals[keep])

    def to_dense(self) -> np.ndarray:
        i, j, k = self.dims
        if i * j * k > _DENSE_CELL_LIMIT:
            raise MemoryError(f"refusing to densify a {self.dims} tensor")
        dense = np.zeros(self.dims)
        dense[self.subs[:, 0], self.subs[:, 1], self.subs[:, 2]] = self.vals
        return dense

    def unfolding(self, mode: int) -> sp.csr_matrix:
        """Sparse mode-n unfolding, cached; columns follow C order of the
        remaining modes."""
        mode = _check_mode(mode)
        cache = self._unfoldings
        if mode not in cache:
            rest = [d for d in (0, 1, 2) if d != mode - 1]
            rows = self.subs[:, mode - 1]
            cols = self.subs[:, rest[0]] * self.dims[rest[1]] + self.subs[:, rest[1]]
            shape = (self.dims[mode - 1], self.dims[rest[0]] * self.dims[rest[1]])
            cache[mode] = sp.csr_matrix((self.vals, (rows, cols)), shape=shape)
        return cache[mode]


@dataclass(frozen=True, eq=False)
class FactorSet:
    """Three dense factor matrices sharing a column count, plus optional
    per-component weights (all ones when unused)."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        a = _check_matrix(self.a, "a")
        b = _check_matrix(self.b, "b")
        c = _check_matrix(self.c, "c")
        if not (a.shape[1] == b.shape[1] == c.shape[1]):
            raise DimensionMismatchError("factor matrices must share a column count")
        if a.shape[1] < 1:
            raise ValueError("rank must be >= 1")
        w = self.weights
        w = np.ones(a.shape[1]) if w is None else np.asarray(w, dtype=np.float64).ravel()
        if w.shape[0] != a.shape[1]:
            raise DimensionMismatchError("weights length must equal the rank")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "weights", w)

    @property
    def rank(self) -> int:
        return int(self.a.shape[1])

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.a.shape[0], self.b.shape[0], self.c.shape[0])

    def matrices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.a, self.b, self.c)

    def absorb_weights(self) -> "FactorSet":
        """Fold the weights into the mode-1 factor; weights become ones."""
        if np.all(self.weights == 1.0):
            return self
        return FactorSet(self.a * self.weights, self.b, self.c)

    def to_dense(self) -> np.ndarray:
        fs = self.absorb_weights()
        return np.einsum("if,jf,kf->ijk", fs.a, fs.b, fs.c)


@dataclass(frozen=True, eq=False)
class SparseVector:
    """Sparse real vector: sorted indices plus values."""

    n: int
    idx: np.ndarray
    vals: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.idx, dtype=np.int64).ravel()
        vals = np.asarray(self.vals, dtype=np.float64).ravel()
        if idx.shape != vals.shape:
            raise ValueError("idx and vals lengths differ")
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            raise ValueError("sparse vector index out of range")
        object.__setattr__(self, "idx", idx)
        object.__setattr__(self, "vals", vals)

    @property
    def nnz(self) -> int:
        return int(self.idx.shape[0])

    def toarray(self) -> np.ndarray:
        if self.n > _DENSE_CELL_LIMIT:
            raise MemoryError(f"refusing to densify a length-{self.n} vector")
        out = np.zeros(self.n)
        out[self.idx] = self.vals
        return out


def _check_mode(mode: int) -> int:
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode}")
    return mode


def _check_dims(t: SparseTensor3, fs: FactorSet) -> None:
    if fs.shape != t.dims:
        raise DimensionMismatchError(
            f"factor shapes {fs.shape} do not match tensor dims {t.dims}"
        )


def vectorize(t: SparseTensor3) -> SparseVector:
    """Vectorize with the mode-1 index varying slowest.

    Entry (i, j, k) maps to linear position i*(J*K) + j*K + k, which makes
    vec of the reconstruction equal (A kron B kron C) vec(core).
    """
    _, j, k = t.dims
    idx = t.subs[:, 0] * (j * k) + t.subs[:, 1] * k + t.subs[:, 2]
    return SparseVector(t.dims[0] * j * k, idx, t.vals)


def devectorize(v: SparseVector, dims: tuple[int, int, int]) -> SparseTensor3:
    """Inverse of :func:`vectorize` for the given dims."""
    i, j, k = (int(d) for d in dims)
    if v.n != i * j * k:
        raise DimensionMismatchError("vector length does not match dims")
    ii, jj, kk = np.unravel_index(v.idx, (i, j, k))
    return SparseTensor3((i, j, k), np.stack([ii, jj, kk], axis=1), v.vals)


def _other_modes(mode: int) -> tuple[int, int]:
    return {1: (2, 3), 2: (1, 3), 3: (1, 2)}[mode]


def mttkrp(t: SparseTensor3, factors, mode: int) -> np.ndarray:
    """Matricized-tensor times Khatri-Rao product for one mode.

    Iterates only over stored nonzeros. `factors` is a FactorSet or a
    (a, b, c) tuple; the result has shape (dims[mode-1], rank).

    The remaining modes enter the Khatri-Rao product in increasing mode
    order, matching the column order of :meth:`SparseTensor3.unfolding`.
    """
    mode = _check_mode(mode)
    mats = factors.matrices() if isinstance(factors, FactorSet) else tuple(factors)
    if len(mats) != 3:
        raise ValueError("three factor matrices required")
    for m, d in zip(mats, t.dims):
        if m.shape[0] != d:
            raise DimensionMismatchError("factor rows do not match tensor dims")
    if len({m.shape[1] for m in mats}) != 1:
        raise DimensionMismatchError("factor matrices must share a column count")
    o1, o2 = _other_modes(mode)
    m1, m2 = mats[o1 - 1], mats[o2 - 1]
    rank = m1.shape[1]
    if m1.shape[0] * m2.shape[0] * rank <= _KRP_CELL_LIMIT:
        return np.asarray(t.unfolding(mode) @ khatri_rao(m1, m2))
    # Large Khatri-Rao: accumulate per nonzero instead of materializing it.
    rows = t.subs[:, mode - 1]
    p = m1[t.subs[:, o1 - 1]] * m2[t.subs[:, o2 - 1]]
    out = np.empty((t.dims[mode - 1], rank))
    for f in range(rank):
        out[:, f] = np.bincount(rows, weights=t.vals * p[:, f], minlength=t.dims[mode - 1])
    return out


def model_values_at(t: SparseTensor3, fs: FactorSet) -> np.ndarray:
    """Reconstruction of the factor model at the tensor's stored coordinates."""
    _check_dims(t, fs)
    rows = fs.a[t.subs[:, 0]] * fs.b[t.subs[:, 1]] * fs.c[t.subs[:, 2]]
    return rows @ fs.weights


def reconstruct_residual_fro(t: SparseTensor3, fs: FactorSet) -> float:
    """Frobenius norm of (tensor - reconstruction), computed via inner
    products without densifying the tensor."""
    _check_dims(t, fs)
    norm_x2 = float(np.dot(t.vals, t.vals))
    inner = float(np.dot(t.vals, model_values_at(t, fs)))
    w = fs.weights
    gram = (fs.a.T @ fs.a) * (fs.b.T @ fs.b) * (fs.c.T @ fs.c)
    norm_m2 = float(w @ gram @ w)
    return float(np.sqrt(max(norm_x2 - 2.0 * inner + norm_m2, 0.0)))
