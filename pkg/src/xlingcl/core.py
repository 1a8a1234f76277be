"""Dense vector primitives: cosine similarity, its analytic gradient, and
numerically stable reductions.

Everything here is pure, operates on float64 numpy arrays, and rejects
degenerate inputs (zero norms, NaN/Inf) instead of silently clamping.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DegenerateInputError
from .kernels import cosine_backward

ROLES = ("query", "passage", "sentence")


def as_vector(values) -> np.ndarray:
    """Validate and return a finite 1-D float64 vector of dimension >= 1."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] < 1:
        raise DegenerateInputError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DegenerateInputError("vector contains NaN/Inf")
    return v


def _checked_norm(v: np.ndarray, name: str) -> float:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise DegenerateInputError(f"{name} has zero norm")
    return n


def cosine_sim(u, v) -> float:
    """Cosine similarity u.v / (|u||v|).  Symmetric and scale-invariant."""
    u = as_vector(u)
    v = as_vector(v)
    if u.shape != v.shape:
        raise DegenerateInputError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = _checked_norm(u, "u")
    nv = _checked_norm(v, "v")
    return float(np.dot(u, v) / (nu * nv))


def cosine_sim_grad(u, v):
    """Analytic gradient of cosine_sim with respect to both arguments.

    d sim / du = v / (|u||v|) - sim * u / |u|^2, symmetrically for v.
    """
    u = as_vector(u)
    v = as_vector(v)
    if u.shape != v.shape:
        raise DegenerateInputError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = _checked_norm(u, "u")
    nv = _checked_norm(v, "v")
    sim = float(np.dot(u, v) / (nu * nv))
    du = v / (nu * nv) - sim * u / (nu * nu)
    dv = u / (nu * nv) - sim * v / (nv * nv)
    return du, dv


def log_sum_exp(xs) -> float:
    """log(sum(exp(xs))) via max-shift.  Exact for a single element."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        raise DataError("log_sum_exp of empty input")
    if not np.all(np.isfinite(xs)):
        raise DegenerateInputError("log_sum_exp input contains NaN/Inf")
    m = float(np.max(xs))
    return m + float(np.log(np.sum(np.exp(xs - m))))


@dataclass
class EmbeddingBatch:
    """M x D matrix of sentence embeddings with language and role tags."""

    rows: np.ndarray
    langs: list = field(default_factory=list)
    roles: list = field(default_factory=list)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2 or self.rows.shape[0] < 1:
            raise DegenerateInputError(
                f"embedding batch must be a non-empty 2-D matrix, got {self.rows.shape}"
            )
        if not np.all(np.isfinite(self.rows)):
            raise DegenerateInputError("embedding batch contains NaN/Inf")
        m = self.rows.shape[0]
        if not self.langs:
            self.langs = [""] * m
        if not self.roles:
            self.roles = ["sentence"] * m
        if len(self.langs) != m or len(self.roles) != m:
            raise DataError("langs/roles length must match the number of rows")

    @property
    def size(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def _normalize_rows(X: np.ndarray):
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise DegenerateInputError(f"row {bad} has zero norm")
    return X / norms[:, None], norms


def sim_matrix(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities between the rows of X and the rows of Y."""
    Xn, _ = _normalize_rows(np.asarray(X, dtype=np.float64))
    Yn, _ = _normalize_rows(np.asarray(Y, dtype=np.float64))
    return Xn @ Yn.T


def sim_matrix_with_backward(X: np.ndarray, Y: np.ndarray):
    """Similarity matrix plus a closure mapping dL/dS to (dL/dX, dL/dY)."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    Xn, nx = _normalize_rows(X)
    Yn, ny = _normalize_rows(Y)
    S = Xn @ Yn.T
    inv_nx = 1.0 / nx
    inv_ny = 1.0 / ny

    def backward(dS: np.ndarray):
        return cosine_backward(dS, S, Xn, Yn, inv_nx, inv_ny)

    return S, backward
