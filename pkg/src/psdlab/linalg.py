"""Dense matrix kernels: symmetric eigendecomposition, inverse square root,
power-iteration singular directions and PCA.

All functions are pure and take/return float64 numpy arrays.
"""

import logging
from typing import NamedTuple

import numpy as np

from psdlab.errors import DimensionError, InvalidInputError, ShapeError, SymmetryError

logger = logging.getLogger(__name__)

DEFAULT_FLOOR = 1e-6
SYMMETRY_TOLERANCE = 1e-9


class EigenDecomposition(NamedTuple):
    """Eigenvalues in descending order; eigenvectors as orthonormal columns."""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


class PcaResult(NamedTuple):
    projection: np.ndarray          # d x d'
    explained_ratio: np.ndarray     # variance fraction per kept axis
    degenerate: bool


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return m


def orient(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so that each one's first nonzero component is positive."""
    out = vectors.copy()
    for j in range(out.shape[1]):
        nonzero = np.flatnonzero(np.abs(out[:, j]) > 1e-12)
        if nonzero.size and out[nonzero[0], j] < 0:
            out[:, j] = -out[:, j]
    return out


def sym_eig(a) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending."""
    m = as_matrix(a)
    if m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ShapeError(f"expected a non-empty square matrix, got {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.T)) > SYMMETRY_TOLERANCE * scale:
        raise SymmetryError("matrix is not symmetric")
    values, vectors = np.linalg.eigh((m + m.T) / 2.0)
    order = np.argsort(values, kind="stable")[::-1]
    return EigenDecomposition(values[order], orient(vectors[:, order]))


def inv_sqrt(a, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """V diag(1/sqrt(max(lambda, floor))) V^T for a symmetric PSD matrix."""
    if floor <= 0:
        raise InvalidInputError(f"floor must be positive, got {floor}")
    values, vectors = sym_eig(a)
    scaled = vectors / np.sqrt(np.maximum(values, floor))
    b = scaled @ vectors.T
    return (b + b.T) / 2.0


def top_singular_directions(
    x,
    k: int,
    seed: int = 0,
    max_iter: int = 200,
    tol: float = 1e-10,
) -> np.ndarray:
    """Leading right singular vectors of a column-centered matrix.

    Power iteration on the Gram matrix with deflation against the directions
    already found. Returns a d x k matrix with orthonormal columns.
    """
    m = as_matrix(x, "X")
    n, d = m.shape
    if n < 1:
        raise ShapeError("X must have at least one row")
    if k < 1 or k > min(n, d):
        raise DimensionError(f"k={k} outside [1, min(n, d)={min(n, d)}]")

    gram = m.T @ m
    rng = np.random.default_rng(seed)
    found = np.zeros((d, 0))
    for _ in range(k):
        v = _deflate(rng.standard_normal(d), found)
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            w = _deflate(gram @ v, found)
            norm = np.linalg.norm(w)
            if norm < 1e-300:
                # Remaining spectrum is zero; any orthogonal unit vector will do
                break
            w /= norm
            change = np.linalg.norm(w - v)
            v = w
            if change < tol:
                break
        found = np.column_stack([found, v])
    return orient(found)


def _deflate(v: np.ndarray, basis: np.ndarray) -> np.ndarray:
    if basis.shape[1] == 0:
        return v
    return v - basis @ (basis.T @ v)


def covariance(x) -> np.ndarray:
    """Sample covariance (n - 1 denominator) of the rows of x, always 2-D."""
    m = as_matrix(x)
    return np.atleast_2d(np.cov(m, rowvar=False))


def pca_fit(x, variance_target: float = 0.95, max_dim: int = 64) -> PcaResult:
    """Leading principal axes reaching variance_target, clamped to max_dim."""
    m = as_matrix(x, "X")
    n, d = m.shape
    if n < 2:
        raise ShapeError(f"PCA needs at least 2 rows, got {n}")
    if not 0.0 < variance_target <= 1.0:
        raise InvalidInputError(f"variance_target must be in (0, 1], got {variance_target}")
    if max_dim < 1:
        raise InvalidInputError(f"max_dim must be >= 1, got {max_dim}")

    values, vectors = sym_eig(covariance(m))
    values = np.maximum(values, 0.0)
    total = float(values.sum())
    if total <= 1e-300:
        logger.warning("PCA on zero-variance data (%d x %d); using a fixed axis", n, d)
        axis = np.zeros((d, 1))
        axis[0, 0] = 1.0
        return PcaResult(axis, np.zeros(1), True)

    ratios = values / total
    cumulative = np.cumsum(ratios)
    dim = int(np.searchsorted(cumulative, variance_target - 1e-12) + 1)
    dim = max(1, min(dim, max_dim, d))
    return PcaResult(vectors[:, :dim], ratios[:dim], False)
