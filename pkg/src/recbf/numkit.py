"""Small dense linear-algebra helpers and Gaussian sampling.

Matrices and vectors are plain ``numpy`` arrays. Every helper returns a fresh
array, never a view of its input.
"""

from __future__ import annotations

import numpy as np

PINV_RTOL = 1e-12


class ShapeError(ValueError):
    """Raised when array dimensions are inconsistent."""


class InvalidInputError(ValueError):
    """Raised for non-finite or otherwise malformed numerical input."""


def as_mat(m, name: str = "matrix") -> np.ndarray:
    """Copy ``m`` into a finite 2-D float array."""
    a = np.array(m, dtype=float, copy=True)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise InvalidInputError(f"{name} has non-finite entries")
    return a


def as_vec(v, name: str = "vector") -> np.ndarray:
    """Copy ``v`` into a finite 1-D float array."""
    a = np.array(v, dtype=float, copy=True)
    if a.ndim == 0:
        a = a.reshape(1)
    if a.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise InvalidInputError(f"{name} has non-finite entries")
    return a


def pseudo_inverse(m, tol: float = PINV_RTOL, atol: float = 0.0) -> np.ndarray:
    """Moore-Penrose inverse via SVD.

    Singular values below ``max(tol * s_max, atol)`` are treated as zero, so an
    all-zero matrix maps to the all-zero transpose. ``atol`` lets callers
    supply the scale of a matrix that is a difference of larger terms, where
    the relative cut alone would invert rounding residue.
    """
    if not tol > 0:
        raise InvalidInputError("tol must be positive")
    a = as_mat(m)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    out = np.zeros((a.shape[1], a.shape[0]))
    if s.size == 0 or s[0] == 0.0:
        return out
    # a singular value whose reciprocal overflows is treated as zero
    keep = s > max(tol * s[0], atol, 1.0 / np.finfo(float).max)
    return (vt[keep].T / s[keep]) @ u[:, keep].T


def symmetrize(m) -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"symmetrize needs a square matrix, got {a.shape}")
    # IEEE addition commutes, so the result is bitwise symmetric
    return 0.5 * (a + a.T)


def is_psd(m, tol: float = 1e-9) -> bool:
    """True when the smallest eigenvalue of the symmetric matrix ``m`` is >= -tol."""
    a = as_mat(m)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"is_psd needs a square matrix, got {a.shape}")
    if np.max(np.abs(a - a.T), initial=0.0) > tol:
        raise InvalidInputError("matrix is not symmetric within tolerance")
    if a.size == 0:
        return True
    return bool(np.linalg.eigvalsh(symmetrize(a))[0] >= -tol)


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; the only source of randomness in the package."""
    return np.random.Generator(np.random.PCG64(seed))


def sample_gaussian(mean, cov_sqrt, rng: np.random.Generator) -> np.ndarray:
    """Draw ``mean + cov_sqrt @ z`` with ``z ~ N(0, I)``.

    Advances ``rng`` by exactly ``len(mean)`` standard normals.
    """
    mu = as_vec(mean, "mean")
    s = as_mat(cov_sqrt, "cov_sqrt")
    if s.shape != (mu.size, mu.size):
        raise ShapeError(f"cov_sqrt shape {s.shape} does not match mean of length {mu.size}")
    z = rng.standard_normal(mu.size)
    return mu + s @ z
