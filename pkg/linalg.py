"""
Dense linear algebra and structured random sampling shared by the lab.

Matrices and vectors are plain float64 numpy arrays. Every random draw takes
an explicit RngState so each Monte-Carlo trial owns its own stream.
"""

import numpy as np

from errors import DomainError, ShapeError

DenseMatrix = np.ndarray
DenseVector = np.ndarray
RngState = np.random.Generator

# Rank cut-off used by every pseudoinverse in the lab
DEFAULT_REL_TOL = 1e-12


def make_rng(seed, *stream):
    """
    Build an independent random stream.

    The bit generator is Philox (counter-based), keyed by
    SeedSequence(seed, spawn_key=stream). Equal (seed, stream) pairs give
    bit-identical draws on every platform numpy supports.

    Args:
        seed: Non-negative integer base seed
        *stream: Non-negative integers naming the sub-stream (e.g. a trial index)

    Returns:
        numpy.random.Generator
    """
    if seed < 0 or any(s < 0 for s in stream):
        raise DomainError(f"Seeds must be non-negative, got {seed} / {stream}")
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(sequence))


def as_matrix(a, name="matrix"):
    """Coerce to a finite 2-D float64 array with no empty dimension."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must have rows >= 1 and cols >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite entries")
    return arr


def as_vector(v, name="vector"):
    """Coerce to a finite 1-D float64 array with dim >= 1."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < 1:
        raise ShapeError(f"{name} must be 1-D with dim >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite entries")
    return arr


def matmul(a, b):
    """
    Standard matrix product with an explicit shape check.

    Raises:
        ShapeError: If a.cols != b.rows
    """
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"Cannot multiply {a.shape} by {b.shape}")
    return a @ b


def random_gaussian_matrix(rng, rows, cols, row_covariance):
    """
    Draw a rows x cols matrix whose rows are i.i.d. N(0, F Fᵀ).

    Args:
        rng: RngState owned by the caller
        rows: Number of rows (>= 1)
        cols: Row dimension d
        row_covariance: Square-root factor F of shape (d, m), e.g. Q·diag(√λ)

    Returns:
        DenseMatrix of shape (rows, cols)
    """
    if rows < 1 or cols < 1:
        raise ShapeError(f"Gaussian matrix needs rows >= 1 and cols >= 1, got ({rows}, {cols})")
    factor = np.asarray(row_covariance, dtype=np.float64)
    if factor.ndim != 2 or factor.shape[0] != cols:
        raise ShapeError(f"Covariance factor must have {cols} rows, got shape {factor.shape}")
    z = rng.standard_normal((rows, factor.shape[1]))
    return z @ factor.T


def random_orthonormal(rng, d):
    """
    Haar-distributed orthogonal matrix via QR of a Gaussian matrix.

    The signs of R's diagonal are folded into Q so the draw is uniform.
    """
    if d < 1:
        raise ShapeError(f"Orthonormal matrix needs d >= 1, got {d}")
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def diag_pseudoinverse(v, rel_tol=DEFAULT_REL_TOL):
    """
    Entrywise pseudoinverse of a non-negative diagonal.

    Entries above rel_tol·max(v) are inverted, the rest map to 0.

    Raises:
        DomainError: If any entry is negative
    """
    v = as_vector(v, "diagonal")
    if np.any(v < 0):
        raise DomainError(f"Pseudoinverse diagonal must be non-negative, got min {v.min()!r}")
    out = np.zeros_like(v)
    top = v.max()
    if top == 0:
        return out
    keep = v > rel_tol * top
    out[keep] = 1.0 / v[keep]
    return out


def bartlett_factor(rng, dof, d):
    """
    Lower-triangular L with L Lᵀ ~ Wishart(dof, I_d) (Bartlett decomposition).

    Diagonal entries are chi(dof - i) for i = 0..d-1, strictly-lower entries
    are standard normal.

    Raises:
        DomainError: If dof < d
    """
    if d < 1:
        raise ShapeError(f"Bartlett factor needs d >= 1, got {d}")
    if dof < d:
        raise DomainError(f"Bartlett decomposition needs dof >= d, got dof={dof}, d={d}")
    lower = np.tril(rng.standard_normal((d, d)), k=-1)
    chi_sq = rng.chisquare(dof - np.arange(d))
    lower[np.diag_indices(d)] = np.sqrt(chi_sq)
    return lower
