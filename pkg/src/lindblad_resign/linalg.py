"""Dense complex matrix primitives.

All tolerances in the package are expressed in the entrywise max-norm
(:func:`max_norm`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, NonHermitianInput, NotHermitian, NotPSD, TraceNotOne

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
# Basis ordering (excited, ground): sigma_minus lowers |e> = e_1 to |g> = e_2.
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.T.copy()


def as_matrix(M) -> np.ndarray:
    """Return ``M`` as a square complex ndarray, raising DimMismatch otherwise."""
    A = np.asarray(M, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimMismatch(f"expected a square matrix, got shape {A.shape}")
    return A


def max_norm(M) -> float:
    M = np.asarray(M)
    return float(np.max(np.abs(M))) if M.size else 0.0


def dagger(M) -> np.ndarray:
    return np.conj(np.swapaxes(M, -1, -2))


def hermiticity_error(M) -> float:
    return max_norm(M - dagger(M))


def hermitian_eig(M, tol: float | None = None):
    """Eigendecomposition of a Hermitian matrix.

    Parameters
    ----------
    M : (d, d) array_like
        Hermitian matrix.
    tol : float, optional
        Allowed ``max|M - M^dagger|``. Defaults to ``1e-10 * max(1, max|M|)``.

    Returns
    -------
    eigenvalues : (d,) ndarray
        Real, ascending.
    eigenvectors : (d, d) ndarray
        Unitary matrix whose k-th column belongs to ``eigenvalues[k]``.
    """
    A = as_matrix(M)
    if tol is None:
        tol = 1e-10 * max(1.0, max_norm(A))
    err = hermiticity_error(A)
    if err > tol:
        raise NonHermitianInput(f"matrix is not Hermitian: max|M - M^dagger| = {err:.3e}")
    # LAPACK zheevd returns ascending eigenvalues.
    return np.linalg.eigh(0.5 * (A + dagger(A)))


def commutator(A, B) -> np.ndarray:
    A = as_matrix(A)
    B = as_matrix(B)
    if A.shape != B.shape:
        raise DimMismatch(f"commutator of {A.shape} and {B.shape}")
    return A @ B - B @ A


def anticommutator(A, B) -> np.ndarray:
    A = as_matrix(A)
    B = as_matrix(B)
    if A.shape != B.shape:
        raise DimMismatch(f"anticommutator of {A.shape} and {B.shape}")
    return A @ B + B @ A


@dataclass(frozen=True)
class DensityState:
    """A validated density matrix. Construct through :func:`validate_density`."""

    matrix: np.ndarray
    tol: float = 1e-8

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def validate_density(M, tol: float = 1e-8) -> DensityState:
    """Check hermiticity, unit trace and positivity of ``M``.

    Raises
    ------
    NotHermitian, TraceNotOne, NotPSD
        Each carries the magnitude of the violation.
    """
    if isinstance(M, DensityState):
        M = M.matrix
    A = as_matrix(M)
    herr = hermiticity_error(A)
    if herr > tol:
        raise NotHermitian(herr, tol)
    terr = abs(np.trace(A) - 1.0)
    if terr > tol:
        raise TraceNotOne(terr, tol)
    lmin = float(np.linalg.eigvalsh(0.5 * (A + dagger(A)))[0])
    if lmin < -tol:
        raise NotPSD(-lmin, tol)
    A = A.copy()
    A.setflags(write=False)
    return DensityState(A, float(tol))
