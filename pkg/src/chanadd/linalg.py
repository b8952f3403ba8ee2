"""Small dense complex-matrix kernel.

Everything downstream works on 2x2 density matrices and 4x4 process, transfer
and Choi matrices, so the routines here are written for those sizes.  All of
them accept a single matrix of shape ``(n, n)`` and most also accept a stack of
shape ``(..., n, n)``.  Batching matters: replica statistics evaluate tens of
thousands of 4x4 Choi spectra at a time.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class Tolerances:
    """Fixed numerical constants used by the kernel."""

    jacobi_max_sweeps: int = 100
    jacobi_offdiag_tol: float = 1e-12
    hermiticity_tol: float = 1e-10
    singular_pivot_ratio: float = 1e-14
    psd_clip: float = 1e-10


TOL = Tolerances()


class LinalgError(ValueError):
    """Base class for kernel failures."""


class NonHermitianError(LinalgError):
    pass


class NoConvergenceError(LinalgError):
    pass


class SingularMatrixError(LinalgError):
    pass


class NotPSDError(LinalgError):
    pass


class EigDecomposition(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _as_square(M) -> np.ndarray:
    M = np.asarray(M, dtype=complex)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2] or M.shape[-1] not in (2, 4):
        raise ValueError(f"expected (..., n, n) with n in (2, 4), got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return M


def dagger(M: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(M, -1, -2))


def max_abs(M: np.ndarray) -> np.ndarray:
    return np.max(np.abs(M), axis=(-2, -1))


def herm_eig(H, hermiticity_tol: float = TOL.hermiticity_tol) -> EigDecomposition:
    """Eigendecomposition of a Hermitian matrix (or stack) by cyclic Jacobi.

    The Hermitian part ``(H + H^dagger)/2`` is diagonalised.  Eigenvalues are
    returned ascending along the last axis; eigenvector ``k`` is column ``k``.

    Raises
    ------
    NonHermitianError
        If ``max|H - H^dagger|`` exceeds ``hermiticity_tol`` for any matrix.
    NoConvergenceError
        If the sweep budget runs out.
    """
    H = _as_square(H)
    asym = max_abs(H - dagger(H))
    if np.any(asym > hermiticity_tol):
        raise NonHermitianError(f"max |H - H^dagger| = {np.max(asym):.3e} > {hermiticity_tol:.1e}")

    single = H.ndim == 2
    A = 0.5 * (H + dagger(H))
    A = A.reshape((-1,) + A.shape[-2:]).copy()
    n = A.shape[-1]
    V = np.broadcast_to(np.eye(n, dtype=complex), A.shape).copy()
    scale = np.maximum(max_abs(A), 1.0)
    pairs = [(p, q) for p in range(n - 1) for q in range(p + 1, n)]
    iu = np.triu_indices(n, 1)

    for _ in range(TOL.jacobi_max_sweeps):
        off = np.max(np.abs(A[:, iu[0], iu[1]]), axis=-1)
        if np.all(off <= TOL.jacobi_offdiag_tol * scale):
            break
        for p, q in pairs:
            apq = A[:, p, q]
            mag = np.abs(apq)
            active = mag > 0.0
            if not np.any(active):
                continue
            safe = np.where(active, mag, 1.0)
            phase = np.where(active, apq / safe, 1.0)
            app = A[:, p, p].real
            aqq = A[:, q, q].real
            tau = (aqq - app) / (2.0 * safe)
            t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.hypot(1.0, t)
            s = t * c
            # U = diag(1, conj(phase)) @ [[c, s], [-s, c]] on the (p, q) plane
            u_pp = c
            u_pq = s
            u_qp = -s * np.conj(phase)
            u_qq = c * np.conj(phase)

            col_p = A[:, :, p] * u_pp[:, None] + A[:, :, q] * u_qp[:, None]
            col_q = A[:, :, p] * u_pq[:, None] + A[:, :, q] * u_qq[:, None]
            A[:, :, p] = col_p
            A[:, :, q] = col_q
            row_p = np.conj(u_pp)[:, None] * A[:, p, :] + np.conj(u_qp)[:, None] * A[:, q, :]
            row_q = np.conj(u_pq)[:, None] * A[:, p, :] + np.conj(u_qq)[:, None] * A[:, q, :]
            A[:, p, :] = row_p
            A[:, q, :] = row_q
            A[:, p, q] = 0.0
            A[:, q, p] = 0.0
            A[:, p, p] = A[:, p, p].real
            A[:, q, q] = A[:, q, q].real

            vp = V[:, :, p] * u_pp[:, None] + V[:, :, q] * u_qp[:, None]
            vq = V[:, :, p] * u_pq[:, None] + V[:, :, q] * u_qq[:, None]
            V[:, :, p] = vp
            V[:, :, q] = vq
    else:
        off = np.max(np.abs(A[:, iu[0], iu[1]]), axis=-1)
        if np.any(off > TOL.jacobi_offdiag_tol * scale):
            raise NoConvergenceError(f"Jacobi did not converge in {TOL.jacobi_max_sweeps} sweeps")

    w = np.real(np.diagonal(A, axis1=-2, axis2=-1))
    order = np.argsort(w, axis=-1)
    w = np.take_along_axis(w, order, axis=-1)
    V = np.take_along_axis(V, order[:, None, :], axis=-1)
    if single:
        return EigDecomposition(w[0], V[0])
    shape = H.shape[:-2]
    return EigDecomposition(w.reshape(shape + (n,)), V.reshape(shape + (n, n)))


def eigvalsh(H, hermiticity_tol: float = TOL.hermiticity_tol) -> np.ndarray:
    return herm_eig(H, hermiticity_tol).eigenvalues


def inverse(M) -> tuple[np.ndarray, float]:
    """Gauss-Jordan inverse with partial pivoting.

    Returns ``(M^-1, cond)`` where ``cond = ||M||_1 ||M^-1||_1`` in the
    max-column-sum norm.  A pivot smaller than ``1e-14 * max|M|`` raises
    :class:`SingularMatrixError`.
    """
    M = _as_square(M)
    if M.ndim != 2:
        raise ValueError("inverse takes a single matrix")
    n = M.shape[0]
    scale = max_abs(M)
    if scale == 0.0:
        raise SingularMatrixError("zero matrix")
    aug = np.hstack([M.copy(), np.eye(n, dtype=complex)])
    for col in range(n):
        piv = col + int(np.argmax(np.abs(aug[col:, col])))
        if abs(aug[piv, col]) < TOL.singular_pivot_ratio * scale:
            raise SingularMatrixError(
                f"pivot {abs(aug[piv, col]):.3e} in column {col} below {TOL.singular_pivot_ratio:.0e} * max|M|"
            )
        if piv != col:
            aug[[col, piv]] = aug[[piv, col]]
        aug[col] /= aug[col, col]
        for row in range(n):
            if row != col and aug[row, col] != 0:
                aug[row] -= aug[row, col] * aug[col]
    inv = aug[:, n:]
    cond = _norm1(M) * _norm1(inv)
    return inv, float(cond)


def _norm1(M: np.ndarray) -> float:
    return float(np.max(np.sum(np.abs(M), axis=0)))


def trace_norm(M, hermiticity_tol: float = TOL.hermiticity_tol) -> np.ndarray:
    """Sum of singular values, ``Tr sqrt(M^dagger M)``.

    Hermitian input takes the direct route ``sum |lambda_k|``; anything else
    goes through the eigenvalues of ``M^dagger M``.
    """
    M = _as_square(M)
    herm = max_abs(M - dagger(M)) <= hermiticity_tol
    if np.all(herm):
        return np.sum(np.abs(eigvalsh(M, hermiticity_tol)), axis=-1)
    gram = dagger(M) @ M
    w = eigvalsh(gram, hermiticity_tol=np.inf)
    out = np.sum(np.sqrt(np.clip(w, 0.0, None)), axis=-1)
    if np.any(herm):
        out[herm] = np.sum(np.abs(eigvalsh(M[herm], hermiticity_tol)), axis=-1)
    return out


def psd_sqrt(H, hermiticity_tol: float = TOL.hermiticity_tol) -> np.ndarray:
    """Principal square root of a positive semidefinite matrix.

    Eigenvalues in ``[-1e-10, 0)`` are treated as zero; anything more negative
    raises :class:`NotPSDError`.
    """
    w, V = herm_eig(H, hermiticity_tol)
    if np.any(w < -TOL.psd_clip):
        raise NotPSDError(f"eigenvalue {np.min(w):.3e} < -{TOL.psd_clip:.0e}")
    root = np.sqrt(np.clip(w, 0.0, None))
    return (V * root[..., None, :]) @ dagger(V)


def project_psd_trace(H, trace: float = 1.0) -> np.ndarray:
    """Clip negative eigenvalues to zero and rescale to the requested trace."""
    w, V = herm_eig(H, hermiticity_tol=np.inf)
    w = np.clip(w, 0.0, None)
    total = np.sum(w, axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise NotPSDError("no positive eigenvalue left after clipping")
    w = w * (trace / total)
    return (V * w[..., None, :]) @ dagger(V)
