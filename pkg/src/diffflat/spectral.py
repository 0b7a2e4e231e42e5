"""Diffusion operator built from a symmetric affinity, and its top eigenpairs.

With row sums ``q`` of the affinity ``K``, the Markov matrix is
``P = Q^{-1} K`` and its symmetric conjugate is ``A = Q^{-1/2} K Q^{-1/2}``.
Eigenvectors ``phi`` of ``A`` map to eigenvectors ``psi = Q^{-1/2} phi`` of
``P`` with the same eigenvalues.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .volume import gaussian_noise

DEFAULT_TOL = 1e-8
DEFAULT_MAXITER = 20_000
CHEB_DEGREE = 8


class StructuralError(ValueError):
    """The affinity has a row with no positive entry."""


class ConvergenceError(RuntimeError):
    def __init__(self, message, worst_residual):
        super().__init__(message)
        self.worst_residual = worst_residual


@dataclass(frozen=True, eq=False)
class DiffusionOperator:
    K: sp.csr_matrix
    q: np.ndarray

    @property
    def n(self):
        return self.K.shape[0]

    def _rows(self):
        return np.repeat(np.arange(self.n), np.diff(self.K.indptr))

    def markov(self):
        """Row-stochastic ``P(i, j) = K(i, j) / q(i)`` as CSR."""
        P = self.K.copy()
        P.data = P.data / self.q[self._rows()]
        return P

    def symmetric(self):
        return conjugate_symmetric(self)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Leading eigenpairs, eigenvalues descending."""

    eigenvalues: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    residuals: np.ndarray
    matvecs: int = 0


def row_normalize(K):
    """Wrap ``K`` with its row sums ``q``, accumulated in column-index order."""
    K = sp.csr_matrix(K, dtype=np.float64)
    K.sort_indices()
    n = K.shape[0]
    rows = np.repeat(np.arange(n), np.diff(K.indptr))
    q = np.bincount(rows, weights=K.data, minlength=n)
    bad = np.flatnonzero(~(q > 0))
    if bad.size:
        raise StructuralError(f"affinity row {bad[0]} has no positive entry (pixel {bad[0]})")
    return DiffusionOperator(K, q)


def conjugate_symmetric(op):
    """``A(i, j) = K(i, j) / sqrt(q(i) q(j))``; symmetric whenever ``K`` is."""
    A = op.K.copy()
    rows = op._rows()
    A.data = A.data / np.sqrt(op.q[rows] * op.q[A.indices])
    return A


def _fix_signs(V):
    scale = np.abs(V).max(axis=0)
    for j in range(V.shape[1]):
        if scale[j] == 0:
            continue
        first = np.flatnonzero(np.abs(V[:, j]) > 1e-8 * scale[j])[0]
        if V[first, j] < 0:
            V[:, j] = -V[:, j]
    return V


def _rayleigh_ritz(A, X):
    AX = A @ X
    H = X.T @ AX
    theta, S = np.linalg.eigh(0.5 * (H + H.T))
    order = np.argsort(-theta, kind="stable")
    theta, S = theta[order], S[:, order]
    return theta, X @ S, AX @ S


def _chebyshev_filter(A, X, degree, cut, lower):
    """Apply ``T_degree`` of ``A`` mapped so ``[lower, cut]`` lands on ``[-1, 1]``.

    Columns are rescaled every step (the recurrence is column-wise linear),
    which keeps large amplifications finite.
    """
    e = 0.5 * (cut - lower)
    c = 0.5 * (cut + lower)
    prev = X
    cur = (A @ X - c * X) / e
    for _ in range(1, degree):
        nxt = 2.0 * (A @ cur - c * cur) / e - prev
        s = np.linalg.norm(nxt, axis=0)
        s[s == 0] = 1.0
        prev, cur = cur / s, nxt / s
    return cur


def gershgorin_lower(A):
    """Lower bound on the spectrum of symmetric ``A``, never below -1."""
    A = sp.csr_matrix(A)
    diag = A.diagonal()
    off = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(diag)
    return max(-1.0, float(np.min(diag - off)))


def eigensolve_topk(A, k, tol=DEFAULT_TOL, seed=0, block=None, maxiter=DEFAULT_MAXITER,
                    degree=CHEB_DEGREE, lower=None, locked=None):
    """The ``k + 1`` algebraically largest eigenpairs of symmetric ``A`` with ``||A|| <= 1``.

    Block subspace iteration with a Chebyshev filter that damps the part of
    the spectrum below the smallest current Ritz value, followed by QR and
    Rayleigh-Ritz each sweep.  Stops when every wanted pair has residual
    ``||A phi - lambda phi||_2 <= tol``.

    Parameters
    ----------
    A : sparse or dense (n, n) symmetric matrix
    k : int
        Number of nontrivial pairs; ``k + 1`` pairs are returned.
    tol : float
        Residual tolerance.
    seed : int
        Seed of the starting block.
    block : int, optional
        Subspace size, default ``k + 3``.
    maxiter : int
        Cap on block matrix products.
    lower : float, optional
        Known lower bound on the spectrum; the filter damps ``[lower, cut]``.
        Defaults to a Gershgorin bound.
    locked : (n, p) array, optional
        Orthonormal eigenvectors known in advance.  They are returned as
        pairs and the iteration runs on their orthogonal complement.

    Returns
    -------
    eigenvalues : (k+1,) array, descending
    phi : (n, k+1) array, orthonormal columns, first non-negligible entry positive
    residuals : (k+1,) array
    matvecs : int
    """
    n = A.shape[0]
    nev = k + 1
    if not 1 <= nev <= n:
        raise ValueError(f"need 1 <= k + 1 <= {n}, got k = {k}")
    b = min(n, block if block is not None else k + 3)
    if b < nev:
        raise ValueError("block size must be at least k + 1")
    if locked is None:
        locked = np.zeros((n, 0))
    locked = np.asarray(locked, dtype=np.float64).reshape(n, -1)
    nlock = locked.shape[1]
    if nlock > nev:
        raise ValueError("more locked vectors than requested pairs")

    def deflate(Y):
        return Y - locked @ (locked.T @ Y)

    AL = A @ locked
    lock_theta = np.einsum("ij,ij->j", locked, AL)
    lock_res = np.linalg.norm(AL - locked * lock_theta, axis=0)

    nfree, bfree = nev - nlock, min(b, n) - nlock
    matvecs = 1
    if nfree == 0:
        theta, X, res = np.zeros(0), np.zeros((n, 0)), np.zeros(0)
    else:
        if lower is None:
            lower = gershgorin_lower(A)
        X = deflate(gaussian_noise(seed, n * bfree).reshape(n, bfree))
        X, _ = np.linalg.qr(X)
        theta, X, AX = _rayleigh_ritz(A, X)
        while True:
            R = AX[:, :nfree] - X[:, :nfree] * theta[:nfree]
            res = np.linalg.norm(R, axis=0)
            if res.max() <= tol:
                break
            if matvecs >= maxiter:
                raise ConvergenceError(
                    f"subspace iteration did not converge in {matvecs} block products; "
                    f"worst residual {res.max():.3e}", float(res.max())
                )
            cut = min(theta[-1], 1.0 - 1e-12)
            lo = lower if cut > lower else cut - 1.0
            X = deflate(_chebyshev_filter(A, X, degree, cut, lo))
            X, _ = np.linalg.qr(X)
            theta, X, AX = _rayleigh_ritz(A, X)
            matvecs += degree + 1
        theta, X = theta[:nfree], X[:, :nfree]

    lam = np.concatenate([lock_theta, theta])
    phi = np.hstack([locked, X])
    res = np.concatenate([lock_res, res])
    order = np.argsort(-lam, kind="stable")
    phi = _fix_signs(phi[:, order].copy())
    return lam[order], phi, res[order], matvecs


def recover_diffusion_eigenvectors(op, phi):
    """``psi_j = Q^{-1/2} phi_j``."""
    return np.asarray(phi) / np.sqrt(op.q)[:, None]


def diffusion_spectrum(K, k, tol=DEFAULT_TOL, seed=0, block=None, maxiter=DEFAULT_MAXITER):
    """Top ``k + 1`` eigenpairs of the diffusion operator of affinity ``K``."""
    op = row_normalize(K)
    A = conjugate_symmetric(op)
    # P shares A's spectrum and has unit row sums, so 2 P(i, i) - 1 bounds it from below
    lower = max(gershgorin_lower(A), float(np.min(2.0 * op.K.diagonal() / op.q - 1.0)))
    # sqrt(q) is an exact eigenvector of A with eigenvalue 1
    root = np.sqrt(op.q)
    lam, phi, res, matvecs = eigensolve_topk(A, k, tol=tol, seed=seed, block=block,
                                             maxiter=maxiter, lower=lower,
                                             locked=(root / np.linalg.norm(root))[:, None])
    return op, Spectrum(lam, phi, recover_diffusion_eigenvectors(op, phi), res, matvecs)


def write_eigen_csv(psi, shape, path):
    """``row,col,psi1,...,psim`` for every pixel (``psi0`` is omitted)."""
    H, W = shape
    rows, cols = np.divmod(np.arange(H * W), W)
    m = psi.shape[1] - 1
    header = ",".join(["row", "col"] + [f"psi{j}" for j in range(1, m + 1)])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for i in range(H * W):
            vals = ",".join(f"{v:.9g}" for v in psi[i, 1:])
            fh.write(f"{rows[i]},{cols[i]},{vals}\n")
