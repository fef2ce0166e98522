"""Smallest eigenpairs of the generalized symmetric problem ``K u = lam B u``."""

from __future__ import annotations

import glob
import logging
import os
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DENSE_LIMIT = 3000
SHIFT_EPS = 1e-6
NEGATIVE_RTOL = 1e-10
# above this size the factorization goes to MKL PARDISO when it is available
LARGE_SYSTEM = 20_000


class EigenSolverError(RuntimeError):
    def __init__(self, message: str, residuals: Optional[np.ndarray] = None):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Ascending eigenvalues with optional eigenvectors and per-pair residuals.

    ``residuals[i]`` is the normwise backward error
    ``|K u - lam B u| / ((|K| + |lam| |B|) |u|)`` with 1-norm estimates of the
    matrix norms. ``n_clamped`` counts round-off negatives set to zero.
    """

    eigenvalues: np.ndarray
    eigenvectors: Optional[np.ndarray]
    residuals: np.ndarray
    n_clamped: int = 0

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    @property
    def N(self) -> Optional[int]:
        return None if self.eigenvectors is None else self.eigenvectors.shape[0]

    def __len__(self):
        return self.k

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.eigenvalues, dtype=dtype)


def _norm1(A) -> float:
    if sp.issparse(A):
        return float(abs(A).sum(axis=0).max())
    return float(np.abs(A).sum(axis=0).max())


def residuals(K, B, vals: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    R = K @ vecs - (B @ vecs) * vals
    nk, nb = _norm1(K), _norm1(B)
    denom = (nk + np.abs(vals) * nb) * np.linalg.norm(vecs, axis=0)
    return np.linalg.norm(R, axis=0) / np.where(denom > 0, denom, 1.0)


def _finish(K, B, vals, vecs, tol, want_vectors) -> Spectrum:
    order = np.argsort(vals)
    vals, vecs = np.array(vals[order], dtype=float), vecs[:, order]
    res = residuals(K, B, vals, vecs)
    # round-off scale: the larger of the computed values and |K| / |B|
    nb = _norm1(B)
    top = max(float(np.abs(vals).max()) if len(vals) else 0.0, _norm1(K) / nb if nb > 0 else 0.0)
    neg = vals < 0
    if np.any(vals < -NEGATIVE_RTOL * max(top, 1e-300)):
        raise EigenSolverError(
            f"matrix K is not positive semidefinite (eigenvalue {vals.min():.3e})", res
        )
    n_clamped = int(neg.sum())
    if n_clamped:
        log.debug("clamping %d round-off negative eigenvalue(s) to zero", n_clamped)
        vals[neg] = 0.0
    if np.any(res > tol):
        raise EigenSolverError(
            f"residuals exceed tolerance {tol:g}: max {res.max():.3e}", res
        )
    return Spectrum(vals, vecs if want_vectors else None, res, n_clamped)


def default_shift(K, B) -> float:
    """Small negative shift making ``K - sigma B`` definite when ``K`` is singular."""
    tk, tb = float(K.diagonal().sum()), float(B.diagonal().sum())
    if tk <= 0 or tb <= 0:
        return -SHIFT_EPS
    return -SHIFT_EPS * tk / tb


def _pardiso_class():
    """``pypardiso.PyPardisoSolver`` or ``None`` when MKL cannot be loaded."""
    if "PYPARDISO_MKL_RT" not in os.environ:
        for d in (os.path.join(sys.prefix, "lib"), "/usr/local/lib", "/usr/lib"):
            hits = sorted(glob.glob(os.path.join(d, "libmkl_rt.so*")), key=len)
            if hits:
                os.environ["PYPARDISO_MKL_RT"] = hits[0]
                break
    try:
        from pypardiso import PyPardisoSolver
    except (ImportError, OSError):
        return None
    return PyPardisoSolver


class _ShiftedInverse:
    """Solves with ``K - sigma B``; a context manager so large factors are freed."""

    def __init__(self, A, use_pardiso: bool):
        self._ps = None
        solver = _pardiso_class() if use_pardiso else None
        if solver is not None:
            # real symmetric positive definite; PARDISO reads the upper triangle
            self._A = sp.triu(A, format="csr")
            self._A.sort_indices()
            self._ps = solver(mtype=2)
            self._ps.factorize(self._A)
            self.solve = lambda b: self._ps.solve(self._A, b)
        else:
            lu = spla.splu(
                A.tocsc(), permc_spec="MMD_AT_PLUS_A", options=dict(SymmetricMode=True)
            )
            self.solve = lu.solve

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if self._ps is not None:
            self._ps.free_memory(everything=True)
        self.solve = None


def smallest_eigenpairs(
    K,
    B,
    k: int,
    tol: float = DEFAULT_TOL,
    *,
    sigma: Optional[float] = None,
    seed: int = 0,
    return_vectors: bool = True,
) -> Spectrum:
    """The ``k`` smallest eigenpairs by shift-invert Lanczos (ARPACK).

    Parameters
    ----------
    K, B : sparse symmetric matrices
        Positive semidefinite stiffness and positive definite mass.
    k : int
        Number of eigenpairs, ``1 <= k < N``.
    tol : float
        Bound on the reported backward-error residuals.
    sigma : float, optional
        Shift. ``0`` suits a definite ``K``; by default a small negative
        shift is used, which also handles a singular ``K``.
    seed : int
        Seed of the starting vector; fixes the result bit-for-bit.

    Notes
    -----
    Systems with more than ``LARGE_SYSTEM`` unknowns are factorized with MKL
    PARDISO when ``pypardiso`` can load MKL; its nested-dissection ordering
    keeps fill far lower than SuperLU on volumetric meshes. Otherwise SuperLU
    is used.
    """
    K = sp.csc_matrix(K)
    B = sp.csc_matrix(B)
    N = K.shape[0]
    if not 1 <= k < N:
        raise ValueError(f"need 1 <= k < N, got k={k}, N={N}")
    if sigma is None:
        sigma = default_shift(K, B)
    v0 = np.random.default_rng(seed).standard_normal(N)
    ncv = min(N, max(2 * k + 1, 20))
    try:
        inv = _ShiftedInverse((K - sigma * B).tocsr(), N > LARGE_SYSTEM)
    except Exception as exc:
        raise EigenSolverError(f"factorization of K - sigma*B failed: {exc}") from None
    with inv:
        opinv = spla.LinearOperator((N, N), matvec=inv.solve, dtype=float)
        try:
            vals, vecs = spla.eigsh(
                K, k=k, M=B, sigma=sigma, which="LM", OPinv=opinv, v0=v0,
                ncv=ncv, tol=0, maxiter=max(50 * k, 300),
            )
        except spla.ArpackNoConvergence as exc:
            res = residuals(K, B, exc.eigenvalues, exc.eigenvectors) if len(exc.eigenvalues) else None
            raise EigenSolverError(
                f"eigensolver did not converge ({len(exc.eigenvalues)}/{k} pairs)", res
            ) from None
    return _finish(K, B, vals, vecs, tol, return_vectors)


def dense_generalized_eig(K, B, return_vectors: bool = False):
    """Full ascending spectrum through ``B = L L^T`` and ``eigh(L^-1 K L^-T)``.

    Returns the eigenvalues, or ``(values, vectors)`` when ``return_vectors``.
    """
    K = K.toarray() if sp.issparse(K) else np.asarray(K, dtype=float)
    B = B.toarray() if sp.issparse(B) else np.asarray(B, dtype=float)
    N = K.shape[0]
    if N > DENSE_LIMIT:
        raise ValueError(f"dense oracle limited to N <= {DENSE_LIMIT}, got {N}")
    try:
        L = la.cholesky(B, lower=True)
    except la.LinAlgError:
        raise EigenSolverError("B is not positive definite") from None
    X = la.solve_triangular(L, K, lower=True)
    C = la.solve_triangular(L, X.T, lower=True)
    C = 0.5 * (C + C.T)
    if not return_vectors:
        return la.eigh(C, eigvals_only=True)
    vals, Y = la.eigh(C)
    return vals, la.solve_triangular(L.T, Y, lower=False)


def dense_smallest(K, B, k: int, tol: float = DEFAULT_TOL) -> Spectrum:
    """Dense route for tiny systems where Lanczos needs ``k < N``."""
    vals, vecs = dense_generalized_eig(K, B, return_vectors=True)
    return _finish(K, B, vals[:k], vecs[:, :k], tol, True)
