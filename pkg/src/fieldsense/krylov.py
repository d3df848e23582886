"""Lanczos propagation of exp(-i t H) v for sparse hermitian H.

A short-recurrence Krylov space is built with full reorthogonalization (cheap
at the subspace sizes used here and immune to ghost eigenvalues).  Convergence
is monitored by comparing the propagated coefficient vectors between
checkpoint subspace sizes; if the largest affordable subspace cannot deliver
the requested tolerance, the time interval is bisected recursively.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import ConvergenceError

_CHECK_EVERY = 6


def _expm_tridiag(alpha: np.ndarray, beta: np.ndarray, t: float) -> np.ndarray:
    """First column of exp(-i t T) for the Lanczos tridiagonal T."""
    if len(alpha) == 1:
        return np.array([np.exp(-1j * t * alpha[0])])
    w, u = eigh_tridiagonal(alpha, beta)
    return u @ (np.exp(-1j * t * w) * u[0, :].conj())


def _lanczos_step_result(h_mat, v: np.ndarray, t: float, tol: float, m_max: int):
    """One attempt at the full interval; returns None if not converged."""
    nrm = np.linalg.norm(v)
    if nrm == 0:
        return v.copy()
    basis = [v / nrm]
    alpha, beta = [], []
    y_prev = None
    w = h_mat @ basis[0]
    for j in range(m_max):
        a = np.real(np.vdot(basis[j], w))
        alpha.append(a)
        w = w - a * basis[j]
        if j > 0:
            w = w - beta[-1] * basis[j - 1]
        # Full reorthogonalization keeps the basis clean for large t*||H||.
        for q in basis:
            w = w - np.vdot(q, w) * q
        b = np.linalg.norm(w)
        m = j + 1
        happy = b < 1e-14 * max(1.0, abs(a))
        if happy or m == m_max or m % _CHECK_EVERY == 0:
            y = _expm_tridiag(np.array(alpha), np.array(beta), t)
            if happy:
                y_prev = y
                break
            if y_prev is not None:
                err = np.linalg.norm(y[: len(y_prev)] - y_prev) + np.linalg.norm(
                    y[len(y_prev):]
                )
                if err < tol:
                    y_prev = y
                    break
            y_prev = y
            if m == m_max:
                return None
        beta.append(b)
        basis.append(w / b)
        w = h_mat @ basis[-1]
    else:  # pragma: no cover - loop always exits via break/return
        return None
    out = np.zeros_like(v)
    for c, q in zip(y_prev, basis):
        out += c * q
    return nrm * out


def expm_multiply(
    h_mat,
    v: np.ndarray,
    t: float,
    tol: float = 1e-11,
    m_max: int = 60,
    max_splits: int = 4096,
) -> np.ndarray:
    """exp(-i t H) v with adaptive interval splitting.

    ``h_mat`` is anything supporting ``@`` on vectors (sparse matrix or
    LinearOperator); it must be hermitian.
    """
    if t == 0:
        return v.astype(complex, copy=True)
    v = v.astype(complex, copy=False)
    segments = [float(t)]
    result = v
    splits = 0
    while segments:
        seg = segments.pop()
        out = _lanczos_step_result(h_mat, result, seg, tol, m_max)
        if out is None:
            splits += 1
            if splits > max_splits:
                raise ConvergenceError(
                    f"Krylov propagation failed to converge after {splits} splits",
                    residual=None,
                )
            segments.extend([seg / 2.0, seg / 2.0])
            continue
        result = out
    return result
