"""Levinson-Durbin solver for symmetric positive definite Toeplitz systems."""

from __future__ import annotations

import numpy as np

from .errors import FullRankError


class ToeplitzSolver:
    """Solve ``T_n x = b`` for every leading size ``n <= len(first_col)``.

    ``T`` is the symmetric Toeplitz matrix with first column ``first_col``.
    The backward vectors of the Durbin recursion are computed once in
    O(n^2) and shared by all leading sizes, so a solve of size ``n`` costs
    O(n^2) per right-hand side.
    """

    def __init__(self, first_col, pd_tol: float = 1e-13):
        r = np.asarray(first_col, dtype=float)
        if r.ndim != 1 or r.size == 0:
            raise ValueError("first_col must be a non-empty vector")
        if not r[0] > 0:
            raise FullRankError("Toeplitz matrix has a non-positive diagonal")
        self.r = r
        n = r.size
        self._backward = [np.array([1.0 / r[0]])]
        f = self._backward[0].copy()
        b = f.copy()
        for k in range(1, n):
            eps = float(np.dot(r[k:0:-1], f))
            denom = 1.0 - eps * eps
            if denom <= pd_tol:
                # leading block of size k + 1 is singular or indefinite
                self.size = k
                break
            f_ext = np.append(f, 0.0)
            b_ext = np.insert(b, 0, 0.0)
            f = (f_ext - eps * b_ext) / denom
            b = (b_ext - eps * f_ext) / denom
            self._backward.append(b)
        else:
            self.size = n

    def solve(self, rhs) -> np.ndarray:
        """Solve the leading ``len(rhs)`` system; ``rhs`` may be 1-d or 2-d."""
        rhs = np.asarray(rhs, dtype=float)
        vec = rhs.ndim == 1
        y = rhs[:, None] if vec else rhs
        n = y.shape[0]
        if n > self.size:
            raise FullRankError(
                f"Toeplitz covariance of size {n} is not positive definite "
                f"(largest positive definite leading block: {self.size})"
            )
        r = self.r
        x = y[:1] / r[0]
        for k in range(1, n):
            eps_x = r[k:0:-1] @ x
            x = np.vstack([x, np.zeros((1, x.shape[1]))])
            x += np.outer(self._backward[k], y[k] - eps_x)
        return x[:, 0] if vec else x


def toeplitz_matrix(first_col) -> np.ndarray:
    r = np.asarray(first_col, dtype=float)
    idx = np.abs(np.arange(r.size)[:, None] - np.arange(r.size)[None, :])
    return r[idx]
