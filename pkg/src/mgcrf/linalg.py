"""Banded Cholesky factorization of sparse SPD matrices.

Matrices are reordered with reverse Cuthill-McKee, stored in LAPACK upper
band format and factored as ``A = U^T U``.  The factor supports solves,
log-determinants, exact sampling and the selected inverse restricted to
the band (Takahashi recursion), which is all the GCRF likelihood needs.
"""

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a matrix expected to be SPD fails to factor."""


def rcm_order(A):
    """Fill-reducing permutation of the symmetric sparsity pattern of `A`."""
    A = sp.csr_matrix(A)
    if A.shape[0] == 0:
        return np.zeros(0, dtype=np.intp)
    return np.asarray(reverse_cuthill_mckee(A, symmetric_mode=True), dtype=np.intp)


def _to_upper_band(A, bandwidth):
    coo = sp.triu(A, format="coo")
    ab = np.zeros((bandwidth + 1, A.shape[0]))
    ab[bandwidth + coo.row - coo.col, coo.col] = coo.data
    return ab


class BandedCholesky:
    """Cholesky factor ``P A P^T = U^T U`` of a sparse SPD matrix.

    Parameters
    ----------
    A : sparse or dense (n, n) array
        Symmetric positive definite matrix. Only its upper triangle is read.
    perm : array of int, optional
        Precomputed ordering; callers factoring many matrices that share a
        sparsity pattern should compute :func:`rcm_order` once and pass it.
    """

    def __init__(self, A, perm=None):
        A = sp.csr_matrix(A)
        n = A.shape[0]
        self.n = n
        self.perm = rcm_order(A) if perm is None else np.asarray(perm, dtype=np.intp)
        self.iperm = np.empty(n, dtype=np.intp)
        self.iperm[self.perm] = np.arange(n)
        if n == 0:
            self.bandwidth = 0
            self.cb = np.zeros((1, 0))
            return
        Ap = A[self.perm][:, self.perm].tocoo()
        self.bandwidth = int(np.max(np.abs(Ap.row - Ap.col))) if Ap.nnz else 0
        ab = _to_upper_band(Ap, self.bandwidth)
        try:
            self.cb = scipy.linalg.cholesky_banded(ab, lower=False, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NotPositiveDefiniteError(str(exc)) from exc
        self._zband = None

    @property
    def diag(self):
        """Diagonal of ``U`` (permuted order)."""
        return self.cb[self.bandwidth]

    def logdet(self):
        if self.n == 0:
            return 0.0
        return 2.0 * float(np.sum(np.log(self.diag)))

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self.n == 0:
            return b.copy()
        x = scipy.linalg.cho_solve_banded((self.cb, False), b[self.perm], check_finite=False)
        return x[self.iperm]

    def sample(self, eps):
        """Map standard normals `eps` to a draw with covariance ``A^{-1}``."""
        eps = np.asarray(eps, dtype=float)
        if self.n == 0:
            return eps.copy()
        x = scipy.linalg.solve_banded((0, self.bandwidth), self.cb, eps, check_finite=False)
        return x[self.iperm]

    def selected_inverse(self):
        """Band of ``(P A P^T)^{-1}``, as ``Z[m, i] = inv[i, i + m]``.

        Takahashi recursion on the upper factor; the band of the inverse is
        closed under the recursion so nothing outside it is formed.
        """
        if self._zband is not None:
            return self._zband
        n, u = self.n, self.bandwidth
        cb = self.cb
        Z = np.zeros((u + 1, n))
        # Z_sub[a, b] = Z[|a-b|, min(a, b) + offset] for the window after row i
        a = np.arange(u)
        off = np.abs(a[:, None] - a[None, :])
        base = np.minimum(a[:, None], a[None, :])
        for i in range(n - 1, -1, -1):
            d = cb[u, i]
            p = min(u, n - 1 - i)
            if p == 0:
                Z[0, i] = 1.0 / (d * d)
                continue
            # U[i, i+m] for m = 1..p
            urow = cb[u - np.arange(1, p + 1), i + np.arange(1, p + 1)]
            sub = Z[off[:p, :p], base[:p, :p] + i + 1]
            zrow = -(urow @ sub) / d
            Z[1:p + 1, i] = zrow
            Z[0, i] = (1.0 / d - urow @ zrow) / d
        self._zband = Z
        return Z

    def inverse_entries(self, rows, cols):
        """Entries ``A^{-1}[rows, cols]`` for pairs inside the factor band."""
        if self.n == 0:
            return np.zeros(0)
        Z = self.selected_inverse()
        a = self.iperm[np.asarray(rows)]
        b = self.iperm[np.asarray(cols)]
        m = np.abs(a - b)
        if m.size and m.max() > self.bandwidth:
            raise ValueError("requested entry lies outside the factor band")
        return Z[m, np.minimum(a, b)]

    def diag_inverse(self):
        if self.n == 0:
            return np.zeros(0)
        return self.selected_inverse()[0][self.iperm]

    def trace_product(self, B):
        """``tr(A^{-1} B)`` for symmetric sparse `B` whose pattern lies within A's."""
        if self.n == 0:
            return 0.0
        B = sp.coo_matrix(B)
        return float(np.dot(B.data, self.inverse_entries(B.row, B.col)))
