# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loop for the ADMM QP engine.

Contains an elimination-tree sparse LDL' factorization (up-looking, no
pivoting; valid for the quasi-definite KKT matrices produced by the driver)
and a fused ADMM iteration kernel. Symbolic analysis, reordering and
assembly stay in python; everything executed per iteration runs here.
"""
import numpy as np

cimport numpy as cnp

import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

cnp.import_array()


def _etree_counts(int n, int[:] Ap, int[:] Ai):
    """Elimination tree and per-column fill counts of an upper-CSC matrix."""
    parent_arr = np.full(n, -1, dtype=np.int32)
    lnz_arr = np.zeros(n, dtype=np.int32)
    flag_arr = np.empty(n, dtype=np.int32)
    cdef int[:] parent = parent_arr
    cdef int[:] lnz = lnz_arr
    cdef int[:] flag = flag_arr
    cdef int j, p, i
    for j in range(n):
        flag[j] = j
        for p in range(Ap[j], Ap[j + 1]):
            i = Ai[p]
            while flag[i] != j:
                if parent[i] == -1:
                    parent[i] = j
                lnz[i] += 1
                flag[i] = j
                i = parent[i]
    return parent_arr, lnz_arr


def _ldl_numeric(int n, int[:] Ap, int[:] Ai, double[:] Ax,
                 int[:] Lp, int[:] parent,
                 int[:] Li, double[:] Lx, double[:] D, double[:] Dinv,
                 int[:] lnz_cur, int[:] flag, int[:] pattern, double[:] Y):
    """Up-looking numeric LDL' of an upper-CSC matrix with known pattern.

    Returns the number of completed columns (== n on success)."""
    cdef int k, p, i, top, length, s, p2
    cdef double yi, l_ki, dk
    for k in range(n):
        Y[k] = 0.0
        lnz_cur[k] = 0
        flag[k] = k
        top = n
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            Y[i] += Ax[p]
            length = 0
            while flag[i] != k:
                pattern[length] = i
                length += 1
                flag[i] = k
                i = parent[i]
            while length > 0:
                length -= 1
                top -= 1
                pattern[top] = pattern[length]
        dk = Y[k]
        Y[k] = 0.0
        for s in range(top, n):
            i = pattern[s]
            yi = Y[i]
            Y[i] = 0.0
            p2 = Lp[i] + lnz_cur[i]
            for p in range(Lp[i], p2):
                Y[Li[p]] -= Lx[p] * yi
            l_ki = yi * Dinv[i]
            dk -= l_ki * yi
            Li[p2] = k
            Lx[p2] = l_ki
            lnz_cur[i] += 1
        if dk == 0.0:
            return k
        D[k] = dk
        Dinv[k] = 1.0 / dk
    return n


cdef void _ldl_solve(int n, int[:] Lp, int[:] Li, double[:] Lx,
                     double[:] Dinv, int[:] perm,
                     double[:] b, double[:] w, double[:] out) noexcept nogil:
    """Solve K out = b where P K P' = L D L' for the permutation ``perm``."""
    cdef int i, j, p
    cdef double xj, s
    for i in range(n):
        w[i] = b[perm[i]]
    for j in range(n):
        xj = w[j]
        if xj != 0.0:
            for p in range(Lp[j], Lp[j + 1]):
                w[Li[p]] -= Lx[p] * xj
    for j in range(n):
        w[j] *= Dinv[j]
    for j in range(n - 1, -1, -1):
        s = w[j]
        for p in range(Lp[j], Lp[j + 1]):
            s -= Lx[p] * w[Li[p]]
        w[j] = s
    for i in range(n):
        out[perm[i]] = w[i]


def _admm_chunk(int n_iters, int n, int m,
                int[:] Lp, int[:] Li, double[:] Lx, double[:] Dinv,
                int[:] perm,
                double[:] q, double[:] l, double[:] u,
                double[:] x, double[:] z, double[:] y,
                double[:] rho, double[:] rho_inv,
                double alpha, double sigma,
                double[:] rhs, double[:] wrk, double[:] sol):
    """Advance the scaled iterates by ``n_iters`" ADMM steps in place."""
    cdef int it, i, nm
    cdef double zt, w, znew, one_m_alpha
    nm = n + m
    one_m_alpha = 1.0 - alpha
    with nogil:
        for it in range(n_iters):
            for i in range(n):
                rhs[i] = sigma * x[i] - q[i]
            for i in range(m):
                rhs[n + i] = z[i] - rho_inv[i] * y[i]
            _ldl_solve(nm, Lp, Li, Lx, Dinv, perm, rhs, wrk, sol)
            for i in range(m):
                zt = z[i] + rho_inv[i] * (sol[n + i] - y[i])
                w = alpha * zt + one_m_alpha * z[i] + rho_inv[i] * y[i]
                znew = w
                if znew < l[i]:
                    znew = l[i]
                if znew > u[i]:
                    znew = u[i]
                y[i] = rho[i] * (w - znew)
                z[i] = znew
            for i in range(n):
                x[i] = alpha * sol[i] + one_m_alpha * x[i]


def _as_int32(arr):
    return np.ascontiguousarray(arr, dtype=np.int32)


class CompiledEngine:
    """Iteration engine backed by the compiled LDL' kernel."""

    def __init__(self, Pbar, Abar, sigma):
        P = Pbar.tocsc()
        P.sort_indices()
        A = Abar.tocsc()
        A.sort_indices()
        self._P = P
        self._A = A
        self._sigma = float(sigma)
        self._n = P.shape[0]
        self._m = A.shape[0]
        nm = self._n + self._m
        self._perm = None
        self._parent = None
        self._rhs = np.empty(nm)
        self._wrk = np.empty(nm)
        self._sol = np.empty(nm)

    def refactor(self, rho_vec):
        n, m = self._n, self._m
        nm = n + m
        kkt = sp.bmat([
            [self._P + self._sigma * sp.eye(n), self._A.T],
            [self._A, -sp.diags(1.0 / rho_vec) if m else None],
        ], format="csc")
        if self._perm is None:
            perm = reverse_cuthill_mckee(kkt, symmetric_mode=True)
            self._perm = _as_int32(perm)
        kper = kkt[self._perm, :][:, self._perm]
        upper = sp.triu(kper, format="csc")
        upper.sort_indices()
        ap = _as_int32(upper.indptr)
        ai = _as_int32(upper.indices)
        ax = np.ascontiguousarray(upper.data, dtype=np.float64)
        if self._parent is None:
            parent, lnz = _etree_counts(nm, ap, ai)
            self._parent = parent
            lp = np.zeros(nm + 1, dtype=np.int32)
            np.cumsum(lnz, out=lp[1:])
            self._Lp = lp
            self._Li = np.empty(int(lp[-1]), dtype=np.int32)
            self._Lx = np.empty(int(lp[-1]))
            self._D = np.empty(nm)
            self._Dinv = np.empty(nm)
            self._lnz_cur = np.empty(nm, dtype=np.int32)
            self._flag = np.empty(nm, dtype=np.int32)
            self._pattern = np.empty(nm, dtype=np.int32)
            self._Y = np.zeros(nm)
        done = _ldl_numeric(nm, ap, ai, ax, self._Lp, self._parent,
                            self._Li, self._Lx, self._D, self._Dinv,
                            self._lnz_cur, self._flag, self._pattern, self._Y)
        if done != nm:
            raise RuntimeError(f"LDL factorization broke down at column {done}")

    def iterate(self, q, l, u, x, z, y, rho_vec, rho_inv, alpha, sigma, n_iters):
        _admm_chunk(int(n_iters), self._n, self._m,
                    self._Lp, self._Li, self._Lx, self._Dinv, self._perm,
                    np.ascontiguousarray(q), np.ascontiguousarray(l),
                    np.ascontiguousarray(u),
                    x, z, y,
                    np.ascontiguousarray(rho_vec),
                    np.ascontiguousarray(rho_inv),
                    float(alpha), float(sigma),
                    self._rhs, self._wrk, self._sol)
