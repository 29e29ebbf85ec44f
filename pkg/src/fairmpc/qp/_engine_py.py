"""Pure-python ADMM iteration engine.

Factors the quasi-definite KKT matrix with scipy's sparse LU and advances the
scaled iterates in numpy. Mirrors the compiled kernel step for step so the
two engines are interchangeable.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class PythonEngine:
    def __init__(self, Pbar, Abar, sigma):
        self._P = Pbar.tocsc()
        self._A = Abar.tocsc()
        self._AT = self._A.T.tocsc()
        self._sigma = sigma
        self._n = Pbar.shape[0]
        self._m = Abar.shape[0]
        self._lu = None

    def refactor(self, rho_vec):
        n, m = self._n, self._m
        kkt = sp.bmat([
            [self._P + self._sigma * sp.eye(n), self._AT],
            [self._A, -sp.diags(1.0 / rho_vec) if m else None],
        ], format="csc")
        self._lu = spla.splu(kkt)

    def iterate(self, q, l, u, x, z, y, rho_vec, rho_inv, alpha, sigma, n_iters):
        """Advance (x, z, y) in place by ``n_iters`` ADMM steps."""
        lu = self._lu
        n = self._n
        rhs = np.empty(n + self._m)
        for _ in range(n_iters):
            rhs[:n] = sigma * x - q
            rhs[n:] = z - rho_inv * y
            sol = lu.solve(rhs)
            xt = sol[:n]
            nu = sol[n:]
            zt = z + rho_inv * (nu - y)
            x[:] = alpha * xt + (1.0 - alpha) * x
            w = alpha * zt + (1.0 - alpha) * z + rho_inv * y
            np.clip(w, l, u, out=z)
            y[:] = rho_vec * (w - z)
