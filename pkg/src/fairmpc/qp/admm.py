"""Operator-splitting solver for box-constrained quadratic programs.

Solves problems of the form

    minimize    0.5 * x' P x + q' x
    subject to  l <= A x <= u

with the ADMM scheme popularized by embedded QP solvers: a quasi-definite
KKT system is factored once and reused across iterations, iterates are
projected onto the box, and the final point is polished by solving the KKT
system restricted to the active constraints.

Two iteration engines implement the inner loop: a compiled kernel
(``fairmpc.qp._kernels``, built from Cython) with its own sparse LDL'
factorization, and a pure-python fallback backed by ``scipy``'s sparse LU.
The engine is selected at import time; both produce the same iterates up to
floating-point rounding.

The driver keeps all termination logic in one place: engines only advance
the iterates by a fixed number of steps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

from ._engine_py import PythonEngine

_BIG_BOUND = 1e20  # stand-in for infinity inside infeasibility certificates


def available_engines():
    """Names of the iteration engines usable in this installation."""
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "compiled")
    return names


def default_engine():
    return "compiled" if _compiled is not None else "python"


@dataclass
class AdmmSettings:
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    eps_abs: float = 1e-7
    eps_rel: float = 1e-7
    eps_prim_inf: float = 1e-7
    eps_dual_inf: float = 1e-7
    max_iter: int = 100_000
    check_every: int = 25
    scaling_iters: int = 10
    adaptive_rho: bool = True
    adaptive_every: int = 100
    max_rho_updates: int = 30
    polish: bool = True
    polish_delta: float = 1e-7
    polish_refine_steps: int = 4


@dataclass
class QpResult:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    status: str
    iterations: int
    prim_res: float
    dual_res: float
    polished: bool
    objective: float


@dataclass
class _Scaling:
    d: np.ndarray
    e: np.ndarray
    c: float


def _col_inf_norms(mat):
    out = np.zeros(mat.shape[1])
    if mat.nnz:
        absm = abs(mat)
        out = np.asarray(absm.max(axis=0).todense()).ravel()
    return out


def _row_inf_norms(mat):
    out = np.zeros(mat.shape[0])
    if mat.nnz:
        absm = abs(mat)
        out = np.asarray(absm.max(axis=1).todense()).ravel()
    return out


def _ruiz_equilibrate(P, A, iters, q_ref=None):
    """Symmetric diagonal equilibration of the stacked KKT columns.

    ``q_ref`` is a representative linear cost used to normalize the overall
    cost magnitude against the constraints (without it the cost factor is
    capped at one, which keeps the loop stable when P is mostly empty).
    """
    n = P.shape[0]
    d = np.ones(n)
    e = np.ones(A.shape[0])
    c = 1.0
    Ps = P.tocsc(copy=True)
    As = A.tocsc(copy=True)
    qs = None if q_ref is None else np.array(q_ref, dtype=float)
    for _ in range(iters):
        norms_x = np.maximum(_col_inf_norms(Ps), _col_inf_norms(As))
        norms_y = _row_inf_norms(As)
        dx = 1.0 / np.sqrt(np.clip(norms_x, 1e-8, 1e8))
        de = 1.0 / np.sqrt(np.clip(norms_y, 1e-8, 1e8))
        dx[norms_x < 1e-12] = 1.0
        de[norms_y < 1e-12] = 1.0
        Dx = sp.diags(dx)
        De = sp.diags(de)
        Ps = (Dx @ Ps @ Dx).tocsc()
        As = (De @ As @ Dx).tocsc()
        d *= dx
        e *= de
        # normalize the cost so P does not dwarf the constraints
        p_norm = _col_inf_norms(Ps)
        mean_p = p_norm.mean() if n else 1.0
        if qs is not None:
            qs *= dx
            norm_q = float(np.max(np.abs(qs))) if qs.size else 0.0
        else:
            norm_q = 1.0
        if norm_q < 1e-12:
            norm_q = 1.0
        gamma = 1.0 / max(mean_p, norm_q, 1e-8)
        gamma = min(max(gamma, 1e-6), 1e6)
        Ps = (gamma * Ps).tocsc()
        if qs is not None:
            qs *= gamma
        c *= gamma
    return Ps, As, _Scaling(d=d, e=e, c=c)


class AdmmQpSolver:
    """Reusable solver bound to a fixed (P, A) sparsity/value pair.

    ``solve`` may be called repeatedly with new ``q``, ``l``, ``u`` (the
    constraint-type pattern must stay fixed); the KKT factorization and the
    scaling are computed once and reused, and iterates warm-start the next
    call, which makes receding-horizon loops cheap.
    """

    def __init__(self, P, A, l, u, settings=None, engine="auto", q_ref=None):
        self.settings = settings or AdmmSettings()
        P = sp.csc_matrix(P)
        P = ((P + P.T) * 0.5).tocsc()  # enforce symmetry
        A = sp.csc_matrix(A)
        if P.shape[0] != P.shape[1] or A.shape[1] != P.shape[0]:
            raise ValueError("inconsistent P/A dimensions")
        self.n = P.shape[0]
        self.m = A.shape[0]
        self._P0 = P
        self._A0 = A
        self._AT0 = A.T.tocsc()
        self._Pbar, self._Abar, self._scal = _ruiz_equilibrate(
            P, A, self.settings.scaling_iters, q_ref)
        l = np.asarray(l, dtype=float)
        u = np.asarray(u, dtype=float)
        self._eq_rows = np.isfinite(l) & np.isfinite(u) & (np.abs(u - l) < 1e-12)
        self._loose_rows = ~np.isfinite(l) & ~np.isfinite(u)
        self._rho_hat = float(self.settings.rho)
        self._rho_updates = 0
        if engine == "auto":
            engine = default_engine()
        if engine == "compiled":
            if _compiled is None:
                raise RuntimeError("compiled QP engine requested but not built")
            self._engine = _compiled.CompiledEngine(
                self._Pbar, self._Abar, self.settings.sigma)
        elif engine == "python":
            self._engine = PythonEngine(self._Pbar, self._Abar, self.settings.sigma)
        else:
            raise ValueError(f"unknown engine {engine!r}")
        self.engine_name = engine
        self._set_rho_vec()
        # warm-start storage (scaled space)
        self._x = np.zeros(self.n)
        self._z = np.zeros(self.m)
        self._y = np.zeros(self.m)

    # -- rho handling ------------------------------------------------------

    def _set_rho_vec(self):
        rho = np.full(self.m, self._rho_hat)
        rho[self._eq_rows] = np.clip(self._rho_hat * 1e3, 1e-6, 1e6)
        rho[self._loose_rows] = 1e-6
        self._rho_vec = rho
        self._rho_inv = 1.0 / rho
        self._engine.refactor(self._rho_vec)

    # -- main entry --------------------------------------------------------

    def solve(self, q, l, u, warm_start=True):
        st = self.settings
        q = np.asarray(q, dtype=float)
        l = np.asarray(l, dtype=float)
        u = np.asarray(u, dtype=float)
        if np.any(l > u + 1e-12):
            raise ValueError("lower bound exceeds upper bound")
        d, e, c = self._scal.d, self._scal.e, self._scal.c
        qs = c * d * q
        with np.errstate(invalid="ignore"):
            ls = e * l
            us = e * u
        ls[np.isneginf(l)] = -np.inf
        us[np.isposinf(u)] = np.inf

        if not warm_start:
            self._x[:] = 0.0
            self._z[:] = 0.0
            self._y[:] = 0.0
        x, z, y = self._x, self._z, self._y

        x_prev_u = d * x
        y_prev_u = e * y / c
        status = "max_iter"
        prim_res = np.inf
        dual_res = np.inf
        iters_done = 0
        next_adapt = st.adaptive_every
        while iters_done < st.max_iter:
            chunk = min(st.check_every, st.max_iter - iters_done)
            self._engine.iterate(qs, ls, us, x, z, y,
                                 self._rho_vec, self._rho_inv,
                                 st.alpha, st.sigma, chunk)
            iters_done += chunk

            x_u = d * x
            z_u = z / e
            y_u = e * y / c
            Ax = self._A0 @ x_u
            Px = self._P0 @ x_u
            ATy = self._AT0 @ y_u
            rp_vec = Ax - z_u
            rd_vec = Px + q + ATy
            prim_res = float(np.max(np.abs(rp_vec))) if self.m else 0.0
            dual_res = float(np.max(np.abs(rd_vec)))
            norm_Ax = float(np.max(np.abs(Ax))) if self.m else 0.0
            norm_z = float(np.max(np.abs(z_u))) if self.m else 0.0
            norm_Px = float(np.max(np.abs(Px)))
            norm_ATy = float(np.max(np.abs(ATy))) if self.m else 0.0
            norm_q = float(np.max(np.abs(q))) if self.n else 0.0
            tol_p = st.eps_abs + st.eps_rel * max(norm_Ax, norm_z)
            tol_d = st.eps_abs + st.eps_rel * max(norm_Px, norm_ATy, norm_q)
            if prim_res <= tol_p and dual_res <= tol_d:
                status = "solved"
                break

            if self._certify_primal_infeasible(y_u - y_prev_u, l, u):
                status = "primal_infeasible"
                break
            if self._certify_dual_infeasible(x_u - x_prev_u, q, l, u):
                status = "dual_infeasible"
                break
            x_prev_u = x_u
            y_prev_u = y_u

            if (st.adaptive_rho and iters_done >= next_adapt
                    and self._rho_updates < st.max_rho_updates):
                next_adapt = iters_done + st.adaptive_every
                # the step size acts on the scaled problem, so the estimate
                # compares scaled residuals
                axs = self._Abar @ x
                pxs = self._Pbar @ x
                atys = self._Abar.T @ y
                rp_s = float(np.max(np.abs(axs - z))) if self.m else 0.0
                rd_s = float(np.max(np.abs(pxs + qs + atys)))
                np_s = max(float(np.max(np.abs(axs))) if self.m else 0.0,
                           float(np.max(np.abs(z))) if self.m else 0.0, 1e-10)
                nd_s = max(float(np.max(np.abs(pxs))),
                           float(np.max(np.abs(atys))) if self.m else 0.0,
                           float(np.max(np.abs(qs))), 1e-10)
                ratio = np.sqrt((rp_s / np_s) / max(rd_s / nd_s, 1e-16))
                if ratio > 5.0 or ratio < 0.2:
                    self._rho_hat = float(np.clip(self._rho_hat * ratio,
                                                  1e-6, 1e6))
                    self._rho_updates += 1
                    self._set_rho_vec()

        x_u = d * x
        z_u = z / e
        y_u = e * y / c
        polished = False
        if st.polish and status in ("solved", "max_iter"):
            pol = self._polish(q, l, u, y, x_u, prim_res, dual_res)
            if pol is None and status == "solved":
                # degenerate active set: sharpen the iterates and try again
                self._engine.iterate(qs, ls, us, x, z, y,
                                     self._rho_vec, self._rho_inv,
                                     st.alpha, st.sigma, 20 * st.check_every)
                iters_done += 20 * st.check_every
                x_u = d * x
                z_u = z / e
                y_u = e * y / c
                rp = self._A0 @ x_u - z_u
                rd = self._P0 @ x_u + q + self._AT0 @ y_u
                prim_res = float(np.max(np.abs(rp))) if self.m else 0.0
                dual_res = float(np.max(np.abs(rd)))
                pol = self._polish(q, l, u, y, x_u, prim_res, dual_res)
            if pol is not None:
                x_u, y_u, z_u, prim_res, dual_res = pol
                polished = True
                if status == "max_iter":
                    # the active-set solve rescued a stalled run
                    norm_q = float(np.max(np.abs(q))) if self.n else 0.0
                    if prim_res <= st.eps_abs and dual_res <= st.eps_abs \
                            + st.eps_rel * norm_q:
                        status = "solved"
        obj = 0.5 * float(x_u @ (self._P0 @ x_u)) + float(q @ x_u)
        return QpResult(x=x_u, y=y_u, z=z_u, status=status,
                        iterations=iters_done, prim_res=prim_res,
                        dual_res=dual_res, polished=polished, objective=obj)

    # -- infeasibility certificates ---------------------------------------

    def _certify_primal_infeasible(self, dy, l, u):
        eps = self.settings.eps_prim_inf
        ndy = float(np.max(np.abs(dy))) if self.m else 0.0
        if ndy <= 1e-14:
            return False
        if float(np.max(np.abs(self._AT0 @ dy))) > eps * ndy:
            return False
        lc = np.clip(l, -_BIG_BOUND, _BIG_BOUND)
        uc = np.clip(u, -_BIG_BOUND, _BIG_BOUND)
        support = float(uc @ np.maximum(dy, 0.0) + lc @ np.minimum(dy, 0.0))
        return support < -eps * ndy

    def _certify_dual_infeasible(self, dx, q, l, u):
        eps = self.settings.eps_dual_inf
        ndx = float(np.max(np.abs(dx))) if self.n else 0.0
        if ndx <= 1e-14:
            return False
        if float(q @ dx) >= -eps * ndx:
            return False
        if float(np.max(np.abs(self._P0 @ dx))) > eps * ndx:
            return False
        Adx = self._A0 @ dx
        upper_ok = np.all(Adx[np.isfinite(u)] <= eps * ndx)
        lower_ok = np.all(Adx[np.isfinite(l)] >= -eps * ndx)
        return bool(upper_ok and lower_ok)

    # -- polish ------------------------------------------------------------

    def _polish(self, q, l, u, y_scaled, x_u, prim_res, dual_res):
        """Solve the KKT system on the guessed active set and keep the
        result only when it improves both residuals."""
        st = self.settings
        eq = self._eq_rows
        y_scale = float(np.max(np.abs(y_scaled))) if self.m else 0.0
        thresh = 1e-9 * max(1.0, y_scale)
        low = (y_scaled < -thresh) & ~eq
        up = (y_scaled > thresh) & ~eq
        act_idx = np.concatenate([np.flatnonzero(eq),
                                  np.flatnonzero(low),
                                  np.flatnonzero(up)])
        b_act = np.concatenate([l[eq], l[low], u[up]])
        if not np.all(np.isfinite(b_act)):
            return None
        A_act = self._A0[act_idx, :]
        na = A_act.shape[0]
        delta = st.polish_delta
        K_reg = sp.bmat([
            [self._P0 + delta * sp.eye(self.n), A_act.T],
            [A_act, -delta * sp.eye(na) if na else None],
        ], format="csc")
        K_unreg = sp.bmat([
            [self._P0, A_act.T],
            [A_act, sp.csc_matrix((na, na)) if na else None],
        ], format="csc")
        rhs = np.concatenate([-q, b_act])
        try:
            lu = spla.splu(K_reg)
        except RuntimeError:
            return None
        sol = lu.solve(rhs)
        if not np.all(np.isfinite(sol)):
            return None
        for _ in range(st.polish_refine_steps):
            sol = sol + lu.solve(rhs - K_unreg @ sol)
        x_pol = sol[:self.n]
        y_pol = np.zeros(self.m)
        y_pol[act_idx] = sol[self.n:]
        z_pol = np.clip(self._A0 @ x_pol, l, u)
        rp = self._A0 @ x_pol - z_pol
        rd = self._P0 @ x_pol + q + self._AT0 @ y_pol
        rp_n = float(np.max(np.abs(rp))) if self.m else 0.0
        rd_n = float(np.max(np.abs(rd)))
        if rp_n <= max(prim_res, 1e-10) and rd_n <= max(dual_res, 1e-10):
            return x_pol, y_pol, z_pol, rp_n, rd_n
        return None
