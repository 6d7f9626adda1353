"""Dense predictor-corrector interior-point engine for the cone programs.

Solves min <c,v> s.t. Av = b, v in K, where K is a product of PSD blocks
(svec coordinates) and a nonnegative orthant. The search direction is the
HKM one: per PSD block the complementarity linearization uses the operator
E(M) = (Z^-1 M X + X M Z^-1)/2, which turns the Newton system into a single
positive definite normal matrix A E A^T per solve. Mehrotra's
predictor-corrector supplies the centering weight sigma = (mu_aff/mu)^3 and
a second-order correction term.

Primal infeasibility is certified on the fly: whenever <b,y> > 0 and the
scaled dual slack -A^T y / <b,y> sits in the dual cone to within a small
tolerance, the instance has a Farkas ray and no feasible point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .cones import ConeLayout
from .program import mat_from_svec, svec_of_matrix

__all__ = ["IPMResult", "solve_standard_form"]

_FRACTION_TO_BOUNDARY = 0.99
_FARKAS_TOL = 1e-7


@dataclass
class IPMResult:
    v: np.ndarray
    y: np.ndarray
    z: np.ndarray
    status: str  # "solved" | "infeasible" | "unconverged"
    iterations: int
    primal_residual: float
    dual_residual: float
    mu: float
    primal_objective: float
    dual_objective: float


def _sym_op_matrix(Zinv: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Dense svec representation of M -> (Zinv M X + X M Zinv)/2."""
    n = X.shape[0]
    d = n * (n + 1) // 2
    E = np.empty((d, d))
    col = 0
    basis = np.zeros((n, n))
    isqrt2 = 1.0 / np.sqrt(2.0)
    for i in range(n):
        for j in range(i, n):
            basis[:] = 0.0
            if i == j:
                basis[i, i] = 1.0
            else:
                basis[i, j] = isqrt2
                basis[j, i] = isqrt2
            ZB = Zinv @ basis
            E[:, col] = svec_of_matrix(0.5 * (ZB @ X + X @ ZB.T))
            col += 1
    return 0.5 * (E + E.T)


def _chol_solve(M: np.ndarray, rhs: np.ndarray) -> Optional[np.ndarray]:
    """Cholesky solve with escalating jitter and iterative refinement."""
    scale = float(np.trace(M)) / max(M.shape[0], 1)
    jitter = 0.0
    for _ in range(8):
        try:
            L = np.linalg.cholesky(M + jitter * np.eye(M.shape[0]))
        except np.linalg.LinAlgError:
            jitter = max(jitter * 100.0, 1e-14 * max(scale, 1.0))
            continue
        x = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        for _ in range(2):
            r = rhs - M @ x
            x = x + np.linalg.solve(L.T, np.linalg.solve(L, r))
        return x
    try:
        return np.linalg.lstsq(M, rhs, rcond=None)[0]
    except np.linalg.LinAlgError:
        return None


def solve_standard_form(A: np.ndarray, b: np.ndarray, c: np.ndarray,
                        layout: ConeLayout, tol: float = 1e-8,
                        max_iter: int = 200, verbose: bool = False) -> IPMResult:
    m, N = A.shape
    segs = layout.segments()
    orders = layout.psd_orders
    tail = layout.total_dim - layout.n_nonneg
    nu = layout.degree

    tau_x = max(1.0, float(np.max(np.abs(b))) if m else 1.0)
    tau_z = max(1.0, float(np.max(np.abs(c))) if N else 1.0)
    v = layout.identity() * tau_x
    z = layout.identity() * tau_z
    y = np.zeros(m)

    norm_b = 1.0 + float(np.linalg.norm(b))
    norm_c = 1.0 + float(np.linalg.norm(c))

    def residuals():
        rp = b - A @ v
        rd = c - A.T @ y - z
        return rp, rd

    def farkas() -> bool:
        by = float(b @ y)
        if by <= 0.0:
            return False
        w = -(A.T @ y) / by
        scale = max(1.0, float(np.max(np.abs(w))))
        return layout.min_eig(w) >= -_FARKAS_TOL * scale

    status = "unconverged"
    it = 0
    rp, rd = residuals()
    mu = float(v @ z) / nu
    best = (v, y, z, rp, rd, mu)
    best_score = np.inf
    stagnant = 0
    for it in range(1, max_iter + 1):
        pobj = float(c @ v)
        dobj = float(b @ y)
        rp_n = float(np.linalg.norm(rp)) / norm_b
        rd_n = float(np.linalg.norm(rd)) / norm_c
        score = max(rp_n, rd_n, mu / (1.0 + abs(pobj)))
        if score < best_score:
            if score < 0.99 * best_score:
                stagnant = 0
            best_score = score
            best = (v, y, z, rp, rd, mu)
        else:
            stagnant += 1
        if verbose:
            print(f"it {it:3d}: rp={rp_n:.3e} rd={rd_n:.3e} mu={mu:.3e} "
                  f"pobj={pobj:.9f} dobj={dobj:.9f} stagnant={stagnant}")
        if rp_n <= tol and rd_n <= tol and mu <= tol * (1.0 + abs(pobj)):
            status = "solved"
            break
        if farkas():
            status = "infeasible"
            break
        if stagnant >= 30:
            break  # no measurable progress; return the best iterate

        # scaling data for this iterate
        Xs: List[np.ndarray] = []
        Zinvs: List[np.ndarray] = []
        Es: List[np.ndarray] = []
        broke = False
        for (a0, b0), n in zip(segs, orders):
            X = mat_from_svec(v[a0:b0], n)
            Z = mat_from_svec(z[a0:b0], n)
            try:
                Lz = np.linalg.cholesky(Z)
            except np.linalg.LinAlgError:
                broke = True
                break
            Zinv = np.linalg.solve(Lz.T, np.linalg.solve(Lz, np.eye(n)))
            Xs.append(X)
            Zinvs.append(Zinv)
            Es.append(_sym_op_matrix(Zinv, X))
        if broke:
            break
        xo = v[tail:]
        zo = z[tail:]

        def apply_E(w: np.ndarray) -> np.ndarray:
            out = np.empty_like(w)
            for (a0, b0), E in zip(segs, Es):
                out[a0:b0] = E @ w[a0:b0]
            out[tail:] = (xo / zo) * w[tail:]
            return out

        AE = np.empty_like(A)
        for (a0, b0), E in zip(segs, Es):
            AE[:, a0:b0] = A[:, a0:b0] @ E
        AE[:, tail:] = A[:, tail:] * (xo / zo)
        M = AE @ A.T
        M = 0.5 * (M + M.T)

        def direction(rc: np.ndarray):
            rhs = rp - A @ rc + AE @ rd
            dy = _chol_solve(M, rhs)
            if dy is None:
                return None
            dz = rd - A.T @ dy
            dv = rc - apply_E(dz)
            return dv, dy, dz

        # predictor: sigma = 0, rc = -v in the scaled sense
        rc_aff = np.empty(N)
        for (a0, b0), Zinv, X in zip(segs, Zinvs, Xs):
            rc_aff[a0:b0] = -svec_of_matrix(X)
        rc_aff[tail:] = -xo
        aff = direction(rc_aff)
        if aff is None:
            break
        dv_a, dy_a, dz_a = aff
        ap = min(1.0, _FRACTION_TO_BOUNDARY * layout.max_step(v, dv_a))
        ad = min(1.0, _FRACTION_TO_BOUNDARY * layout.max_step(z, dz_a))
        mu_aff = float((v + ap * dv_a) @ (z + ad * dz_a)) / nu
        sigma = min(1.0, max(0.0, (mu_aff / mu))) ** 3

        # corrector with second-order term
        rc = np.empty(N)
        for (a0, b0), Zinv, X, n in zip(segs, Zinvs, Xs, orders):
            DX = mat_from_svec(dv_a[a0:b0], n)
            DZ = mat_from_svec(dz_a[a0:b0], n)
            second = 0.5 * (DX @ DZ @ Zinv + Zinv @ DZ @ DX)
            rc[a0:b0] = svec_of_matrix(sigma * mu * Zinv - X - second)
        rc[tail:] = sigma * mu / zo - xo - dv_a[tail:] * dz_a[tail:] / zo
        cor = direction(rc)
        if cor is None:
            break
        dv, dy, dz = cor
        ap = min(1.0, _FRACTION_TO_BOUNDARY * layout.max_step(v, dv))
        ad = min(1.0, _FRACTION_TO_BOUNDARY * layout.max_step(z, dz))
        if verbose:
            print(f"      sigma={sigma:.3e} ap={ap:.3e} ad={ad:.3e} "
                  f"ap_aff={min(1.0, layout.max_step(v, dv_a)):.3e} "
                  f"ad_aff={min(1.0, layout.max_step(z, dz_a)):.3e}")
        if ap <= 1e-14 and ad <= 1e-14:
            break
        v = v + ap * dv
        y = y + ad * dy
        z = z + ad * dz
        rp, rd = residuals()
        mu = float(v @ z) / nu

    if status == "unconverged":
        # the best iterate may already satisfy the thresholds even when the
        # loop exited on stagnation or the iteration cap
        v, y, z, rp, rd, mu = best
        if best_score <= tol:
            status = "solved"
    return IPMResult(
        v=v, y=y, z=z, status=status, iterations=it,
        primal_residual=float(np.linalg.norm(rp)) / norm_b,
        dual_residual=float(np.linalg.norm(rd)) / norm_c,
        mu=mu, primal_objective=float(c @ v), dual_objective=float(b @ y))
