"""Rank-2 factorized solver for the ball-goal relaxation.

Instead of a PSD matrix per layer, each Gram vector is represented by two
coordinates: an axis component u and an off-axis component v. The factorized
problem minimizes ``||u_0 - x_hat||^2 + ||v_0||^2`` subject to, per neuron,

    u_{k+1,i} >= 0
    u_{k+1,i} >= (W_k u_k + b_k)_i
    u_{k+1,i}^2 + v_{k+1,i}^2 <= u_{k+1,i} (W_k u_k + b_k)_i
                                 + v_{k+1,i} (W_k v_k)_i

and the ball row ``||u_L - z_hat||^2 + ||v_L||^2 <= rho^2``. A feasible
stationary point with v_0 = 0 forces v_k = 0 and the exact forward recursion
at every layer (the chain collapses inductively), which certifies the point
as a global optimum of the convex relaxation and recovers rank-1 Gram blocks.

The local method is an augmented Lagrangian with clipped multipliers for the
inequalities and L-BFGS-B inner solves with analytic gradients; restarts draw
fresh standard-normal starting points deterministically from (seed, attempt).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize, nnls

from .network import Ball, CertInstance

__all__ = ["BM2Config", "BM2Problem", "BM2State", "BM2Result", "bm2_solve",
           "certify_global", "kkt_residuals"]


@dataclass(frozen=True)
class BM2Config:
    """Knobs for the augmented-Lagrangian solve. All tolerances positive.

    ``inner_max_iter`` caps each L-BFGS-B call; an attempt runs multiplier
    rounds until the scaled KKT gates pass or the round budget runs out.
    """

    inner_max_iter: int = 300
    restarts: int = 5
    feas_tol: float = 1e-8
    kkt_tol: float = 1e-6
    rel_tol: float = 1e-8
    v_zero_tol: Optional[float] = None  # default 1e-6 * (1 + ||u_0||)
    sigma0: float = 10.0
    sigma_growth: float = 10.0
    second_order_tol: float = 1e-6

    def __post_init__(self):
        for name in ("feas_tol", "kkt_tol", "rel_tol", "sigma0",
                     "sigma_growth", "second_order_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"config field {name} must be positive")
        if self.v_zero_tol is not None and self.v_zero_tol <= 0:
            raise ValueError("config field v_zero_tol must be positive")
        if self.inner_max_iter < 1 or self.restarts < 1:
            raise ValueError("iteration and restart budgets must be >= 1")


class BM2Problem:
    """Flat-vector view of the factorized problem, with analytic derivatives.

    theta = [u_0, v_0, u_1, v_1, ..., u_L, v_L]. Constraint order: for each
    layer k and neuron i the triple (nonneg, preact, quad), then the ball row
    last. The ball row is rescaled by ``ball_scale`` so its gradient has unit
    norm at the anchor's forward point, taming the squared-radius
    conditioning; the scale is recorded for reporting.
    """

    def __init__(self, instance: CertInstance):
        if not isinstance(instance.goal, Ball):
            raise ValueError("the factorized solver needs a Ball goal")
        self.instance = instance
        net = instance.net
        self.layers = [(np.asarray(W, dtype=float), np.asarray(b, dtype=float))
                       for W, b in net.layers]
        self.x_hat = np.asarray(instance.x_hat, dtype=float)
        self.z_hat = np.asarray(instance.goal.z_hat, dtype=float)
        self.rho = float(instance.goal.rho)
        self.sizes = [net.input_dim] + [W.shape[0] for W, _ in self.layers]
        self.dim = 2 * sum(self.sizes)
        offs = []
        pos = 0
        for n in self.sizes:
            offs.append((pos, pos + n))
            pos += 2 * n
        self._offs = offs
        self.num_constraints = 3 * sum(self.sizes[1:]) + 1
        # unit-gradient rescaling of the ball row at the forward point
        acts = [self.x_hat]
        for W, b in self.layers:
            acts.append(np.maximum(0.0, W @ acts[-1] + b))
        gnorm = 2.0 * float(np.linalg.norm(acts[-1] - self.z_hat))
        self.ball_scale = 1.0 / gnorm if gnorm > 1e-9 else 1.0
        self.forward_acts = acts
        # constraint values are quadratic forms of the data, so feasibility
        # gates are taken relative to this magnitude
        self.feas_scale = 1.0 + float(self.x_hat @ self.x_hat
                                      + self.z_hat @ self.z_hat) + self.rho ** 2

    def u(self, theta: np.ndarray, k: int) -> np.ndarray:
        a, b = self._offs[k]
        return theta[a:b]

    def v(self, theta: np.ndarray, k: int) -> np.ndarray:
        a, b = self._offs[k]
        return theta[b:b + (b - a)]

    def pack(self, us: Sequence[np.ndarray], vs: Sequence[np.ndarray]) -> np.ndarray:
        theta = np.empty(self.dim)
        for k, (uu, vv) in enumerate(zip(us, vs)):
            a, b = self._offs[k]
            theta[a:b] = uu
            theta[b:b + (b - a)] = vv
        return theta

    def objective(self, theta: np.ndarray) -> float:
        du = self.u(theta, 0) - self.x_hat
        v0 = self.v(theta, 0)
        return float(du @ du + v0 @ v0)

    def objective_grad(self, theta: np.ndarray) -> np.ndarray:
        g = np.zeros(self.dim)
        a, b = self._offs[0]
        g[a:b] = 2.0 * (self.u(theta, 0) - self.x_hat)
        g[b:b + (b - a)] = 2.0 * self.v(theta, 0)
        return g

    def constraints(self, theta: np.ndarray) -> np.ndarray:
        out = np.empty(self.num_constraints)
        pos = 0
        for k, (W, bk) in enumerate(self.layers):
            uk, vk = self.u(theta, k), self.v(theta, k)
            un, vn = self.u(theta, k + 1), self.v(theta, k + 1)
            pre_u = W @ uk + bk
            pre_v = W @ vk
            n = un.shape[0]
            out[pos:pos + 3 * n:3] = -un
            out[pos + 1:pos + 3 * n:3] = pre_u - un
            out[pos + 2:pos + 3 * n:3] = un * un + vn * vn - un * pre_u - vn * pre_v
            pos += 3 * n
        uL, vL = self.u(theta, len(self.layers)), self.v(theta, len(self.layers))
        dz = uL - self.z_hat
        out[pos] = (float(dz @ dz + vL @ vL) - self.rho ** 2) * self.ball_scale
        return out

    def constraint_jac(self, theta: np.ndarray) -> np.ndarray:
        J = np.zeros((self.num_constraints, self.dim))
        pos = 0
        for k, (W, bk) in enumerate(self.layers):
            uk, vk = self.u(theta, k), self.v(theta, k)
            un, vn = self.u(theta, k + 1), self.v(theta, k + 1)
            pre_u = W @ uk + bk
            pre_v = W @ vk
            a_in, b_in = self._offs[k]
            a_out, b_out = self._offs[k + 1]
            n = un.shape[0]
            for i in range(n):
                r = pos + 3 * i
                J[r, a_out + i] = -1.0
                J[r + 1, a_in:b_in] = W[i]
                J[r + 1, a_out + i] = -1.0
                J[r + 2, a_in:b_in] = -un[i] * W[i]
                J[r + 2, b_in:b_in + (b_in - a_in)] = -vn[i] * W[i]
                J[r + 2, a_out + i] = 2.0 * un[i] - pre_u[i]
                J[r + 2, b_out + i] = 2.0 * vn[i] - pre_v[i]
            pos += 3 * n
        aL, bL = self._offs[len(self.layers)]
        uL, vL = self.u(theta, len(self.layers)), self.v(theta, len(self.layers))
        J[pos, aL:bL] = 2.0 * (uL - self.z_hat) * self.ball_scale
        J[pos, bL:bL + (bL - aL)] = 2.0 * vL * self.ball_scale
        return J

    def lagrangian_hessian(self, theta: np.ndarray, lam: np.ndarray) -> np.ndarray:
        """Hessian of objective + lam . constraints (all terms quadratic)."""
        H = np.zeros((self.dim, self.dim))
        a0, b0 = self._offs[0]
        n0 = b0 - a0
        H[a0:b0, a0:b0] += 2.0 * np.eye(n0)
        H[b0:b0 + n0, b0:b0 + n0] += 2.0 * np.eye(n0)
        pos = 0
        for k, (W, _) in enumerate(self.layers):
            a_in, b_in = self._offs[k]
            a_out, b_out = self._offs[k + 1]
            n_in = b_in - a_in
            n = W.shape[0]
            for i in range(n):
                lam_q = lam[pos + 3 * i + 2]
                if lam_q != 0.0:
                    H[a_out + i, a_out + i] += 2.0 * lam_q
                    H[b_out + i, b_out + i] += 2.0 * lam_q
                    H[a_out + i, a_in:b_in] += -lam_q * W[i]
                    H[a_in:b_in, a_out + i] += -lam_q * W[i]
                    H[b_out + i, b_in:b_in + n_in] += -lam_q * W[i]
                    H[b_in:b_in + n_in, b_out + i] += -lam_q * W[i]
            pos += 3 * n
        lam_ball = lam[pos] * self.ball_scale
        aL, bL = self._offs[len(self.layers)]
        nL = bL - aL
        H[aL:bL, aL:bL] += 2.0 * lam_ball * np.eye(nL)
        H[bL:bL + nL, bL:bL + nL] += 2.0 * lam_ball * np.eye(nL)
        return H

    def aug_lagrangian(self, theta: np.ndarray, lam: np.ndarray,
                       sigma: float) -> Tuple[float, np.ndarray]:
        """Value and gradient of the clipped-multiplier augmented Lagrangian.

        Per constraint: psi(g) = (max(0, lam + sigma g)^2 - lam^2)/(2 sigma),
        whose gradient is max(0, lam + sigma g) * grad g.
        """
        g = self.constraints(theta)
        shifted = np.maximum(0.0, lam + sigma * g)
        val = self.objective(theta) + float(shifted @ shifted - lam @ lam) / (2.0 * sigma)
        grad = self.objective_grad(theta) + self.constraint_jac(theta).T @ shifted
        return val, grad


@dataclass
class BM2State:
    """One attempt's terminal point plus its multiplier estimates."""

    u: List[np.ndarray]
    v: List[np.ndarray]
    objective: float
    violations: np.ndarray
    attempt: int
    iterations: int
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigma: float = 0.0
    problem: Optional[BM2Problem] = None

    def theta(self) -> np.ndarray:
        assert self.problem is not None
        return self.problem.pack(self.u, self.v)


@dataclass
class BM2Result:
    state: BM2State
    status: str  # "global_certified" | "local_only" | "failed"
    recovered_rank1: Optional[List[np.ndarray]] = None
    attempts_run: int = 0
    ball_scale: float = 1.0

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "objective": self.state.objective,
            "attempt": self.state.attempt,
            "attempts_run": self.attempts_run,
            "iterations": self.state.iterations,
            "max_violation": float(np.max(np.maximum(self.state.violations, 0.0), initial=0.0)),
            "v0_norm": float(np.linalg.norm(self.state.v[0])),
            "ball_scale": self.ball_scale,
            "u0": [float(x) for x in self.state.u[0]],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def kkt_residuals(state: BM2State) -> dict:
    """Max-norm first-order residuals at a state, using its multipliers."""
    prob = state.problem
    if prob is None:
        raise ValueError("state carries no problem context")
    theta = state.theta()
    g = prob.constraints(theta)
    lam = state.multipliers
    stat = prob.objective_grad(theta) + prob.constraint_jac(theta).T @ lam
    return {
        "stationarity": float(np.max(np.abs(stat))),
        "complementarity": float(np.max(np.abs(lam * g), initial=0.0)),
        "feasibility": float(np.max(np.maximum(g, 0.0), initial=0.0)),
    }


def _make_state(prob: BM2Problem, theta: np.ndarray, lam: np.ndarray,
                sigma: float, attempt: int, iters: int) -> BM2State:
    L = len(prob.layers)
    us = [prob.u(theta, k).copy() for k in range(L + 1)]
    vs = [prob.v(theta, k).copy() for k in range(L + 1)]
    return BM2State(u=us, v=vs, objective=prob.objective(theta),
                    violations=prob.constraints(theta), attempt=attempt,
                    iterations=iters, multipliers=lam.copy(), sigma=sigma,
                    problem=prob)


def _attempt(prob: BM2Problem, theta0: np.ndarray, config: BM2Config,
             attempt: int) -> BM2State:
    theta = theta0.copy()
    lam = np.zeros(prob.num_constraints)
    sigma = config.sigma0
    iters = 0
    escapes = 0
    rounds = 0
    last_viol = math.inf
    feas_gate = config.feas_tol * prob.feas_scale
    best = None
    best_score = math.inf
    while rounds < 25:
        rounds += 1
        # early rounds are only there to move the multipliers, so solve them
        # loosely; tighten as feasibility improves
        gtol = min(1e-5, max(1e-10, 0.3 * last_viol)) if math.isfinite(last_viol) else 1e-6
        res = minimize(
            lambda th: prob.aug_lagrangian(th, lam, sigma),
            theta, jac=True, method="L-BFGS-B",
            options={"maxiter": config.inner_max_iter,
                     "ftol": 1e-14, "gtol": gtol, "maxcor": 20})
        theta = res.x
        iters += max(int(res.nit), 1)
        g = prob.constraints(theta)
        lam = np.maximum(0.0, lam + sigma * g)
        viol = float(np.max(np.maximum(g, 0.0), initial=0.0))
        stat = prob.objective_grad(theta) + prob.constraint_jac(theta).T @ lam
        stat_inf = float(np.max(np.abs(stat)))
        stat_gate = config.kkt_tol * (1.0 + float(np.max(lam, initial=0.0)))
        score = max(viol / feas_gate, stat_inf / stat_gate)
        if score < best_score:
            best_score = score
            best = (theta.copy(), lam.copy(), sigma, iters)
        if viol <= feas_gate and stat_inf <= stat_gate:
            # the set {v = 0} is invariant under the inner gradient flow, so
            # first-order runs can terminate on rank-1 saddles; escape along
            # projected negative curvature before accepting the point
            w, V, basis = _reduced_hessian(prob, theta, lam)
            if (w is None or float(w[0]) >= -config.second_order_tol
                    or escapes >= 10):
                break
            escapes += 1
            direction = basis @ V[:, 0]
            step = 1e-2 * (1.0 + float(np.linalg.norm(theta)))
            base_val, _ = prob.aug_lagrangian(theta, lam, sigma)
            trial = theta + step * direction
            if prob.aug_lagrangian(trial, lam, sigma)[0] > base_val:
                trial = theta - step * direction
            theta = trial
            best = None
            best_score = math.inf
            last_viol = math.inf
            continue
        # demand a decade of feasibility progress per round, else raise the
        # penalty; past ~1e8 the inner landscape is too stiff for a
        # first-order method to polish. Once feasible, walk the penalty back
        # down so stationarity can be polished on a well-conditioned model.
        if viol > feas_gate and viol > 0.1 * last_viol and sigma < 1e8:
            sigma *= config.sigma_growth
        elif viol <= feas_gate and stat_inf > stat_gate and sigma > 1e3:
            sigma /= config.sigma_growth
        last_viol = viol
    if best is not None and best_score < math.inf:
        theta, lam, sigma, best_iters = best
        return _make_state(prob, theta, lam, sigma, attempt, max(iters, best_iters))
    return _make_state(prob, theta, lam, sigma, attempt, iters)


def _reduced_hessian(prob: BM2Problem, theta: np.ndarray, lam: np.ndarray,
                     act_tol: float = 1e-7):
    """Lagrangian Hessian projected onto the active-constraint null space.

    Returns ``(eigvals, eigvecs, basis)`` of the reduced matrix, or
    ``(None, None, None)`` when the null space is empty. Degenerate active
    sets admit a ray of valid multipliers, and the augmented-Lagrangian
    estimate can sit far along it where the Hessian looks spuriously
    indefinite; curvature is therefore evaluated at the least-norm
    nonnegative multiplier (NNLS on the active stationarity system),
    falling back to the supplied one when NNLS does not explain the
    gradient. The rank cutoff is deliberately generous: Jacobian components
    at the size of the v-residual noise are not real constraint directions,
    and widening the null space only makes the curvature test harder to
    pass.
    """
    g = prob.constraints(theta)
    scale = 1.0 + float(np.max(np.abs(g)))
    active = g >= -act_tol * scale
    lam_h = lam
    if np.any(active):
        J = prob.constraint_jac(theta)[active]
        grad = prob.objective_grad(theta)
        sol, res_norm = nnls(J.T, -grad)
        raw_stat = float(np.max(np.abs(grad + prob.constraint_jac(theta).T @ lam)))
        if res_norm <= raw_stat + 1e-9 * (1.0 + float(np.linalg.norm(grad))):
            lam_h = np.zeros_like(lam)
            lam_h[active] = sol
        _, s, vt = np.linalg.svd(J, full_matrices=True)
        rank = int(np.sum(s > max(s[0], 1.0) * 1e-6)) if s.size else 0
        basis = vt[rank:].T
    else:
        basis = np.eye(prob.dim)
    if basis.shape[1] == 0:
        return None, None, None
    H = prob.lagrangian_hessian(theta, lam_h)
    reduced = basis.T @ H @ basis
    w, V = np.linalg.eigh(0.5 * (reduced + reduced.T))
    return w, V, basis


def _second_order_ok(state: BM2State, tol: float) -> bool:
    """Projected-Hessian check on the active-constraint null space."""
    w, _, _ = _reduced_hessian(state.problem, state.theta(), state.multipliers)
    return True if w is None else float(w[0]) >= -tol


def certify_global(result: BM2Result, kkt_tol: float = 1e-6,
                   v_zero_tol: Optional[float] = None):
    """Rank-deficiency certificate: (ok, recovered rank-1 Gram blocks).

    An exactly feasible point with v_0 = 0 has every v_k = 0 (the quadratic
    row forces v_{k+1}^2 <= u_{k+1}(pre_{k+1} - u_{k+1}) <= 0 once the inner
    v products vanish), so the certificate checks the v = 0 projection of
    the candidate: a later v_k may carry sqrt-of-slop noise when the ball is
    inactive, and u-stationarity is unchanged by zeroing it. True iff v_0
    vanishes, the projected point is feasible and stationary, and u_{k+1}
    equals the exact ReLU image of u_k within 1e-8 relative at every layer.
    On success the blocks ``outer(g_k, g_k)`` with ``g_k = (1; u_k;
    u_{k+1})`` are the relaxation's rank-1 optimum.
    """
    state = result.state
    prob = state.problem
    if prob is None:
        raise ValueError("result carries no problem context")
    u0_norm = float(np.linalg.norm(state.u[0]))
    if v_zero_tol is None:
        v_zero_tol = 1e-6 * (1.0 + u0_norm)
    if float(np.linalg.norm(state.v[0])) > v_zero_tol:
        return False, None
    # forward polish: rebuild the chain exactly from u_0, so the neuron rows
    # hold by construction and only closeness, the ball row, and
    # stationarity remain to be checked
    chain = [state.u[0].copy()]
    for W, b in prob.layers:
        chain.append(np.maximum(0.0, W @ chain[-1] + b))
    for k in range(1, len(chain)):
        gap = float(np.max(np.abs(state.u[k] - chain[k])))
        if gap > 1e-5 * (1.0 + float(np.max(np.abs(chain[k])))):
            return False, None
    proj = BM2State(
        u=chain, v=[np.zeros_like(vk) for vk in state.v],
        objective=0.0, violations=np.zeros(0), attempt=state.attempt,
        iterations=state.iterations, multipliers=state.multipliers.copy(),
        sigma=state.sigma, problem=prob)
    theta_proj = proj.theta()
    proj.objective = prob.objective(theta_proj)
    proj.violations = prob.constraints(theta_proj)
    res = kkt_residuals(proj)
    feas_ok = res["feasibility"] <= 1e-8 * prob.feas_scale
    stat_ok = res["stationarity"] <= kkt_tol * (
        1.0 + float(np.max(state.multipliers, initial=0.0)))
    if not (feas_ok and stat_ok):
        return False, None
    blocks = []
    for k in range(len(prob.layers)):
        gk = np.concatenate(([1.0], proj.u[k], proj.u[k + 1]))
        blocks.append(np.outer(gk, gk))
    return True, blocks


def bm2_solve(instance: CertInstance, seed: int = 0,
              config: Optional[BM2Config] = None) -> BM2Result:
    """Restarted local solve of the factorized relaxation.

    Each attempt starts from i.i.d. standard normal coordinates drawn from
    ``default_rng([seed, attempt])`` and runs the augmented Lagrangian to a
    KKT point or the iteration budget. The first attempt whose KKT point
    passes the rank-deficiency certificate (including the projected
    second-order test) returns ``global_certified``; otherwise the best
    feasible KKT point is ``local_only`` and everything else ``failed``.
    """
    config = config or BM2Config()
    prob = BM2Problem(instance)
    best_local: Optional[BM2State] = None
    last_state: Optional[BM2State] = None
    for attempt in range(config.restarts):
        rng = np.random.default_rng([seed, attempt])
        theta0 = rng.standard_normal(prob.dim)
        state = _attempt(prob, theta0, config, attempt)
        last_state = state
        res = kkt_residuals(state)
        converged = (
            res["feasibility"] <= config.feas_tol * prob.feas_scale
            and res["stationarity"] <= config.kkt_tol
            * (1.0 + float(np.max(state.multipliers, initial=0.0))))
        if not converged:
            continue
        ok, blocks = certify_global(BM2Result(
            state=state, status="candidate", attempts_run=attempt + 1,
            ball_scale=prob.ball_scale), kkt_tol=config.kkt_tol,
            v_zero_tol=config.v_zero_tol)
        if ok:
            # report the forward-polished v = 0 point the certificate verified
            chain = [state.u[0].copy()]
            for W, b in prob.layers:
                chain.append(np.maximum(0.0, W @ chain[-1] + b))
            proj = _make_state(prob, prob.pack(
                chain, [np.zeros_like(vk) for vk in state.v]),
                state.multipliers, state.sigma, attempt, state.iterations)
            if _second_order_ok(proj, config.second_order_tol):
                return BM2Result(state=proj, status="global_certified",
                                 recovered_rank1=blocks,
                                 attempts_run=attempt + 1,
                                 ball_scale=prob.ball_scale)
        if best_local is None or state.objective < best_local.objective:
            best_local = state
    if best_local is not None:
        return BM2Result(state=best_local, status="local_only",
                         attempts_run=config.restarts,
                         ball_scale=prob.ball_scale)
    return BM2Result(state=last_state, status="failed",
                     attempts_run=config.restarts, ball_scale=prob.ball_scale)
