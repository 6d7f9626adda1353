"""Independent ground-truth engines.

Nothing in here shares code with the closed-form geometry or the SDP
machinery. The three engines are deliberately dumb and slow:

* :func:`brute_force_ball` grids the input box and refines by coordinate
  descent, for tiny instances only.
* :func:`numeric_cap_projection` runs quadratic-penalty descent on the raw
  constraint definition of a cap. It is the test oracle for the geometry
  module.
* :func:`pgd_attack` is a projected-gradient attack whose budget is bisected
  down to the smallest radius that still misclassifies, giving a feasible
  upper bound to sandwich the SDP lower bound.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .errors import OracleFailure
from .network import Ball, CertInstance, Halfspace, forward

__all__ = [
    "OracleResult",
    "SphericalCapSpec",
    "HyperboloidCapSpec",
    "brute_force_ball",
    "numeric_cap_projection",
    "pgd_attack",
]


@dataclass(frozen=True)
class OracleResult:
    """Outcome of a ground-truth computation.

    ``value`` is the achieved distance from the anchor, ``argmin`` the point
    achieving it (feasible within 1e-9 whenever ``status == "ok"``), and
    ``resolution`` the engine's final step/bracket size.
    """

    value: float
    argmin: Optional[np.ndarray]
    method: str  # grid_refine | penalty_descent | pgd
    resolution: float
    status: str = "ok"  # ok | infeasible | no_attack_found


@dataclass(frozen=True)
class SphericalCapSpec:
    """Cap {z : <e,z> >= max(0, axis), ||z||^2 <= <z, x>} described by the
    axis coordinate and norm of the cutting vector x."""

    axis: float
    norm: float

    def __post_init__(self):
        if self.norm < abs(self.axis) - 1e-12:
            raise ValueError("inconsistent summary statistics: need norm >= |axis|")


@dataclass(frozen=True)
class HyperboloidCapSpec:
    """Feasible x of one relaxed ReLU at target z_hat, radius rho:
    there must exist z with <e,z> >= max(0,<e,x>), ||z||^2 <= <z,x>,
    ||z - z_hat e|| <= rho."""

    z_hat: float
    rho: float

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")


CapSpec = Union[SphericalCapSpec, HyperboloidCapSpec]


# ---------------------------------------------------------------------------
# Penalty-descent cap projection.


def _penalty_solve(objective, constraints, x0, tol):
    """Minimize objective subject to g_i(x) <= 0 via an increasing quadratic
    penalty. ``objective`` and each constraint supply (value, gradient).

    Returns (x, max_violation) for the final penalty level.
    """
    x = np.asarray(x0, dtype=float)
    mu = 1e2
    polish_left = 2
    for _ in range(20):
        def fun(v, _mu=mu):
            f, g = objective(v)
            for con in constraints:
                ci, gi = con(v)
                if ci > 0:
                    f += _mu * ci * ci
                    g = g + (2.0 * _mu * ci) * gi
            return f, g

        res = minimize(fun, x, jac=True, method="L-BFGS-B",
                       options={"maxiter": 500, "ftol": 1e-18, "gtol": 1e-14})
        x = res.x
        viol = max((con(x)[0] for con in constraints), default=0.0)
        if viol <= tol:
            # keep tightening a little: degenerate caps have vanishing
            # constraint gradients and benefit from two extra rounds
            if polish_left == 0:
                return x, viol
            polish_left -= 1
            mu *= 100.0
        else:
            mu *= 10.0
    return x, max((con(x)[0] for con in constraints), default=0.0)


def _slsqp_polish(objective, constraints, x0, tol):
    """Last-mile polish of a penalty solution with the raw constraints.

    The quadratic penalty approaches a curved active set with an O(1/mu)
    tangential bias that can stall around 1e-5 on stiff cap rims; one
    Lagrange-Newton pass from the penalty point closes the remaining gap.
    Constraints keep the g(x) <= 0 convention.
    """
    cons = [{"type": "ineq",
             "fun": (lambda v, _c=c: -_c(v)[0]),
             "jac": (lambda v, _c=c: -_c(v)[1])} for c in constraints]
    res = minimize(lambda v: objective(v)[0], np.asarray(x0, dtype=float),
                   jac=lambda v: objective(v)[1], method="SLSQP",
                   constraints=cons, options={"maxiter": 300, "ftol": 1e-16})
    viol = max((con(res.x)[0] for con in constraints), default=0.0)
    return res.x, viol


def numeric_cap_projection(cap: CapSpec, anchor: float, tol: float = 1e-8) -> float:
    """Distance from ``anchor * e`` to the cap, by quadratic-penalty descent.

    This is the geometry module's test oracle; it works from the raw
    constraint sets and never touches the closed forms under test.
    """
    if isinstance(cap, SphericalCapSpec):
        return _project_spherical(cap, anchor, tol)
    if isinstance(cap, HyperboloidCapSpec):
        return _project_hyperboloidal(cap, anchor, tol)
    raise TypeError(f"unknown cap spec {type(cap).__name__}")


def _project_spherical(cap: SphericalCapSpec, z_target: float, tol: float) -> float:
    s, r = cap.axis, cap.norm
    t = np.sqrt(max(r * r - s * s, 0.0))
    x = np.array([s, t, 0.0])
    e = np.array([1.0, 0.0, 0.0])
    anchor = z_target * e
    plane = max(0.0, s)

    def objective(z):
        d = z - anchor
        return d @ d, 2.0 * d

    def g_plane(z):
        return plane - z[0], np.array([-1.0, 0.0, 0.0])

    def g_ball(z):
        return z @ z - z @ x, 2.0 * z - x

    # The cap is convex (halfspace cut of a ball); one interior-ish start
    # plus the anchor suffice.
    best = np.inf
    for z0 in (x / 2.0 + 1e-3 * e, anchor.copy(), x.copy()):
        z, viol = _penalty_solve(objective, (g_plane, g_ball), z0, tol)
        if viol <= tol:
            best = min(best, float(np.linalg.norm(z - anchor)))
        z, viol = _slsqp_polish(objective, (g_plane, g_ball), z, tol)
        if viol <= tol:
            best = min(best, float(np.linalg.norm(z - anchor)))
    if not np.isfinite(best):
        raise OracleFailure("spherical-cap penalty descent did not reach feasibility")
    return best


def _project_hyperboloidal(cap: HyperboloidCapSpec, x_target: float, tol: float) -> float:
    zh, rho = cap.z_hat, cap.rho
    if zh < -rho:
        raise OracleFailure("empty cap: z_hat < -rho has no feasible point")

    # Joint variables q = (x_u, x_v, z_u, z_v) in a 2-D ambient space; an
    # optimal pair always lives in a common plane through the axis because
    # aligning off-axis parts only enlarges <z, x>.
    anchor = np.array([x_target, 0.0])

    def objective(q):
        d = q[:2] - anchor
        g = np.zeros(4)
        g[:2] = 2.0 * d
        return d @ d, g

    def g_nonneg(q):
        g = np.zeros(4)
        g[2] = -1.0
        return -q[2], g

    def g_plane(q):
        g = np.zeros(4)
        g[0], g[2] = 1.0, -1.0
        return q[0] - q[2], g

    def g_gram(q):
        x, z = q[:2], q[2:]
        g = np.zeros(4)
        g[:2] = -z
        g[2:] = 2.0 * z - x
        return z @ z - z @ x, g

    def g_ball(q):
        z = q[2:]
        d = z - np.array([zh, 0.0])
        g = np.zeros(4)
        g[2:] = 2.0 * d
        return d @ d - rho * rho, g

    cons = (g_nonneg, g_plane, g_gram, g_ball)
    z_feas = max(zh, 0.0) if abs(zh) <= rho else zh  # a point in the target ball
    starts = [
        np.array([x_target, 0.0, z_feas, 0.0]),
        np.array([z_feas, 0.0, z_feas, 0.0]),
        np.array([z_feas, 1.0, z_feas, 0.5]),
        np.array([z_feas, -1.0, z_feas, -0.5]),
        np.array([max(x_target, 0.0), 0.5, max(z_feas, 0.5), 0.5]),
    ]
    best = np.inf
    for q0 in starts:
        q, viol = _penalty_solve(objective, cons, q0, tol)
        if viol <= tol:
            best = min(best, float(np.linalg.norm(q[:2] - anchor)))
        q, viol = _slsqp_polish(objective, cons, q, tol)
        if viol <= tol:
            best = min(best, float(np.linalg.norm(q[:2] - anchor)))
    if not np.isfinite(best):
        raise OracleFailure("hyperboloidal-cap penalty descent did not reach feasibility")
    return best


# ---------------------------------------------------------------------------
# Brute force for ball instances.


def _forward_batch(net, X: np.ndarray) -> np.ndarray:
    H = X
    for W, b in net.layers:
        H = np.maximum(0.0, H @ W.T + b)
    return H


def brute_force_ball(instance: CertInstance, grid_points_per_dim: int = 41,
                     refine_tol: float = 1e-9) -> OracleResult:
    """Grid search plus coordinate-descent refinement for tiny ball instances.

    Restricted to input dimension <= 3 and layer widths <= 4. The search box
    is x_hat +/- 3(rho + ||z_hat|| + ||x_hat||) per coordinate, wide enough
    that any optimum is interior (asserted at runtime).
    """
    goal = instance.goal
    if not isinstance(goal, Ball):
        raise ValueError("brute_force_ball needs a ball goal")
    net, x_hat = instance.net, instance.x_hat
    n0 = net.input_dim
    if n0 > 3:
        raise ValueError(f"brute force limited to 3 input dims, got {n0}")
    if max(net.dims[:-1]) > 4:
        raise ValueError("brute force limited to layer widths <= 4")
    z_hat, rho = goal.z_hat, goal.rho

    half = 3.0 * (rho + np.linalg.norm(z_hat) + np.linalg.norm(x_hat))
    axes = [np.linspace(c - half, c + half, grid_points_per_dim) for c in x_hat]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    out = _forward_batch(net, pts)
    resid = np.linalg.norm(out - z_hat, axis=1)
    feas = resid <= rho

    if feas.any():
        dists = np.linalg.norm(pts - x_hat, axis=1)
        dists[~feas] = np.inf
        # first flat index = lexicographically smallest grid coordinates
        start = pts[int(np.argmin(dists))]
        method = "grid_refine"
    else:
        start = _descend_to_feasibility(net, x_hat, z_hat, rho)
        if start is None:
            return OracleResult(value=float("inf"), argmin=None, method="penalty_descent",
                                resolution=float("nan"), status="infeasible")
        method = "penalty_descent"

    step0 = 2.0 * half / (grid_points_per_dim - 1)
    x_best = _coordinate_refine(net, x_hat, z_hat, rho, start, step0, refine_tol)
    x_best = _polish_feasibility(net, x_hat, z_hat, rho, x_best, start)

    if not np.all(np.abs(x_best - x_hat) < half - step0):
        # the reported point would be a box artifact, not a real optimum
        raise OracleFailure("optimum hit the search box; instance is not "
                            "brute-forceable at this box size")
    return OracleResult(value=float(np.linalg.norm(x_best - x_hat)), argmin=x_best,
                        method=method, resolution=refine_tol)


def _residual(net, x, z_hat) -> float:
    acts, _ = forward(net, x)
    return float(np.linalg.norm(acts[-1] - z_hat))


def _descend_to_feasibility(net, x_hat, z_hat, rho):
    """Try to find any feasible point by minimizing the target residual."""
    def fun(x):
        return _residual(net, x, z_hat) ** 2

    best, best_val = None, np.inf
    rng = np.random.default_rng(0)
    for x0 in [x_hat, np.zeros_like(x_hat)] + [x_hat + rng.standard_normal(x_hat.shape)
                                               for _ in range(4)]:
        res = minimize(fun, x0, method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
        if res.fun < best_val:
            best, best_val = res.x, res.fun
    if best is not None and np.sqrt(best_val) <= rho * (1 + 1e-9) + 1e-12:
        return best
    return None


def _coordinate_refine(net, x_hat, z_hat, rho, x0, step0, refine_tol):
    """Coordinate descent on distance + growing quadratic feasibility penalty."""
    x = np.array(x0, dtype=float)
    n = x.shape[0]
    for mu in (1e4, 1e6, 1e8, 1e10, 1e12):
        step = step0
        while step > refine_tol:
            # bounded sweeps per step level: solver jitter can yield
            # epsilon-size "improvements" forever, so progress must clear a
            # value-scaled threshold or the step shrinks
            for _ in range(40):
                moved = False
                for i in range(n):
                    def fun(t, i=i, mu=mu):
                        xt = x.copy()
                        xt[i] += t
                        v = max(0.0, _residual(net, xt, z_hat) - rho)
                        return float(np.linalg.norm(xt - x_hat)) + mu * v * v

                    base = fun(0.0)
                    res = minimize_scalar(fun, bounds=(-step, step), method="bounded",
                                          options={"xatol": 0.25 * refine_tol})
                    if res.fun < base - 1e-12 * (1.0 + abs(base)):
                        x[i] += res.x
                        moved = True
                if not moved:
                    break
            step *= 0.25
    return x


def _polish_feasibility(net, x_hat, z_hat, rho, x, feasible_ref):
    """Pull a marginally infeasible refined point back inside the ball target."""
    if _residual(net, x, z_hat) <= rho + 1e-9:
        return x
    lo, hi = 0.0, 1.0  # x at 0, feasible_ref at 1
    if _residual(net, feasible_ref, z_hat) > rho:
        return x  # nothing to pull toward; report as is
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        xm = x + mid * (feasible_ref - x)
        if _residual(net, xm, z_hat) <= rho:
            hi = mid
        else:
            lo = mid
    return x + hi * (feasible_ref - x)


# ---------------------------------------------------------------------------
# Projected gradient attack.


def _margin_and_grad(net, w, b, x):
    """h(x) = <w, f(x)> + b and its gradient, using the 0-subgradient at kinks."""
    pre_acts = []
    h = x
    for W, bb in net.layers:
        pre = W @ h + bb
        pre_acts.append(pre)
        h = np.maximum(0.0, pre)
    val = float(w @ h + b)
    g = w.copy()
    for (W, _), pre in zip(reversed(net.layers), reversed(pre_acts)):
        g = W.T @ (g * (pre > 0))
    return val, g


def _margin_batch(net, w, b, X):
    return _forward_batch(net, X) @ w + b


def pgd_attack(instance: CertInstance, steps: int = 300, step_size: float = 0.05,
               seed: int = 0) -> OracleResult:
    """Smallest-radius projected gradient attack for a halfspace goal.

    Runs PGD on the margin inside a distance budget, doubles the budget until
    the attack lands, then bisects it down (12 rounds) and shrink-polishes
    along the segment back to the anchor. The returned value is a feasible
    upper bound on the true robustness margin, or ``no_attack_found``.
    """
    goal = instance.goal
    if not isinstance(goal, Halfspace):
        raise ValueError("pgd_attack needs a halfspace goal")
    net, x_hat = instance.net, instance.x_hat
    w, b = goal.w, goal.b

    h0, _ = _margin_and_grad(net, w, b, x_hat)
    if h0 <= 0:
        return OracleResult(value=0.0, argmin=x_hat.copy(), method="pgd", resolution=0.0)
    if steps <= 0:
        return OracleResult(value=float("inf"), argmin=None, method="pgd",
                            resolution=float("nan"), status="no_attack_found")

    def run_pgd(radius, round_idx):
        """Best attack within ||x - x_hat|| <= radius; None if never succeeds."""
        found = None
        for start_idx in range(3):
            if start_idx == 0:
                x = x_hat.copy()
            else:
                rng = np.random.default_rng([seed, round_idx, start_idx])
                d = rng.standard_normal(x_hat.shape)
                d /= max(np.linalg.norm(d), 1e-12)
                x = x_hat + radius * d
            eta = step_size * radius
            for _ in range(steps):
                val, g = _margin_and_grad(net, w, b, x)
                if val <= 0:
                    break
                gn = np.linalg.norm(g)
                x = x - eta * (g / gn if gn > 1e-14 else 0.0)
                off = x - x_hat
                dist = np.linalg.norm(off)
                if dist > radius:
                    x = x_hat + off * (radius / dist)
            val, _ = _margin_and_grad(net, w, b, x)
            if val <= 0 and (found is None or np.linalg.norm(x - x_hat) < found[0]):
                found = (float(np.linalg.norm(x - x_hat)), x)
        return found

    radius = 1.0 + float(np.linalg.norm(x_hat))
    hit = None
    for round_idx in range(16):
        hit = run_pgd(radius, round_idx)
        if hit is not None:
            break
        radius *= 2.0
    if hit is None:
        return OracleResult(value=float("inf"), argmin=None, method="pgd",
                            resolution=float("nan"), status="no_attack_found")

    best_d, best_x = hit
    lo, hi = 0.0, best_d
    for round_idx in range(16, 16 + 12):
        mid = 0.5 * (lo + hi)
        if mid <= 0:
            break
        got = run_pgd(mid, round_idx)
        if got is not None and got[0] < best_d:
            best_d, best_x = got
            hi = got[0]
        else:
            lo = mid

    # Shrink along the segment anchor -> attack: scan for the first feasible
    # parameter, then bisect the sign change.
    ts = np.linspace(0.0, 1.0, 1025)
    seg = x_hat + ts[:, None] * (best_x - x_hat)
    margins = _margin_batch(net, w, b, seg)
    idx = int(np.argmax(margins <= 0))
    if margins[idx] <= 0 and idx > 0:
        lo_t, hi_t = ts[idx - 1], ts[idx]
        for _ in range(60):
            mid_t = 0.5 * (lo_t + hi_t)
            if _margin_batch(net, w, b, (x_hat + mid_t * (best_x - x_hat))[None])[0] <= 0:
                hi_t = mid_t
            else:
                lo_t = mid_t
        cand = x_hat + hi_t * (best_x - x_hat)
        cd = float(np.linalg.norm(cand - x_hat))
        if cd < best_d:
            best_d, best_x = cd, cand

    return OracleResult(value=best_d, argmin=best_x, method="pgd",
                        resolution=(hi - lo) if hi > lo else 0.0)
