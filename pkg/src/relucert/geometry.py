"""Closed-form projection geometry for relaxed ReLU caps.

One relaxed ReLU constrains its Gram vectors to a spherical cap: the output
vector z must satisfy ``<e,z> >= max(0, <e,x>)`` and ``||z||^2 <= <z, x>``,
a ball of radius ``||x||/2`` around ``x/2`` cut by a plane. The distance from
an axis target ``z_hat * e`` to that cap has the two-branch closed form
implemented by :func:`spherical_cap_distance`. Its sublevel set in x-space is
a hyperboloidal cap, handled by :func:`cap_to_quadratic`,
:func:`project_hyperbola_general` (the S-procedure dual) and
:func:`project_cap_axial`. :func:`multi_cap_condition` is the sufficient
axial-projection condition for several caps at once.

All cap operations summarize vectors by their axis coordinate and total norm;
the quotient argument behind the reduction makes the ambient dimension
irrelevant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InfeasibleTargetError

__all__ = [
    "CapDistanceResult",
    "CapQuadratic",
    "Rank1Update",
    "HyperbolaProjection",
    "AxialProjection",
    "MultiCapCondition",
    "spherical_cap_distance",
    "cap_to_quadratic",
    "rank1_update_min",
    "project_hyperbola_general",
    "project_cap_axial",
    "multi_cap_condition",
]


@dataclass(frozen=True)
class CapDistanceResult:
    """Distance from an axis target to a spherical cap.

    ``active_branch`` records which max-argument attained the value; ties go
    to ``"plane"``. Downstream logic never depends on the tag.
    """

    phi: float
    active_branch: str  # "plane" | "hyperboloid"


def spherical_cap_distance(axis: float, norm: float, z_hat: float) -> CapDistanceResult:
    """Distance from ``z_hat * e`` to the cap cut from the ball around x/2.

    The cap is summarized by ``axis = <e,x>`` and ``norm = ||x||``; the value
    is ``max(max(0,axis) - z_hat, ||z_hat e - x/2|| - ||x/2||)`` with the
    middle norm expanded to ``sqrt(z_hat^2 - z_hat*axis + norm^2/4)``.
    """
    if norm < abs(axis) * (1 - 1e-12) - 1e-12:
        raise ValueError(f"inconsistent summary statistics: norm {norm} < |axis| {abs(axis)}")
    plane = max(0.0, axis) - z_hat
    radicand = z_hat * z_hat - z_hat * axis + 0.25 * norm * norm
    hyper = math.sqrt(max(radicand, 0.0)) - 0.5 * norm
    if plane >= hyper:
        return CapDistanceResult(phi=plane, active_branch="plane")
    return CapDistanceResult(phi=hyper, active_branch="hyperboloid")


def _cap_distance_conditional(axis: float, norm: float, z_hat: float) -> float:
    """Single-branch conditional form of the cap distance.

    Exists to check the branchless max against the case split: the branches
    cross exactly once, at ``z_crit = p(p+norm)/(2p+norm-axis)`` with
    ``p = max(0, axis)``, and the plane branch rules at or below the crossing.
    """
    p = max(0.0, axis)
    denom = 2.0 * p + norm - axis
    z_crit = 0.0 if denom == 0.0 else p * (p + norm) / denom
    if z_hat <= z_crit:
        return p - z_hat
    radicand = z_hat * z_hat - z_hat * axis + 0.25 * norm * norm
    return math.sqrt(max(radicand, 0.0)) - 0.5 * norm


@dataclass(frozen=True)
class CapQuadratic:
    """The x-sublevel set {x : cap distance <= rho} in quadratic normal form.

    ``kind == "hyperbola"``: the set is
    ``(u - c_focus)^2/a^2 - v^2/b_semi^2 <= 1`` with ``u <= u_cut``,
    a two-sheet-hyperboloid cap with semi-major axis a, semi-minor b_semi and
    focus-like center c_focus on the axis. ``kind == "halfspace"``: the set
    degenerates to ``u <= u_cut``. ``kind == "empty"``: no feasible x at all.
    """

    kind: str  # "hyperbola" | "halfspace" | "empty"
    a: Optional[float] = None
    b_semi: Optional[float] = None
    c_focus: Optional[float] = None
    u_cut: Optional[float] = None


def cap_to_quadratic(z_hat: float, rho: float) -> CapQuadratic:
    """Normal form of the radius-``rho`` hyperboloidal cap at target ``z_hat``."""
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if z_hat < -rho:
        return CapQuadratic(kind="empty")
    if abs(z_hat) <= rho:
        return CapQuadratic(kind="halfspace", u_cut=z_hat + rho)
    return CapQuadratic(
        kind="hyperbola",
        a=rho,
        b_semi=math.sqrt(z_hat * z_hat - rho * rho),
        c_focus=z_hat,
        u_cut=z_hat + rho,
    )


@dataclass(frozen=True)
class Rank1Update:
    u_star: np.ndarray
    residual: float
    value: float


def rank1_update_min(a: np.ndarray, b: float, x: np.ndarray, lam: float) -> Rank1Update:
    """Minimize ``||u - x||^2 + lam * (<a,u> - b)^2`` in closed form.

    Requires ``lam > -1/||a||^2`` so the objective stays convex. Returns the
    minimizer, the residual ``(<a,u*> - b)``, and the optimal value.
    """
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    sq = float(a @ a)
    if sq == 0.0:
        raise ValueError("a must be nonzero")
    if lam <= -1.0 / sq:
        raise ValueError(f"nonconvex subproblem: lam={lam} <= -1/||a||^2={-1.0 / sq}")
    denom = 1.0 + lam * sq
    r = (float(a @ x) - b) / denom
    return Rank1Update(u_star=x - lam * r * a, residual=r, value=lam * r * r * denom)


@dataclass(frozen=True)
class HyperbolaProjection:
    """Projection onto {(u, v) : (<a,u> - b)^2 - (<c,v> - d)^2 <= 1}.

    ``objective`` is the squared distance (the dual optimum; strong duality
    makes it the primal optimum too). When ``unique`` is false the dual sits
    on the boundary ``lambda = 1/||c||^2``: ``u_star`` is still the unique
    axial part, ``v_star`` is None, and ``v_norm`` reports the magnitude of
    the minimal-norm off-axis representative.
    """

    u_star: np.ndarray
    v_norm: float
    lambda_star: float
    unique: bool
    objective: float
    v_star: Optional[np.ndarray] = None


def project_hyperbola_general(a: np.ndarray, b: float, c: np.ndarray, d: float,
                              x: np.ndarray, y: np.ndarray) -> HyperbolaProjection:
    """S-procedure projection of the anchor ``(x, y)`` onto one hyperbola set.

    Maximizes the scalar dual
    ``g(lam) = lam * [A^2/(1+lam*alpha) - C^2/(1-lam*gamma) - 1]``
    over ``[0, 1/gamma]`` with ``A = <a,x> - b``, ``C = <c,y> - d``,
    ``alpha = ||a||^2``, ``gamma = ||c||^2``. The first-order condition is
    solved in closed form when C = 0 (quadratic in ``1 + lam*alpha``), else
    by safeguarded bisection on the strictly decreasing derivative.
    """
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    alpha = float(a @ a)
    gamma = float(c @ c)
    if alpha == 0.0 or gamma == 0.0:
        raise ValueError("a and c must be nonzero")
    A = float(a @ x) - b
    C = float(c @ y) - d

    if A * A - C * C <= 1.0:
        # anchor already inside the set: identity projection, no active dual
        return HyperbolaProjection(u_star=x.copy(), v_norm=float(np.linalg.norm(y)),
                                   lambda_star=0.0, unique=True, objective=0.0,
                                   v_star=y.copy())

    def dual(lam: float) -> float:
        # the C-term vanishes identically when C == 0 (also at lam = 1/gamma)
        off = 0.0 if C == 0.0 else C * C / (1.0 - lam * gamma)
        return lam * (A * A / (1.0 + lam * alpha) - off - 1.0)

    if C == 0.0:
        lam = (abs(A) - 1.0) / alpha  # positive here since A^2 > 1
        if lam < 1.0 / gamma:
            lam_star, unique = lam, True
        else:
            lam_star, unique = 1.0 / gamma, False
    else:
        # g'(lam) = A^2/(1+lam*alpha)^2 - C^2/(1-lam*gamma)^2 - 1, strictly
        # decreasing from g'(0) = A^2 - C^2 - 1 > 0 to -inf at 1/gamma.
        def dg(lam: float) -> float:
            return (A * A / (1.0 + lam * alpha) ** 2
                    - C * C / (1.0 - lam * gamma) ** 2 - 1.0)

        hi = 1.0 / gamma
        eps = 0.5
        while dg((1.0 - eps) / gamma) > 0.0:
            eps *= 0.5
        lo, hi = 0.0, (1.0 - eps) / gamma
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if dg(mid) > 0.0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-12 * max(1.0, hi):
                break
        lam_star, unique = 0.5 * (lo + hi), True

    u_star = x - lam_star * a * A / (1.0 + lam_star * alpha)
    if unique:
        v_star = y + lam_star * c * C / (1.0 - lam_star * gamma) if lam_star < 1.0 / gamma else y.copy()
        v_norm = float(np.linalg.norm(v_star))
    else:
        # boundary multiplier: off-axis magnitude comes from the active
        # constraint, the sign of the representative is not determined
        Au = float(a @ u_star) - b
        q2 = max(Au * Au - 1.0, 0.0)
        q = math.sqrt(q2)
        cand = [y + s * q * c / gamma for s in (+1.0, -1.0)]
        v_norm = float(min(np.linalg.norm(v) for v in cand))
        v_star = None
    return HyperbolaProjection(u_star=u_star, v_norm=v_norm, lambda_star=lam_star,
                               unique=unique, objective=dual(lam_star), v_star=v_star)


@dataclass(frozen=True)
class AxialProjection:
    """Axial projection onto a (possibly degenerate) hyperboloidal cap.

    ``x_star_axis`` is the axis coordinate of the nearest cap point. When
    ``collinear`` is false the nearest point sits off the axis (and is not
    unique, by symmetry); ``distance`` is still the true distance.
    """

    x_star_axis: float
    collinear: bool
    distance: float


def project_cap_axial(z_hat: float, rho: float, x_hat: float) -> AxialProjection:
    """Project the axis anchor ``x_hat * e`` onto the radius-``rho`` cap.

    Three regimes: an empty cap raises :class:`InfeasibleTargetError`; a
    degenerate cap clamps to the halfspace ``u <= z_hat + rho``; a
    nondegenerate cap is axial exactly when ``(z_hat - x_hat) < z_hat^2/rho``
    (boundary equality reports ``collinear=False``, the projection there is
    nonunique) and otherwise hands off to the hyperbola dual.
    """
    quad = cap_to_quadratic(z_hat, rho)
    if quad.kind == "empty":
        raise InfeasibleTargetError(
            f"target z_hat={z_hat} below -rho={-rho}: the cap is empty")
    if quad.kind == "halfspace":
        x_star = min(z_hat + rho, x_hat)
        return AxialProjection(x_star_axis=x_star, collinear=True,
                               distance=abs(x_star - x_hat))
    if z_hat - x_hat < z_hat * z_hat / rho:
        x_star = min(z_hat + rho, max(x_hat, z_hat - rho))
        return AxialProjection(x_star_axis=x_star, collinear=True,
                               distance=abs(x_star - x_hat))
    proj = project_hyperbola_general(
        a=np.array([1.0 / quad.a]), b=quad.c_focus / quad.a,
        c=np.array([1.0 / quad.b_semi]), d=0.0,
        x=np.array([x_hat]), y=np.array([0.0]))
    return AxialProjection(x_star_axis=float(proj.u_star[0]), collinear=False,
                           distance=math.sqrt(max(proj.objective, 0.0)))


@dataclass(frozen=True)
class MultiCapCondition:
    holds: bool
    margin: float


def multi_cap_condition(W: np.ndarray, x_hat: np.ndarray, z_hat: np.ndarray,
                        rho_vec: np.ndarray) -> MultiCapCondition:
    """Sufficient condition for simultaneous axial projection onto many caps.

    Evaluates
    ``rho_max ||W||^2 ||(WW^T)^-1 (W x_hat - z_hat)||_inf
    + rho_max^2 (1 + ||W||^2 ||(WW^T)^-1||_inf) < z_min^2``
    with the spectral norm for ||W||, max-absolute-entry for the vector norm
    and max-absolute-row-sum for the matrix norm. ``margin`` is RHS - LHS.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    x_hat = np.asarray(x_hat, dtype=float)
    z_hat = np.asarray(z_hat, dtype=float)
    rho_vec = np.asarray(rho_vec, dtype=float)
    if not np.all(rho_vec > 0):
        raise ValueError("every rho_i must be positive")
    if not np.all(z_hat > rho_vec):
        raise ValueError("need z_hat_i > rho_i for every cap (nondegenerate regime)")
    gram = W @ W.T
    try:
        inv = np.linalg.inv(gram)
    except np.linalg.LinAlgError as e:
        raise ValueError("rank-deficient layer: WW^T is singular") from e
    if not np.isfinite(inv).all() or np.linalg.cond(gram) > 1e14:
        raise ValueError("rank-deficient layer: WW^T is numerically singular")
    rho_max = float(np.max(rho_vec))
    z_min = float(np.min(z_hat))
    spec2 = float(np.linalg.norm(W, 2)) ** 2
    vec_inf = float(np.max(np.abs(inv @ (W @ x_hat - z_hat))))
    mat_inf = float(np.max(np.sum(np.abs(inv), axis=1)))
    lhs = rho_max * spec2 * vec_inf + rho_max**2 * (1.0 + spec2 * mat_inf)
    rhs = z_min * z_min
    return MultiCapCondition(holds=lhs < rhs, margin=rhs - lhs)
