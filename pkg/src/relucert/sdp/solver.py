"""Solve facade: standard-form conversion, diagnostics, candidate extraction.

``solve_sdp`` turns a :class:`~relucert.sdp.program.ConicProgram` into the
stacked standard form min <c,v>, Av = b, v in (PSD blocks x orthant), hands
it to an engine, and wraps the result with eigen diagnostics and an attack
candidate. The default engine is the interior-point one; pass
``method="projection"`` for the operator-splitting cross-check. Both are
deterministic, so ``seed`` is accepted for interface stability and unused.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ..errors import ExtractionError
from ..network import Ball, CertInstance, Halfspace, forward
from .cones import ConeLayout
from .interior_point import solve_standard_form
from .program import ConicProgram, build_relaxation, svec_coeffs
from .splitting import solve_splitting

__all__ = ["GramSolution", "Extraction", "ABound", "solve_sdp",
           "extract_candidate", "a_from_b_bound", "standard_form",
           "eigen_verdict"]

_EXTRACT_E_TOL = 1e-8
_FEAS_SLACK = 1e-9


def standard_form(program: ConicProgram):
    """(A, b, c, layout) with one slack orthant coordinate per inequality.

    Each row is scaled by the joint norm of its coefficients and rhs. Goal
    rows on small radii mix O(1) quadratic terms with rhs values of order
    ||z_hat||^2, and the unscaled system stalls the interior point's
    predictor steps well before convergence; equilibrating each row (slack
    column included) keeps the feasible set identical while restoring
    balanced step lengths.
    """
    layout = ConeLayout(psd_orders=program.blocks,
                        n_nonneg=program.num_inequalities)
    m = len(program.rows)
    N = layout.total_dim
    cone_dim = N - layout.n_nonneg
    A = np.zeros((m, N))
    b = np.empty(m)
    slack = 0
    for r, row in enumerate(program.rows):
        A[r, :cone_dim] = svec_coeffs(program, row.coeffs)[:cone_dim]
        b[r] = row.rhs
        if row.sense == "<=":
            A[r, cone_dim + slack] = 1.0
            slack += 1
        elif row.sense != "==":
            raise ValueError(f"row {r} has unknown sense {row.sense!r}")
        scale = float(np.hypot(np.linalg.norm(A[r, :cone_dim]), b[r]))
        if scale > 0.0:
            A[r] /= scale
            b[r] /= scale
    c = np.zeros(N)
    c[:cone_dim] = svec_coeffs(program, program.objective)[:cone_dim]
    return A, b, c, layout


@dataclass
class GramSolution:
    """A solved relaxation: blocks, objective, residuals, diagnostics.

    ``objective`` is the squared input-distance bound (constant term
    included); ``l_lb`` is its square root, clamped at zero. ``eigen_ratios``
    holds lambda_1/lambda_2 per block, with ``inf`` once lambda_2 drops below
    1e-12 * lambda_1. ``candidate`` is the extracted attack input when
    extraction succeeded.
    """

    blocks: List[np.ndarray]
    objective: float
    primal_residual: float
    dual_residual: float
    mu: float
    iterations: int
    status: str  # "solved" | "infeasible" | "unconverged"
    eigen_ratios: Tuple[float, ...]
    eigen_top: Tuple[Tuple[float, float], ...]
    method: str
    tol: float
    program: ConicProgram
    candidate: Optional[np.ndarray] = None

    @property
    def l_lb(self) -> float:
        if not math.isfinite(self.objective):
            return math.nan
        return math.sqrt(max(self.objective, 0.0))

    @property
    def min_eigen_ratio(self) -> float:
        return min(self.eigen_ratios) if self.eigen_ratios else math.inf

    def to_dict(self) -> dict:
        def num(x: float):
            return None if not math.isfinite(x) else x
        return {
            "status": self.status,
            "objective": num(self.objective),
            "l_lb": num(self.l_lb),
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "mu": self.mu,
            "iterations": self.iterations,
            "method": self.method,
            "tol": self.tol,
            "eigen_ratios": ["inf" if math.isinf(r) else r for r in self.eigen_ratios],
            "candidate": None if self.candidate is None else [float(v) for v in self.candidate],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def dump_dense(self) -> str:
        """Debug dump: ``block <k> <n>`` header then n rows of n %.17g entries."""
        lines = []
        for k, G in enumerate(self.blocks):
            n = G.shape[0]
            lines.append(f"block {k} {n}")
            for i in range(n):
                lines.append(" ".join(format(float(x), ".17g") for x in G[i]))
        return "\n".join(lines) + "\n"


def _eigen_diagnostics(blocks: List[np.ndarray]):
    ratios = []
    tops = []
    for G in blocks:
        evals = np.linalg.eigvalsh(0.5 * (G + G.T))
        lam1 = float(evals[-1])
        lam2 = float(evals[-2]) if G.shape[0] > 1 else 0.0
        tops.append((lam1, lam2))
        if lam2 < 1e-12 * max(lam1, 0.0):
            ratios.append(math.inf)
        elif lam2 <= 0.0:
            ratios.append(math.inf)
        else:
            ratios.append(lam1 / lam2)
    return tuple(ratios), tuple(tops)


def solve_sdp(program: ConicProgram, tol: float = 1e-8,
              max_iter: Optional[int] = None, seed: Optional[int] = None,
              method: str = "interior_point") -> GramSolution:
    """Solve a relaxation and attach diagnostics.

    ``seed`` is part of the stable interface but both engines are
    deterministic, so it has no effect. An exhausted iteration budget comes
    back as status ``unconverged`` with residuals, never an exception.
    """
    del seed
    A, b, c, layout = standard_form(program)
    if method == "interior_point":
        res = solve_standard_form(A, b, c, layout, tol=tol,
                                  max_iter=200 if max_iter is None else max_iter)
        v = res.v
        sol = GramSolution(
            blocks=[0.5 * (G + G.T) for G in layout.matrices(v)],
            objective=res.primal_objective + program.objective_constant,
            primal_residual=res.primal_residual,
            dual_residual=res.dual_residual,
            mu=res.mu, iterations=res.iterations, status=res.status,
            eigen_ratios=(), eigen_top=(), method=method, tol=tol,
            program=program)
    elif method == "projection":
        res = solve_splitting(A, b, c, layout, tol=max(tol, 1e-7),
                              max_iter=200_000 if max_iter is None else max_iter)
        sol = GramSolution(
            blocks=[0.5 * (G + G.T) for G in layout.matrices(res.v)],
            objective=res.objective + program.objective_constant,
            primal_residual=res.primal_residual,
            dual_residual=res.split_residual,
            mu=res.split_residual, iterations=res.iterations,
            status=res.status, eigen_ratios=(), eigen_top=(),
            method=method, tol=tol, program=program)
    else:
        raise ValueError(f"unknown method {method!r}")

    if sol.status == "infeasible":
        sol.objective = math.nan
    ratios, tops = _eigen_diagnostics(sol.blocks)
    sol.eigen_ratios = ratios
    sol.eigen_top = tops
    if sol.status in ("solved", "unconverged"):
        # extraction is still meaningful on a near-miss iterate; the
        # Extraction's feasible/gap fields carry the honest assessment
        try:
            sol.candidate = extract_candidate(sol).x
        except ExtractionError:
            sol.candidate = None
    return sol


def eigen_verdict(solution: GramSolution, feas_tol: float = 1e-6,
                  ratio: float = 1e3) -> str:
    """Numeric tightness verdict from a solve's eigen diagnostics.

    ``infeasible`` passes through. A residual-certified iterate (primal and
    dual residuals below ``feas_tol``, converged or not: interior-point
    iterates routinely bottom out a shade above a deep mu target while being
    optimal to many digits) gets the strict lambda_1/lambda_2 test:
    ``tight`` above ``ratio`` on every block, else ``loose``. Anything
    worse is ``indeterminate``.
    """
    if solution.status == "infeasible":
        return "infeasible"
    if (solution.primal_residual <= feas_tol
            and solution.dual_residual <= feas_tol):
        return "tight" if solution.min_eigen_ratio > ratio else "loose"
    return "indeterminate"


@dataclass(frozen=True)
class Extraction:
    x: np.ndarray
    feasible: bool
    gap: float


def extract_candidate(solution: GramSolution) -> Extraction:
    """Rank-1 readout of the solved blocks.

    Scales the top eigenvector of each block so its distinguished first
    coordinate is 1 and reads the attack input off block 0. ``feasible`` is
    an exact forward-propagation check of the instance goal; ``gap`` is
    ``||x - x_hat|| - L_lb`` and sits above ``-tol`` whenever the solve
    converged (the candidate can never beat the lower bound).
    """
    program = solution.program
    instance = program.instance
    scaled: List[np.ndarray] = []
    for k, G in enumerate(solution.blocks):
        evals, evecs = np.linalg.eigh(0.5 * (G + G.T))
        g = evecs[:, -1] * math.sqrt(max(float(evals[-1]), 0.0))
        if abs(g[0]) < _EXTRACT_E_TOL:
            raise ExtractionError(
                f"block {k}: top eigenvector has near-zero e-coordinate {g[0]:.3e}")
        scaled.append(g / g[0])
    n0 = program.layer_dims[0]
    x = scaled[0][1:1 + n0].copy()
    acts, _ = forward(instance.net, x)
    goal = instance.goal
    if isinstance(goal, Ball):
        feasible = float(np.linalg.norm(acts[-1] - goal.z_hat)) <= goal.rho + _FEAS_SLACK
    else:
        feasible = float(goal.w @ acts[-1]) + goal.b <= _FEAS_SLACK
    gap = float(np.linalg.norm(x - instance.x_hat)) - solution.l_lb
    return Extraction(x=x, feasible=feasible, gap=gap)


@dataclass(frozen=True)
class ABound:
    """Halfspace-problem upper bound recovered from a ball solve."""

    d_ub: Optional[float]
    tight: bool
    status: str  # "bounded" | "no_bound" | "infeasible"
    witness: Optional[np.ndarray] = None


def a_from_b_bound(solution: GramSolution) -> ABound:
    """Upper bound on the halfspace attack distance from a ball-goal solve.

    The ball must have been built from a halfspace (tangent conversion), so
    ball-feasible points are halfspace-feasible. A tight solve certifies
    ``d_ub = L_lb`` through its witness; a loose solve still yields the
    extracted attack's own distance when that attack crosses the boundary;
    an infeasible ball radius yields no bound at all.
    """
    goal = solution.program.instance.goal
    if not isinstance(goal, Ball) or goal.source_halfspace is None:
        raise ValueError("a_from_b_bound needs a Ball goal built from a halfspace")
    if solution.status == "infeasible":
        return ABound(d_ub=None, tight=False, status="infeasible")
    try:
        ext = extract_candidate(solution)
    except ExtractionError:
        return ABound(d_ub=None, tight=False, status="no_bound")
    hs = goal.source_halfspace
    instance = solution.program.instance
    acts, _ = forward(instance.net, ext.x)
    if float(hs.w @ acts[-1]) + hs.b > _FEAS_SLACK:
        return ABound(d_ub=None, tight=False, status="no_bound")
    d = float(np.linalg.norm(ext.x - instance.x_hat))
    tight = abs(d - solution.l_lb) <= max(1e-7, 1e-6 * d)
    return ABound(d_ub=solution.l_lb if tight else d, tight=tight,
                  status="bounded", witness=ext.x)
