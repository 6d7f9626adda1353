"""Tightness predicates and rank-1 diagnostics for relaxed ReLU certificates.

The closed-form predicates answer "is the relaxation exact here?" without
solving anything: :func:`neuron_tight` is exact for a single neuron,
:func:`layer_tight_sufficient` is a sufficient test for one layer, and
:func:`multilayer_trivial_tight` covers the zero-residual regime at any
depth. The diagnostic side (:func:`collinearity_report`,
:func:`propagate_collinearity_check`) inspects solved Gram blocks for the
numeric counterpart of the same property.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .geometry import project_cap_axial
from .network import Network, forward

__all__ = [
    "TightnessVerdict",
    "CollinearityReport",
    "neuron_tight",
    "layer_tight_sufficient",
    "multilayer_trivial_tight",
    "collinearity_report",
    "propagate_collinearity_check",
    "RANK1_EIGEN_RATIO",
    "COLLINEAR_RATIO_TOL",
]

# A Gram block counts as numerically rank-1 when lambda_1/lambda_2 exceeds
# this, strictly. Kept module-level so tests and the CLI quote one number.
RANK1_EIGEN_RATIO = 1e3

# A Gram column counts as collinear with the distinguished first row when
# |<e,v>|/||v|| >= 1 - COLLINEAR_RATIO_TOL.
COLLINEAR_RATIO_TOL = 1e-6


@dataclass(frozen=True)
class TightnessVerdict:
    """Outcome of a tightness test.

    ``status`` is one of ``tight``, ``loose``, ``unknown``. ``reason`` names
    the rule that decided (for non-tight outcomes, the rule that failed or
    the infeasibility). ``witness`` is an input-space attack candidate,
    present only when a closed form provides one.
    """

    status: str
    reason: str
    witness: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "reason": self.reason,
            "witness": None if self.witness is None else [float(v) for v in np.atleast_1d(self.witness)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def neuron_tight(x_hat: float, z_hat: float, rho: float) -> TightnessVerdict:
    """Exact tightness test for a single relaxed neuron.

    Tight iff the cap degenerates to a halfspace (rho >= |z_hat|, inclusive)
    or the axial-projection condition rho < z_hat / (1 - min(0, x_hat/z_hat))
    holds strictly in the nondegenerate regime. Targets with z_hat < -rho are
    unreachable even by the relaxation and report reason ``infeasible``.
    """
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if z_hat < -rho:
        return TightnessVerdict(status="unknown", reason="infeasible")
    if rho >= abs(z_hat):
        proj = project_cap_axial(z_hat, rho, x_hat)
        return TightnessVerdict(status="tight", reason="deg_halfspace",
                                witness=np.array([proj.x_star_axis]))
    # nondegenerate regime: z_hat > rho > 0 here
    if rho < z_hat / (1.0 - min(0.0, x_hat / z_hat)):
        proj = project_cap_axial(z_hat, rho, x_hat)
        return TightnessVerdict(status="tight", reason="nondeg_condition",
                                witness=np.array([proj.x_star_axis]))
    return TightnessVerdict(status="loose", reason="nondeg_condition")


def layer_tight_sufficient(W: np.ndarray, x_hat: np.ndarray, z_hat: np.ndarray,
                           rho: float, bias: Optional[np.ndarray] = None) -> TightnessVerdict:
    """Sufficient tightness test for one ReLU layer, ``unknown`` otherwise.

    Condition (i): the anchor's own image lands within rho of the target, so
    the zero attack is optimal. Condition (ii): small radius relative to the
    smallest target coordinate and a preactivation residual cap, with
    conditioning constant kappa = ||W||^2 ||(WW^T)^-1||_inf. Neither failing
    proves looseness, hence ``unknown``.
    """
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    W = np.atleast_2d(np.asarray(W, dtype=float))
    x_hat = np.asarray(x_hat, dtype=float)
    z_hat = np.asarray(z_hat, dtype=float)
    pre = W @ x_hat if bias is None else W @ x_hat + np.asarray(bias, dtype=float)
    if rho >= float(np.linalg.norm(np.maximum(pre, 0.0) - z_hat)):
        return TightnessVerdict(status="tight", reason="trivial_radius",
                                witness=x_hat.copy())
    z_min = float(np.min(z_hat))
    if z_min <= 0:
        return TightnessVerdict(status="unknown", reason="multi_cap_sufficient")
    gram = W @ W.T
    try:
        inv = np.linalg.inv(gram)
    except np.linalg.LinAlgError as e:
        raise ValueError("rank-deficient layer: WW^T is singular") from e
    if not np.isfinite(inv).all() or np.linalg.cond(gram) > 1e14:
        raise ValueError("rank-deficient layer: WW^T is numerically singular")
    kappa = float(np.linalg.norm(W, 2)) ** 2 * float(np.max(np.sum(np.abs(inv), axis=1)))
    radius_ok = rho < z_min / (2.0 * (1.0 + kappa))
    residual_ok = float(np.max(np.abs(pre - z_hat))) < z_min * z_min / (2.0 * rho * kappa)
    if radius_ok and residual_ok:
        return TightnessVerdict(status="tight", reason="multi_cap_sufficient")
    return TightnessVerdict(status="unknown", reason="multi_cap_sufficient")


def multilayer_trivial_tight(net: Network, x_hat: np.ndarray, z_hat: np.ndarray,
                             rho: float) -> TightnessVerdict:
    """Zero-residual tightness test at any depth.

    If the network's own activation at the anchor already lies within rho of
    the target, the anchor is an optimal attack and the relaxation is tight
    with lower bound zero. Says ``unknown`` otherwise.
    """
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    x_hat = np.asarray(x_hat, dtype=float)
    acts, _ = forward(net, x_hat)
    if rho >= float(np.linalg.norm(acts[-1] - np.asarray(z_hat, dtype=float))):
        return TightnessVerdict(status="tight", reason="trivial_radius",
                                witness=x_hat.copy())
    return TightnessVerdict(status="unknown", reason="trivial_radius")


@dataclass(frozen=True)
class CollinearityReport:
    """Per-block collinearity and spectrum diagnostics of Gram blocks.

    ``ratios[k][j]`` is |<e, v_j>|/||v_j|| for column j of block k (zero
    columns count as 1). ``collinear[k]`` says all columns of block k pass
    the collinearity tolerance, ``eigen_ratio[k]`` is lambda_1/lambda_2
    (inf when lambda_2 falls below 1e-12 * lambda_1), and ``rank1[k]``
    applies the strict 10^3 threshold.
    """

    ratios: List[np.ndarray] = field(default_factory=list)
    collinear: List[bool] = field(default_factory=list)
    eigen_ratio: List[float] = field(default_factory=list)
    rank1: List[bool] = field(default_factory=list)

    @property
    def min_eigen_ratio(self) -> float:
        return min(self.eigen_ratio) if self.eigen_ratio else math.inf

    @property
    def all_rank1(self) -> bool:
        return all(self.rank1)


def _column_ratios(G: np.ndarray) -> np.ndarray:
    e_norm = math.sqrt(max(G[0, 0], 0.0))
    ratios = np.empty(G.shape[0])
    for j in range(G.shape[0]):
        nrm = math.sqrt(max(G[j, j], 0.0)) * e_norm
        if nrm <= 1e-300:
            ratios[j] = 1.0
        else:
            ratios[j] = min(abs(G[0, j]) / nrm, 1.0)
    return ratios


def collinearity_report(gram_blocks: Sequence[np.ndarray], tol: float = 1e-7) -> CollinearityReport:
    """Diagnose each Gram block for rank-1 structure.

    Preconditions (violations raise): each block symmetric within tol, PSD
    within tol, and with unit top-left entry within sqrt-scaled tol.
    """
    ratios: List[np.ndarray] = []
    collinear: List[bool] = []
    eigen_ratio: List[float] = []
    rank1: List[bool] = []
    for k, block in enumerate(gram_blocks):
        G = np.asarray(block, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise ValueError(f"block {k} is not square")
        if float(np.max(np.abs(G - G.T))) > tol:
            raise ValueError(f"block {k} is not symmetric within {tol}")
        if abs(G[0, 0] - 1.0) > max(tol, 1e-6):
            raise ValueError(f"block {k} top-left entry {G[0, 0]} is not 1")
        evals = np.linalg.eigvalsh(0.5 * (G + G.T))
        lam_min = float(evals[0])
        if lam_min < -tol * max(1.0, float(evals[-1])):
            raise ValueError(f"block {k} is not PSD: smallest eigenvalue {lam_min}")
        lam1 = float(evals[-1])
        lam2 = float(evals[-2]) if G.shape[0] > 1 else 0.0
        if lam2 < 1e-12 * lam1:
            ratio = math.inf
        else:
            ratio = lam1 / lam2
        r = _column_ratios(G)
        ratios.append(r)
        collinear.append(bool(np.all(r >= 1.0 - COLLINEAR_RATIO_TOL)))
        eigen_ratio.append(ratio)
        rank1.append(ratio > RANK1_EIGEN_RATIO)
    return CollinearityReport(ratios=ratios, collinear=collinear,
                              eigen_ratio=eigen_ratio, rank1=rank1)


def propagate_collinearity_check(gram_blocks: Sequence[np.ndarray],
                                 layers: Sequence,
                                 tol: float = 1e-6) -> bool:
    """Check that collinearity propagates input-to-output through each block.

    Each block k covers one relaxed layer ``(W, b)``, indexed (e, x-part,
    z-part) with the x-part of width W.shape[1]. Blocks must satisfy the
    relaxed ReLU rows within tol; a violation is a precondition rejection
    (raise), never a ``False``. Returns True iff every block whose e-and-x
    columns are all collinear also has all z columns collinear.
    """
    if len(gram_blocks) != len(layers):
        raise ValueError(f"{len(gram_blocks)} blocks for {len(layers)} layers")
    for k, (block, (W, b)) in enumerate(zip(gram_blocks, layers)):
        G = np.asarray(block, dtype=float)
        W = np.atleast_2d(np.asarray(W, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        n_out, n_in = W.shape
        if G.shape[0] != 1 + n_in + n_out:
            raise ValueError(
                f"block {k} has order {G.shape[0]}, expected {1 + n_in + n_out}")
        x_sl = slice(1, 1 + n_in)
        scale = max(1.0, float(np.max(np.abs(G))))
        for i in range(n_out):
            zi = 1 + n_in + i
            if G[0, zi] < -tol * scale:
                raise ValueError(f"block {k} violates z >= 0 at neuron {i}")
            pre_i = float(W[i] @ G[0, x_sl]) + b[i]
            if G[0, zi] - pre_i < -tol * scale:
                raise ValueError(f"block {k} violates z >= Wx + b at neuron {i}")
            quad = G[zi, zi] - float(W[i] @ G[x_sl, zi]) - b[i] * G[0, zi]
            if quad > tol * scale:
                raise ValueError(
                    f"block {k} violates the quadratic row at neuron {i}: {quad}")
    for block, (W, _) in zip(gram_blocks, layers):
        G = np.asarray(block, dtype=float)
        n_in = np.atleast_2d(np.asarray(W)).shape[1]
        r = _column_ratios(G)
        inputs_collinear = bool(np.all(r[:1 + n_in] >= 1.0 - COLLINEAR_RATIO_TOL))
        outputs_collinear = bool(np.all(r[1 + n_in:] >= 1.0 - COLLINEAR_RATIO_TOL))
        if inputs_collinear and not outputs_collinear:
            return False
    return True
