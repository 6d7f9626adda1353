"""Conic program construction for the layerwise Gram relaxation.

The relaxation replaces each ReLU layer with a small PSD block
``G_k = [[1, x_k', x_{k+1}'], [x_k, X_k, Y_k], [x_{k+1}, Y_k', X_{k+1}]]``
carrying the first and second moments of consecutive activations, plus three
linear rows per neuron (nonnegativity, preactivation lower bound, and the
quadratic complementarity row) and equality rows that glue the overlap
``(x_{k+1}, X_{k+1})`` of consecutive blocks together. A Ball goal adds one
second-moment inequality on the last block; a Halfspace goal adds one linear
row. The objective is the squared input distance
``tr(X_0) - 2 <x_hat, x_0> + ||x_hat||^2``, whose constant term rides along
symbolically so the reported optimum is the squared lower bound itself.

Entry coordinates: a linear functional over the blocks is a dict mapping
``(block, i, j)`` with ``i <= j`` to a coefficient, meaning
``coeff * G_block[i, j]`` with the upper-triangle entry counted once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from ..network import Ball, CertInstance, Halfspace

__all__ = ["ConstraintRow", "ConicProgram", "build_relaxation", "svec_dim",
           "svec_coeffs", "mat_from_svec", "svec_of_matrix"]

Coeffs = Dict[Tuple[int, int, int], float]


@dataclass(frozen=True)
class ConstraintRow:
    coeffs: Coeffs
    sense: str  # "<=" | "=="
    rhs: float
    tag: str


@dataclass(frozen=True)
class ConicProgram:
    """One certification relaxation, ready for a conic solver.

    ``blocks`` lists PSD block orders. ``layer_dims`` is the activation
    dimension chain (n_0, ..., n_L) the blocks were cut from; ``monolithic``
    records whether everything lives in one block instead of one per layer.
    """

    blocks: Tuple[int, ...]
    rows: Tuple[ConstraintRow, ...]
    objective: Coeffs
    objective_constant: float
    instance: CertInstance
    layer_dims: Tuple[int, ...]
    monolithic: bool = False

    @property
    def num_inequalities(self) -> int:
        return sum(1 for r in self.rows if r.sense == "<=")


def _relu_rows(rows: List[ConstraintRow], blk: int, off_x: int, off_z: int,
               W: np.ndarray, b: np.ndarray, k: int) -> None:
    """The three relaxed rows for every neuron of layer k inside one block."""
    n_out, n_in = W.shape
    for i in range(n_out):
        zi = off_z + i
        rows.append(ConstraintRow(
            coeffs={(blk, 0, zi): -1.0}, sense="<=", rhs=0.0,
            tag=f"layer{k}.neuron{i}.nonneg"))
        lower: Coeffs = {(blk, 0, off_x + j): float(W[i, j])
                         for j in range(n_in) if W[i, j] != 0.0}
        lower[(blk, 0, zi)] = lower.get((blk, 0, zi), 0.0) - 1.0
        rows.append(ConstraintRow(
            coeffs=lower, sense="<=", rhs=-float(b[i]),
            tag=f"layer{k}.neuron{i}.preact"))
        quad: Coeffs = {(blk, zi, zi): 1.0}
        for j in range(n_in):
            if W[i, j] != 0.0:
                a, bb = off_x + j, zi
                key = (blk, a, bb) if a <= bb else (blk, bb, a)
                quad[key] = quad.get(key, 0.0) - float(W[i, j])
        quad[(blk, 0, zi)] = quad.get((blk, 0, zi), 0.0) - float(b[i])
        rows.append(ConstraintRow(
            coeffs=quad, sense="<=", rhs=0.0,
            tag=f"layer{k}.neuron{i}.quad"))


def _goal_rows(rows: List[ConstraintRow], instance: CertInstance,
               blk: int, off_last: int) -> None:
    goal = instance.goal
    n_last = instance.net.activation_dim
    if isinstance(goal, Ball):
        z_hat, rho = goal.z_hat, goal.rho
        coeffs: Coeffs = {}
        for i in range(n_last):
            coeffs[(blk, off_last + i, off_last + i)] = 1.0
            if z_hat[i] != 0.0:
                coeffs[(blk, 0, off_last + i)] = -2.0 * float(z_hat[i])
        rows.append(ConstraintRow(
            coeffs=coeffs, sense="<=",
            rhs=float(rho * rho - z_hat @ z_hat), tag="goal.ball"))
    elif isinstance(goal, Halfspace):
        coeffs = {(blk, 0, off_last + i): float(goal.w[i])
                  for i in range(n_last) if goal.w[i] != 0.0}
        rows.append(ConstraintRow(
            coeffs=coeffs, sense="<=", rhs=-goal.b, tag="goal.halfspace"))
    else:  # pragma: no cover - CertInstance validates the goal type
        raise TypeError(f"unsupported goal {type(goal)!r}")


def build_relaxation(instance: CertInstance, monolithic: bool = False) -> ConicProgram:
    """Assemble the Gram relaxation of a certification instance.

    One PSD block per layer (order ``1 + n_k + n_{k+1}``) with equality
    coupling on the shared overlap, or a single block over the whole
    activation chain when ``monolithic`` is set. The monolithic form is
    quadratically larger and exists to cross-check the split one.
    """
    net = instance.net
    dims = [net.input_dim] + [W.shape[0] for W, _ in net.layers]
    rows: List[ConstraintRow] = []

    if monolithic:
        order = 1 + sum(dims)
        offsets = []
        off = 1
        for n in dims:
            offsets.append(off)
            off += n
        for k, (W, b) in enumerate(net.layers):
            _relu_rows(rows, 0, offsets[k], offsets[k + 1], W, b, k)
        rows.append(ConstraintRow(coeffs={(0, 0, 0): 1.0}, sense="==",
                                  rhs=1.0, tag="block0.unit"))
        _goal_rows(rows, instance, 0, offsets[-1])
        obj: Coeffs = {}
        x_hat = instance.x_hat
        for j in range(dims[0]):
            obj[(0, offsets[0] + j, offsets[0] + j)] = 1.0
            if x_hat[j] != 0.0:
                obj[(0, 0, offsets[0] + j)] = -2.0 * float(x_hat[j])
        return ConicProgram(blocks=(order,), rows=tuple(rows), objective=obj,
                            objective_constant=float(x_hat @ x_hat),
                            instance=instance, layer_dims=tuple(dims),
                            monolithic=True)

    num_blocks = len(net.layers)
    orders = tuple(1 + dims[k] + dims[k + 1] for k in range(num_blocks))
    for k, (W, b) in enumerate(net.layers):
        _relu_rows(rows, k, 1, 1 + dims[k], W, b, k)
        rows.append(ConstraintRow(coeffs={(k, 0, 0): 1.0}, sense="==",
                                  rhs=1.0, tag=f"block{k}.unit"))
    # glue the overlap (x_{k+1}, X_{k+1}) between consecutive blocks
    for k in range(num_blocks - 1):
        n_in, n_mid = dims[k], dims[k + 1]
        for i in range(n_mid):
            rows.append(ConstraintRow(
                coeffs={(k, 0, 1 + n_in + i): 1.0, (k + 1, 0, 1 + i): -1.0},
                sense="==", rhs=0.0, tag=f"couple{k}.x{i}"))
            for i2 in range(i, n_mid):
                rows.append(ConstraintRow(
                    coeffs={(k, 1 + n_in + i, 1 + n_in + i2): 1.0,
                            (k + 1, 1 + i, 1 + i2): -1.0},
                    sense="==", rhs=0.0, tag=f"couple{k}.X{i}.{i2}"))
    _goal_rows(rows, instance, num_blocks - 1, 1 + dims[-2])
    obj = {}
    x_hat = instance.x_hat
    for j in range(dims[0]):
        obj[(0, 1 + j, 1 + j)] = 1.0
        if x_hat[j] != 0.0:
            obj[(0, 0, 1 + j)] = -2.0 * float(x_hat[j])
    return ConicProgram(blocks=orders, rows=tuple(rows), objective=obj,
                        objective_constant=float(x_hat @ x_hat),
                        instance=instance, layer_dims=tuple(dims))


# ---------------------------------------------------------------------------
# svec packing: upper triangle, row-major, off-diagonal entries times sqrt(2),
# so that <svec(C), svec(G)> = tr(CG) for symmetric C, G.

_SQRT2 = math.sqrt(2.0)


def svec_dim(n: int) -> int:
    return n * (n + 1) // 2


def _svec_index(n: int, i: int, j: int) -> int:
    # position of (i, j), i <= j, in the row-major upper triangle of order n
    return i * n - i * (i - 1) // 2 + (j - i)


def svec_coeffs(program: ConicProgram, coeffs: Coeffs) -> np.ndarray:
    """Pack an entrywise functional into the stacked svec coordinate vector."""
    offsets = np.concatenate(([0], np.cumsum([svec_dim(n) for n in program.blocks])))
    out = np.zeros(int(offsets[-1]))
    for (blk, i, j), c in coeffs.items():
        if i > j:
            i, j = j, i
        pos = int(offsets[blk]) + _svec_index(program.blocks[blk], i, j)
        out[pos] += c if i == j else c / _SQRT2
    return out


def svec_of_matrix(M: np.ndarray) -> np.ndarray:
    n = M.shape[0]
    out = np.empty(svec_dim(n))
    pos = 0
    for i in range(n):
        out[pos] = M[i, i]
        pos += 1
        if i + 1 < n:
            out[pos:pos + n - 1 - i] = _SQRT2 * M[i, i + 1:]
            pos += n - 1 - i
    return out


def mat_from_svec(v: np.ndarray, n: int) -> np.ndarray:
    M = np.empty((n, n))
    pos = 0
    for i in range(n):
        M[i, i] = v[pos]
        pos += 1
        if i + 1 < n:
            row = v[pos:pos + n - 1 - i] / _SQRT2
            M[i, i + 1:] = row
            M[i + 1:, i] = row
            pos += n - 1 - i
    return M
