"""Shared cone bookkeeping for the two conic engines.

The solver variable is a stacked vector: one svec segment per PSD block
followed by a nonnegative-orthant segment for inequality slacks. Both engines
need the same segment arithmetic, eigenvalue probes, and PSD projections, so
it lives here once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .program import mat_from_svec, svec_dim, svec_of_matrix

__all__ = ["ConeLayout"]


@dataclass(frozen=True)
class ConeLayout:
    psd_orders: Tuple[int, ...]
    n_nonneg: int

    @property
    def psd_dims(self) -> Tuple[int, ...]:
        return tuple(svec_dim(n) for n in self.psd_orders)

    @property
    def total_dim(self) -> int:
        return sum(self.psd_dims) + self.n_nonneg

    @property
    def degree(self) -> int:
        """Barrier degree: sum of block orders plus the orthant size."""
        return sum(self.psd_orders) + self.n_nonneg

    def segments(self) -> List[Tuple[int, int]]:
        """(start, stop) of each PSD segment, in block order."""
        out = []
        pos = 0
        for d in self.psd_dims:
            out.append((pos, pos + d))
            pos += d
        return out

    def orthant(self, v: np.ndarray) -> np.ndarray:
        return v[self.total_dim - self.n_nonneg:]

    def matrices(self, v: np.ndarray) -> List[np.ndarray]:
        return [mat_from_svec(v[a:b], n)
                for (a, b), n in zip(self.segments(), self.psd_orders)]

    def identity(self) -> np.ndarray:
        v = np.zeros(self.total_dim)
        for (a, _), n in zip(self.segments(), self.psd_orders):
            pos = a
            for i in range(n):
                v[pos] = 1.0
                pos += n - i
        v[self.total_dim - self.n_nonneg:] = 1.0
        return v

    def project(self, v: np.ndarray) -> np.ndarray:
        """Euclidean projection onto the cone (eigenvalue clipping)."""
        out = v.copy()
        for (a, b), n in zip(self.segments(), self.psd_orders):
            M = mat_from_svec(v[a:b], n)
            evals, evecs = np.linalg.eigh(M)
            evals = np.maximum(evals, 0.0)
            out[a:b] = svec_of_matrix((evecs * evals) @ evecs.T)
        tail = self.total_dim - self.n_nonneg
        np.maximum(out[tail:], 0.0, out=out[tail:])
        return out

    def min_eig(self, v: np.ndarray) -> float:
        """Smallest eigenvalue across PSD blocks and orthant entries."""
        worst = np.inf
        for (a, b), n in zip(self.segments(), self.psd_orders):
            evals = np.linalg.eigvalsh(mat_from_svec(v[a:b], n))
            worst = min(worst, float(evals[0]))
        if self.n_nonneg:
            worst = min(worst, float(np.min(self.orthant(v))))
        return worst

    def max_step(self, v: np.ndarray, dv: np.ndarray) -> float:
        """sup { alpha : v + alpha * dv stays in the cone }, v strictly inside."""
        alpha = np.inf
        for (a, b), n in zip(self.segments(), self.psd_orders):
            X = mat_from_svec(v[a:b], n)
            D = mat_from_svec(dv[a:b], n)
            try:
                L = np.linalg.cholesky(X)
            except np.linalg.LinAlgError:
                return 0.0
            W = np.linalg.solve(L, np.linalg.solve(L, D).T).T
            lam = float(np.linalg.eigvalsh(0.5 * (W + W.T))[0])
            if lam < 0.0:
                alpha = min(alpha, -1.0 / lam)
        tail = self.total_dim - self.n_nonneg
        xs, ds = v[tail:], dv[tail:]
        neg = ds < 0.0
        if np.any(neg):
            alpha = min(alpha, float(np.min(-xs[neg] / ds[neg])))
        return alpha
