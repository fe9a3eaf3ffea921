"""Box-scheme discretization of stationary one-dimensional transport

    v1 dh/dy + A(y) h = s(y),   y in [y_0, y_J],

with boundary rows at both ends, solved directly by block-tridiagonal
elimination.

Rows with v1 > 0 are centred in the cell to the left of their node, rows with
v1 < 0 in the cell to the right, so every node carries exactly one equation
per velocity and the system is block tridiagonal.  The inflow rows at the two
ends are replaced by a boundary relation ``h[in] - B h = d``.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla


class BoxSystem:
    """Factorized box-scheme operator.

    ``operators`` is one (n, n) matrix used at every node, or a sequence with one
    matrix per node.  ``left`` (shape (n_plus, n)) and ``right`` (shape
    (n_minus, n)) are the boundary couplings B at y_0 and y_J; ``None`` means a
    pure inflow condition.
    """

    def __init__(self, nodes, v1, operators, left=None, right=None, refine: int = 2):
        self.nodes = np.asarray(nodes, dtype=float)
        self.v1 = np.asarray(v1, dtype=float)
        if np.any(self.v1 == 0):
            raise ValueError("velocity grid contains v1 = 0")
        n = self.v1.size
        self.n = n
        self.J = self.nodes.size - 1
        self.plus = np.flatnonzero(self.v1 > 0)
        self.minus = np.flatnonzero(self.v1 < 0)
        if isinstance(operators, np.ndarray) and operators.ndim == 2:
            self._ops = [operators] * (self.J + 1)
        else:
            self._ops = list(operators)
            if len(self._ops) != self.J + 1:
                raise ValueError("need one operator per node")
        self.left = np.zeros((self.plus.size, n)) if left is None else np.asarray(left, dtype=float)
        self.right = np.zeros((self.minus.size, n)) if right is None else np.asarray(right, dtype=float)
        self.refine = refine
        self._factor()

    # -- assembly -----------------------------------------------------------

    def _blocks(self, j):
        n, P, N = self.n, self.plus, self.minus
        d = np.diff(self.nodes)
        A = self._ops
        lo = up = None
        di = np.zeros((n, n))
        if j == 0:
            di[P] = -self.left
            di[P, P] += 1.0
        else:
            c = self.v1[P] / d[j - 1]
            di[P] = 0.5 * A[j][P]
            di[P, P] += c
            lo = 0.5 * A[j - 1][P]
            lo[np.arange(P.size), P] -= c
        if j == self.J:
            di[N] = -self.right
            di[N, N] += 1.0
        else:
            c = self.v1[N] / d[j]
            di[N] += 0.5 * A[j][N]
            di[N, N] -= c
            up = 0.5 * A[j + 1][N]
            up[np.arange(N.size), N] += c
        return lo, di, up

    def _factor(self):
        P, N, n = self.plus, self.minus, self.n
        self._lu, self._C, self._lo = [], [], []
        C_prev = None
        for j in range(self.J + 1):
            lo, di, up = self._blocks(j)
            if lo is not None:
                di[P] -= lo @ C_prev
            lu = sla.lu_factor(di, check_finite=False)
            if up is not None:
                full_up = np.zeros((n, n))
                full_up[N] = up
                C = sla.lu_solve(lu, full_up, check_finite=False)
            else:
                C = None
            self._lu.append(lu)
            self._C.append(C)
            self._lo.append(lo)
            C_prev = C

    # -- right-hand sides and residuals ---------------------------------------

    def rhs(self, cell_source=None, left_data=None, right_data=None) -> np.ndarray:
        """Per-node right-hand side from cell sources (J, n) and boundary data."""
        r = np.zeros((self.J + 1, self.n))
        P, N = self.plus, self.minus
        if cell_source is not None:
            s = np.asarray(cell_source, dtype=float)
            r[1:, P] = s[:, P]
            r[:-1, N] = s[:, N]
        if left_data is not None:
            r[0, P] = left_data
        if right_data is not None:
            r[-1, N] = right_data
        return r

    def apply(self, h: np.ndarray) -> np.ndarray:
        """Row-arranged left-hand side of the discrete equations."""
        h = np.asarray(h, dtype=float)
        P, N = self.plus, self.minus
        d = np.diff(self.nodes)[:, None]
        Ah = np.stack([A @ hj for A, hj in zip(self._ops, h)])
        cell = self.v1 * (h[1:] - h[:-1]) / d + 0.5 * (Ah[1:] + Ah[:-1])
        out = np.empty_like(h)
        out[1:, P] = cell[:, P]
        out[:-1, N] = cell[:, N]
        out[0, P] = h[0, P] - self.left @ h[0]
        out[-1, N] = h[-1, N] - self.right @ h[-1]
        return out

    def _solve_rows(self, r: np.ndarray) -> np.ndarray:
        P = self.plus
        y = np.empty_like(r)
        for j in range(self.J + 1):
            b = r[j].copy()
            if j > 0:
                b[P] -= self._lo[j] @ y[j - 1]
            y[j] = sla.lu_solve(self._lu[j], b, check_finite=False)
        x = y
        for j in range(self.J - 1, -1, -1):
            x[j] = y[j] - self._C[j] @ x[j + 1]
        return x

    def solve(self, cell_source=None, left_data=None, right_data=None, rows=None) -> np.ndarray:
        """Solution (J+1, n).  ``rows`` may be given instead of the pieces."""
        r = self.rhs(cell_source, left_data, right_data) if rows is None else np.asarray(rows, dtype=float)
        x = self._solve_rows(r.copy())
        scale = max(np.max(np.abs(r)), 1e-300)
        for _ in range(self.refine):
            res = r - self.apply(x)
            if np.max(np.abs(res)) <= 1e-14 * scale:
                break
            x = x + self._solve_rows(res)
        return x

    def residual(self, h, cell_source=None, left_data=None, right_data=None) -> float:
        r = self.rhs(cell_source, left_data, right_data)
        return float(np.max(np.abs(self.apply(h) - r)))
