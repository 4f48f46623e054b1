"""Dense revised simplex for small linear programs.

Problems are stated in inequality form, maximize c'y subject to A y <= b
with y free. The solver runs a two-phase revised simplex (largest scaled
reduced cost, Bland's rule as the anti-cycling fallback) on the dual standard-form program (min b'z, A'z = c, z >= 0), whose basis
has only as many rows as there are decision variables. The simplex
multipliers of the dual are the primal optimum.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class SolverFailure(RuntimeError):
    pass


class LPStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass
class LinearProgram:
    """maximize objective @ y  subject to  rows @ y <= rhs."""

    labels: list[str]
    rows: np.ndarray
    rhs: np.ndarray
    objective: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float).reshape(-1, len(self.labels))
        self.rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        self.objective = np.asarray(self.objective, dtype=float).reshape(-1)
        if len(self.rhs) != self.rows.shape[0]:
            raise ValueError("one right-hand side per row required")
        if len(self.objective) != len(self.labels):
            raise ValueError("objective length must match the number of labels")
        if not (np.all(np.isfinite(self.rows)) and np.all(np.isfinite(self.rhs))
                and np.all(np.isfinite(self.objective))):
            raise ValueError("linear program entries must be finite")

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    def add_rows(self, rows: np.ndarray, rhs: np.ndarray) -> "LinearProgram":
        return LinearProgram(self.labels, np.vstack([self.rows, rows]), np.concatenate([self.rhs, rhs]),
                             self.objective)

    def max_violation(self, y: np.ndarray) -> float:
        if not self.n_rows:
            return 0.0
        return float(np.max(self.rows @ y - self.rhs))


@dataclass
class LPResult:
    status: LPStatus
    point: np.ndarray | None = None
    value: float | None = None
    iterations: int = 0
    max_violation: float = 0.0

    def as_dict(self, labels: Sequence[str]) -> dict[str, float]:
        return dict(zip(labels, map(float, self.point)))


@dataclass
class _Standard:
    status: LPStatus
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    value: float | None = None
    iterations: int = 0


def _iterate(A, b, c, basis, tol, max_iter, counter, bland_after=50):
    """Revised simplex from a feasible basis; mutates basis.

    Pricing picks the most negative scaled reduced cost. After
    ``bland_after`` consecutive degenerate pivots it switches to Bland's
    rule (lowest eligible index, lowest leaving index) until the objective
    moves again, which rules out cycling.
    """
    m, n = A.shape
    absAT = np.abs(A.T)
    degenerate = 0
    while True:
        counter[0] += 1
        if counter[0] > max_iter:
            raise SolverFailure(f"simplex exceeded {max_iter} iterations")
        Bm = A[:, basis]
        try:
            xB = np.linalg.solve(Bm, b)
            y = np.linalg.solve(Bm.T, c[basis])
        except np.linalg.LinAlgError:
            raise SolverFailure("numerically singular basis") from None
        cond = np.linalg.cond(Bm)
        if cond > 1e13:
            raise SolverFailure("numerically singular basis")
        xB = np.maximum(xB, 0.0)
        d = c - A.T @ y
        d[basis] = 0.0
        # reduced costs below the rounding noise of their own terms are zero
        noise = max(tol, 64 * np.finfo(float).eps * cond)
        scale = 1.0 + np.abs(c) + absAT @ np.abs(y)
        rel = d / scale
        entering = np.nonzero(rel < -noise)[0]
        if not len(entering):
            return "optimal", xB, y
        bland = degenerate >= bland_after
        q = int(entering[0]) if bland else int(entering[np.argmin(rel[entering])])
        u = np.linalg.solve(Bm, A[:, q])
        pos = u > tol
        if not pos.any():
            return "unbounded", xB, y
        ratios = np.full(m, np.inf)
        ratios[pos] = xB[pos] / u[pos]
        rmin = ratios.min()
        ties = np.nonzero(ratios <= rmin + tol * (1.0 + abs(rmin)))[0]
        if bland:
            r = int(ties[np.argmin(np.asarray(basis)[ties])])
        else:
            r = int(ties[np.argmax(u[ties])])
        degenerate = degenerate + 1 if rmin <= tol else 0
        basis[r] = q


def simplex_standard(A: np.ndarray, b: np.ndarray, c: np.ndarray, tol: float = 1e-9,
                     max_iter: int = 100_000) -> _Standard:
    """Two-phase revised simplex for min c'x, A x = b, x >= 0."""
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    c = np.array(c, dtype=float)
    m, n = A.shape
    sign = np.where(b < 0, -1.0, 1.0)
    A1 = A * sign[:, None]
    b1 = b * sign
    counter = [0]

    # phase 1 with one artificial per row
    Aa = np.hstack([A1, np.eye(m)])
    ca = np.concatenate([np.zeros(n), np.ones(m)])
    basis = list(range(n, n + m))
    if m:
        state, xB, _ = _iterate(Aa, b1, ca, basis, tol, max_iter, counter)
        infeas = float(ca[basis] @ xB)
        if infeas > 1e-7 * (1.0 + np.abs(b1).max()):
            return _Standard(LPStatus.INFEASIBLE, iterations=counter[0])

    # drive artificials out of the basis; drop redundant rows
    rows = list(range(m))
    r = 0
    while r < len(basis):
        if basis[r] < n:
            r += 1
            continue
        Bm = Aa[np.ix_(rows, basis)]
        Binv_row = np.linalg.solve(Bm.T, np.eye(len(rows))[r])
        entries = Binv_row @ Aa[np.ix_(rows, range(n))]
        cand = [j for j in np.nonzero(np.abs(entries) > 1e-9)[0] if j not in basis]
        if cand:
            basis[r] = int(cand[0])
            r += 1
        else:
            del rows[r]
            del basis[r]

    A2 = A1[rows]
    b2 = b1[rows]
    if not rows:
        # no binding equalities: x = 0 unless some cost is negative
        if np.any(c < -tol):
            return _Standard(LPStatus.UNBOUNDED, iterations=counter[0])
        return _Standard(LPStatus.OPTIMAL, np.zeros(n), np.zeros(m), 0.0, counter[0])
    state, xB, y = _iterate(A2, b2, c, basis, tol, max_iter, counter)
    if state == "unbounded":
        return _Standard(LPStatus.UNBOUNDED, iterations=counter[0])
    x = np.zeros(n)
    x[basis] = xB
    y_full = np.zeros(m)
    y_full[rows] = y * sign[rows]
    return _Standard(LPStatus.OPTIMAL, x, y_full, float(c @ x), counter[0])


def lp_solve(lp: LinearProgram, tol: float = 1e-9, max_iter: int = 100_000) -> LPResult:
    """Solve the program; rows are equilibrated to unit max-norm first."""
    A, b, c = lp.rows, lp.rhs, lp.objective
    norms = np.abs(A).max(axis=1) if A.size else np.zeros(A.shape[0])
    empty = norms == 0
    if np.any(b[empty] < -tol):
        return LPResult(LPStatus.INFEASIBLE)
    A = A[~empty] / norms[~empty, None]
    b = b[~empty] / norms[~empty]
    m, n = A.shape
    dual = simplex_standard(A.T, c, b, tol, max_iter)
    if dual.status is LPStatus.OPTIMAL:
        y = dual.y
        return LPResult(LPStatus.OPTIMAL, y, float(c @ y), dual.iterations, lp.max_violation(y))
    if dual.status is LPStatus.UNBOUNDED:
        return LPResult(LPStatus.INFEASIBLE, iterations=dual.iterations)
    if m == 0:
        return LPResult(LPStatus.UNBOUNDED, iterations=dual.iterations)
    # dual infeasible: the primal is unbounded or infeasible; decide by Farkas
    Af = np.vstack([A.T, np.ones((1, m))])
    bf = np.concatenate([np.zeros(n), [1.0]])
    farkas = simplex_standard(Af, bf, b, tol, max_iter)
    its = dual.iterations + farkas.iterations
    if farkas.status is LPStatus.OPTIMAL and farkas.value < -1e-9 * (1.0 + np.abs(b).max()):
        return LPResult(LPStatus.INFEASIBLE, iterations=its)
    return LPResult(LPStatus.UNBOUNDED, iterations=its)
