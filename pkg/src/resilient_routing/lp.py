"""Dense two-phase simplex for small linear programs.

Solves ``min c.x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  x >= 0`` on a full
tableau with Bland's anti-cycling rule. Problem sizes here are a few dozen
variables, so clarity wins over sparse factorizations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


class LPError(RuntimeError):
    pass


@dataclass
class LPResult:
    status: str
    x: Optional[np.ndarray]
    fun: float
    iterations: int
    duals: Optional[np.ndarray] = None  # multipliers for [ub rows..., eq rows...]
    duality_residual: float = float("nan")

    @property
    def success(self) -> bool:
        return self.status == OPTIMAL


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    for r in range(T.shape[0]):
        if r != row and T[r, col] != 0.0:
            T[r] -= T[r, col] * T[row]


def _run_simplex(T: np.ndarray, basis: list[int], n_cols: int, tol: float,
                 max_iter: int) -> tuple[str, int]:
    """Minimize the objective held in the last row of ``T`` (as reduced costs)."""
    it = 0
    m = T.shape[0] - 1
    while it < max_iter:
        cost = T[-1, :n_cols]
        enter = next((j for j in range(n_cols) if cost[j] < -tol), None)
        if enter is None:
            return OPTIMAL, it
        col = T[:m, enter]
        best, leave = np.inf, None
        for r in range(m):
            if col[r] > tol:
                ratio = T[r, -1] / col[r]
                # Bland: smallest ratio, ties broken by smallest basic index
                if ratio < best - tol:
                    best, leave = ratio, r
                elif ratio <= best + tol and basis[r] < basis[leave]:
                    leave = r
        if leave is None:
            return UNBOUNDED, it
        _pivot(T, leave, enter)
        basis[leave] = enter
        it += 1
    raise LPError(f"simplex did not terminate in {max_iter} pivots")


def linprog(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, tol: float = 1e-10,
            max_iter: int = 10_000) -> LPResult:
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq

    # Standard form [A | S] z = b with slacks on inequality rows, then flip rows to b >= 0.
    A = np.zeros((m, n + m_ub))
    A[:m_ub, :n] = A_ub
    A[:m_ub, n:] = np.eye(m_ub)
    A[m_ub:, :n] = A_eq
    b = np.concatenate([b_ub, b_eq])
    sign = np.where(b < 0, -1.0, 1.0)
    A *= sign[:, None]
    b = b * sign
    n_std = n + m_ub

    # Phase 1 with one artificial per row.
    T = np.zeros((m + 1, n_std + m + 1))
    T[:m, :n_std] = A
    T[:m, n_std:n_std + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :n_std] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = list(range(n_std, n_std + m))
    status, it1 = _run_simplex(T, basis, n_std + m, tol, max_iter)
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    if -T[-1, -1] > 1e-9 * scale:
        return LPResult(INFEASIBLE, None, float("nan"), it1)

    # Drive artificials out of the basis; rows that cannot be cleared are redundant.
    keep = []
    for r in range(m):
        if basis[r] >= n_std:
            col = next((j for j in range(n_std) if abs(T[r, j]) > tol), None)
            if col is None:
                continue
            _pivot(T, r, col)
            basis[r] = col
        keep.append(r)
    rows = keep
    T2 = np.zeros((len(rows) + 1, n_std + 1))
    T2[:-1, :n_std] = T[rows, :n_std]
    T2[:-1, -1] = T[rows, -1]
    basis = [basis[r] for r in rows]

    c_std = np.concatenate([c, np.zeros(m_ub)])
    T2[-1, :n_std] = c_std
    for r, j in enumerate(basis):
        T2[-1] -= c_std[j] * T2[r]
    status, it2 = _run_simplex(T2, basis, n_std, tol, max_iter)
    iterations = it1 + it2
    if status == UNBOUNDED:
        return LPResult(UNBOUNDED, None, -np.inf, iterations)

    z = np.zeros(n_std)
    for r, j in enumerate(basis):
        z[j] = T2[r, -1]
    x = z[:n]
    fun = float(c @ x)

    # Duals from the optimal basis: y^T B = c_B on the kept (sign-flipped) rows.
    B = A[rows][:, basis]
    y_kept = np.linalg.lstsq(B.T, c_std[basis], rcond=None)[0]
    y = np.zeros(m)
    y[rows] = y_kept
    y *= sign
    reduced = c_std - (A * sign[:, None]).T @ y
    dual_infeas = float(np.clip(-reduced, 0.0, None).max(initial=0.0))
    gap = abs(fun - float(np.concatenate([b_ub, b_eq]) @ y))
    return LPResult(OPTIMAL, x, fun, iterations, y, max(gap, dual_infeas))
