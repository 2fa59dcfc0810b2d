"""
Dense Two-Phase Simplex

Solves small linear programs of the form

    maximize    c^T x
    subject to  A_eq x  = b_eq
                A_ub x <= b_ub
                x >= 0

on a dense numpy tableau. Phase I minimizes the sum of artificial
variables; artificials left in the basis at zero level are pivoted out,
and rows where that is impossible are dropped as redundant. Entering
variables follow Dantzig's rule until a run of degenerate pivots is
seen, after which Bland's rule is used for the rest of the solve so the
method cannot cycle.

The final basis is re-solved against the original data to recover the
primal point and the dual prices with full accuracy.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .utils import NumericalTolerances


class InfeasibleError(Exception):
    """Raised when the constraints admit no non-negative solution."""


class UnboundedError(Exception):
    """Raised when the objective can be increased without limit."""


@dataclass
class SimplexResult:
    """
    Optimal solution of a linear program.

    Attributes:
        x: Primal solution (original variables only)
        objective: c^T x
        duals_eq: Prices of the equality rows (0 for rows dropped as redundant)
        duals_ub: Prices of the inequality rows (>= 0 at optimum)
        iterations: Total pivots over both phases
        basis: Basic column indices of the standard-form problem
        redundant_rows: Equality rows removed in phase I
    """

    x: np.ndarray
    objective: float
    duals_eq: np.ndarray
    duals_ub: np.ndarray
    iterations: int
    basis: np.ndarray
    redundant_rows: np.ndarray

    def dual_objective(self, b_eq: np.ndarray, b_ub: np.ndarray) -> float:
        return float(np.dot(b_eq, self.duals_eq) + np.dot(b_ub, self.duals_ub))


class DenseSimplex:
    """
    Two-phase tableau simplex with an anti-cycling fallback.

    Args:
        tol: Reduced-cost and feasibility tolerance
        pivot_tol: Smallest acceptable pivot element
        max_iterations: Pivot limit per phase
        bland_after: Consecutive degenerate pivots before switching to Bland's rule
    """

    def __init__(
        self,
        tol: float = 1e-11,
        pivot_tol: float = NumericalTolerances.LP_PIVOT,
        max_iterations: int = 100_000,
        bland_after: int = 25,
    ):
        self.tol = tol
        self.pivot_tol = pivot_tol
        self.max_iterations = max_iterations
        self.bland_after = bland_after

    # ------------------------------------------------------------------
    # Public API
    # ------------------------------------------------------------------

    def solve(
        self,
        c: np.ndarray,
        A_eq: Optional[np.ndarray] = None,
        b_eq: Optional[np.ndarray] = None,
        A_ub: Optional[np.ndarray] = None,
        b_ub: Optional[np.ndarray] = None,
    ) -> SimplexResult:
        """
        Maximize c^T x subject to the given constraints and x >= 0.

        Raises:
            InfeasibleError: No feasible point
            UnboundedError: Objective unbounded above
            RuntimeError: Iteration limit reached
        """
        c = np.asarray(c, dtype=float)
        n = c.size
        A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
        b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
        A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
        b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()

        if A_eq.shape != (b_eq.size, n) or A_ub.shape != (b_ub.size, n):
            raise ValueError(
                f"Constraint shapes A_eq{A_eq.shape}/b_eq{b_eq.shape}, "
                f"A_ub{A_ub.shape}/b_ub{b_ub.shape} do not match {n} variables"
            )

        m_eq, m_ub = b_eq.size, b_ub.size
        m = m_eq + m_ub

        # Standard form: slacks for the inequality rows
        A = np.zeros((m, n + m_ub))
        A[:m_eq, :n] = A_eq
        A[m_eq:, :n] = A_ub
        A[m_eq:, n:] = np.eye(m_ub)
        b = np.concatenate([b_eq, b_ub])
        cost = np.concatenate([c, np.zeros(m_ub)])

        sign = np.where(b < 0, -1.0, 1.0)
        A = A * sign[:, None]
        b = b * sign
        n_std = n + m_ub

        tableau, basis, iterations = self._phase_one(A, b, n_std)
        tableau, basis, redundant = self._drive_out_artificials(tableau, basis, n_std)
        kept = np.setdiff1d(np.arange(m), redundant)

        # Drop artificial columns
        tableau = np.hstack([tableau[:, :n_std], tableau[:, -1:]])
        tableau, basis, more = self._phase_two(tableau, basis, cost)
        iterations += more

        x_std, y = self._recover(A[kept], b[kept], cost, basis, tableau)

        duals = np.zeros(m)
        duals[kept] = y
        duals *= sign

        x = np.maximum(x_std[:n], 0.0)
        return SimplexResult(
            x=x,
            objective=float(np.dot(c, x)),
            duals_eq=duals[:m_eq],
            duals_ub=duals[m_eq:],
            iterations=iterations,
            basis=basis.copy(),
            redundant_rows=redundant,
        )

    # ------------------------------------------------------------------
    # Phases
    # ------------------------------------------------------------------

    def _phase_one(self, A: np.ndarray, b: np.ndarray, n_std: int):
        m = A.shape[0]
        tableau = np.zeros((m + 1, n_std + m + 1))
        tableau[:m, :n_std] = A
        tableau[:m, n_std : n_std + m] = np.eye(m)
        tableau[:m, -1] = b

        # Minimize the artificial sum: reduced costs of the artificial basis
        tableau[m, n_std : n_std + m] = 1.0
        tableau[m, :] -= tableau[:m, :].sum(axis=0)

        basis = np.arange(n_std, n_std + m)
        iterations = self._iterate(tableau, basis, n_columns=n_std + m)

        infeasibility = -tableau[m, -1]
        scale = max(1.0, float(np.abs(b).max(initial=0.0)))
        if infeasibility > NumericalTolerances.LP_RESIDUAL * scale:
            raise InfeasibleError(f"Phase I ended with artificial sum {infeasibility:.3e}")
        return tableau, basis, iterations

    def _drive_out_artificials(self, tableau: np.ndarray, basis: np.ndarray, n_std: int):
        """
        Pivot zero-level artificials out of the basis.

        An artificial whose tableau row vanishes on every original column marks
        its own constraint as a combination of the others. That constraint is
        the one dropped; its index need not match the tableau row index.

        Returns:
            (tableau, basis, redundant) with redundant holding original row indices
        """
        m = basis.size
        keep_rows = np.ones(m, dtype=bool)
        redundant = []
        for row in range(m):
            if basis[row] < n_std:
                continue
            entries = np.abs(tableau[row, :n_std])
            col = int(np.argmax(entries)) if entries.size else 0
            scale = max(1.0, float(np.abs(tableau[row, :-1]).max()))
            if entries.size and entries[col] > self.pivot_tol * scale:
                self._pivot(tableau, basis, row, col)
            else:
                keep_rows[row] = False
                redundant.append(int(basis[row]) - n_std)

        rows = np.concatenate([np.where(keep_rows)[0], [m]])
        return tableau[rows], basis[keep_rows], np.array(sorted(redundant), dtype=int)

    def _phase_two(self, tableau: np.ndarray, basis: np.ndarray, cost: np.ndarray):
        m = basis.size
        n_std = tableau.shape[1] - 1

        # Minimize -c^T x; reduced costs relative to the current basis
        minimize = -cost
        tableau[m, :] = 0.0
        tableau[m, :n_std] = minimize
        for row, col in enumerate(basis):
            if minimize[col] != 0.0:
                tableau[m, :] -= minimize[col] * tableau[row, :]

        iterations = self._iterate(tableau, basis, n_columns=n_std)
        return tableau, basis, iterations

    # ------------------------------------------------------------------
    # Pivoting
    # ------------------------------------------------------------------

    def _iterate(self, tableau: np.ndarray, basis: np.ndarray, n_columns: int) -> int:
        m = basis.size
        iterations = 0
        degenerate_run = 0
        use_bland = False

        while True:
            reduced = tableau[m, :n_columns]
            candidates = np.where(reduced < -self.tol)[0]
            if candidates.size == 0:
                return iterations
            if iterations >= self.max_iterations:
                raise RuntimeError(f"Simplex did not converge within {self.max_iterations} pivots")

            if use_bland:
                col = int(candidates[0])
            else:
                col = int(candidates[np.argmin(reduced[candidates])])

            row = self._ratio_test(tableau, basis, col)
            if row is None:
                raise UnboundedError(f"Column {col} has no positive entry; objective is unbounded")

            if tableau[row, -1] <= self.tol:
                degenerate_run += 1
                if degenerate_run >= self.bland_after:
                    use_bland = True
            else:
                degenerate_run = 0

            self._pivot(tableau, basis, row, col)
            iterations += 1

    def _ratio_test(self, tableau: np.ndarray, basis: np.ndarray, col: int) -> Optional[int]:
        m = basis.size
        column = tableau[:m, col]
        eligible = np.where(column > self.pivot_tol)[0]
        if eligible.size == 0:
            return None
        ratios = tableau[eligible, -1] / column[eligible]
        best = ratios.min()
        ties = eligible[ratios <= best + self.tol * max(1.0, abs(best))]
        # Bland: among tied rows leave the smallest basic index
        return int(ties[np.argmin(basis[ties])])

    @staticmethod
    def _pivot(tableau: np.ndarray, basis: np.ndarray, row: int, col: int):
        tableau[row, :] /= tableau[row, col]
        factors = tableau[:, col].copy()
        factors[row] = 0.0
        tableau -= np.outer(factors, tableau[row, :])
        basis[row] = col

    # ------------------------------------------------------------------
    # Solution recovery
    # ------------------------------------------------------------------

    @staticmethod
    def _recover(A: np.ndarray, b: np.ndarray, cost: np.ndarray, basis: np.ndarray, tableau: np.ndarray):
        n_std = A.shape[1]
        x = np.zeros(n_std)
        if basis.size == 0:
            return x, np.zeros(0)

        B = A[:, basis]
        try:
            x_basis = np.linalg.solve(B, b)
            y = np.linalg.solve(B.T, cost[basis])
        except np.linalg.LinAlgError:
            m = basis.size
            x_basis = tableau[:m, -1]
            # Reduced costs of the slack-free tableau do not expose y directly
            y = np.linalg.lstsq(B.T, cost[basis], rcond=None)[0]
        x[basis] = x_basis
        return x, y
