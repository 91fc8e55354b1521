"""
Convex quadratic programming with equality duals.

    minimize    0.5 x'Px + q'x
    subject to  A_eq x = b_eq
                lower <= A_in x <= upper

Solved with a Mehrotra predictor-corrector interior-point method on sparse
KKT systems, followed by an active-set polish that re-solves the KKT system
on the identified active constraints so prices come out to machine accuracy.
"""
import copy
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from config.settings import QP_MAX_ITERATIONS, QP_TOLERANCE

OPTIMAL = 'optimal'
INFEASIBLE = 'infeasible'
MAX_ITERATIONS = 'max_iterations'

_STEP_FRACTION = 0.99
_STALL_STEP = 1e-8
_STALL_LIMIT = 5
_POLISH_TRIGGER = 1e-6
_PROXIMAL = 1e-8
_WARM_START_ROUNDS = 10


def _norm_inf(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    """Largest alpha with v + alpha*dv >= 0."""
    negative = dv < 0
    if not np.any(negative):
        return np.inf
    return float(np.min(-v[negative] / dv[negative]))


def _kkt_matrix(H: sp.spmatrix, blocks: List[sp.spmatrix]) -> sp.csc_matrix:
    """Assembles [[H, J1', J2', ...], [J1, 0, ...], [J2, 0, ...]] skipping empty constraint blocks."""
    blocks = [J for J in blocks if J.shape[0] > 0]
    size = len(blocks) + 1
    grid: List[List[Optional[sp.spmatrix]]] = [[None] * size for _ in range(size)]
    grid[0][0] = H
    for i, J in enumerate(blocks, start=1):
        grid[0][i] = J.T
        grid[i][0] = J
        grid[i][i] = sp.csc_matrix((J.shape[0], J.shape[0]))
    return sp.bmat(grid, format='csc')


def _shift(n: int, rows: int, primal: float, dual: float) -> sp.csc_matrix:
    return sp.diags(np.concatenate([np.full(n, primal), np.full(rows, -dual)]), format='csc')


@dataclass
class QpProblem:
    """
    Standard-form convex QP. Matrices are stored sparse; infinite entries in
    `lower`/`upper` mean the side is absent.
    """
    quadratic_cost: sp.spmatrix
    linear_cost: np.ndarray
    a_eq: Optional[sp.spmatrix] = None
    b_eq: Optional[np.ndarray] = None
    a_in: Optional[sp.spmatrix] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    # Derived constraint data, shared by copies from with_linear_cost.
    _structure: Dict[str, Any] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.linear_cost = np.asarray(self.linear_cost, dtype=float).ravel()
        n = self.linear_cost.size
        self.quadratic_cost = sp.csc_matrix(self.quadratic_cost, dtype=float)
        if self.quadratic_cost.shape != (n, n):
            raise ValueError(f"quadratic_cost has shape {self.quadratic_cost.shape}, expected {(n, n)}.")
        asymmetry = abs(self.quadratic_cost - self.quadratic_cost.T)
        scale = 1.0 + (abs(self.quadratic_cost).max() if self.quadratic_cost.nnz else 0.0)
        if asymmetry.nnz and asymmetry.max() > 1e-12 * scale:
            raise ValueError("quadratic_cost must be symmetric.")

        if self.a_eq is None:
            self.a_eq = sp.csr_matrix((0, n))
            self.b_eq = np.zeros(0)
        self.a_eq = sp.csr_matrix(self.a_eq, dtype=float)
        self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        if self.a_eq.shape[1] != n or self.a_eq.shape[0] != self.b_eq.size:
            raise ValueError(f"a_eq shape {self.a_eq.shape} is inconsistent with n={n}, len(b_eq)={self.b_eq.size}.")

        if self.a_in is None:
            self.a_in = sp.csr_matrix((0, n))
            self.lower = np.zeros(0)
            self.upper = np.zeros(0)
        self.a_in = sp.csr_matrix(self.a_in, dtype=float)
        m = self.a_in.shape[0]
        self.lower = np.full(m, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float).ravel()
        self.upper = np.full(m, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).ravel()
        if self.a_in.shape[1] != n or self.lower.size != m or self.upper.size != m:
            raise ValueError(f"a_in shape {self.a_in.shape} is inconsistent with n={n} and the bound vectors.")
        if np.any(self.lower > self.upper):
            raise ValueError("Inequality bounds have lower > upper.")

    @property
    def n(self) -> int:
        return self.linear_cost.size

    def is_convex(self, tol: float = 1e-10) -> bool:
        """PSD check; diagonal matrices are checked entrywise, others via dense eigenvalues."""
        P = self.quadratic_cost
        off_diagonal = P - sp.diags(P.diagonal())
        if off_diagonal.count_nonzero() == 0:
            return bool(np.all(P.diagonal() >= -tol))
        eigenvalues = np.linalg.eigvalsh(P.toarray())
        return bool(eigenvalues.min() >= -tol * max(1.0, abs(eigenvalues).max()))

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.quadratic_cost @ x) + self.linear_cost @ x)

    def with_linear_cost(self, linear_cost: np.ndarray) -> "QpProblem":
        """
        Copy with a new linear cost that shares this problem's matrices and derived
        constraint data. The constraints were validated when this problem was built,
        so only the length of the new cost vector is checked.
        """
        linear_cost = np.asarray(linear_cost, dtype=float).ravel()
        if linear_cost.size != self.n:
            raise ValueError(f"linear_cost has {linear_cost.size} entries, expected {self.n}.")
        changed = copy.copy(self)
        changed.linear_cost = linear_cost
        return changed

    def folded(self) -> "QpProblem":
        """
        The same problem with inequality rows pinned to one value (lower == upper)
        moved to the end of the equality block. Returns self when no row is pinned.
        """
        if 'folded' not in self._structure:
            pinned_mask = np.isfinite(self.lower) & (self.lower == self.upper)
            fold = None
            if np.any(pinned_mask):
                fixed, free = np.flatnonzero(pinned_mask), np.flatnonzero(~pinned_mask)
                fold = QpProblem(
                    quadratic_cost=self.quadratic_cost,
                    linear_cost=self.linear_cost,
                    a_eq=sp.vstack([self.a_eq, self.a_in[fixed]], format='csr'),
                    b_eq=np.concatenate([self.b_eq, self.lower[fixed]]),
                    a_in=self.a_in[free],
                    lower=self.lower[free],
                    upper=self.upper[free],
                )
            self._structure['folded'] = fold
        fold = self._structure['folded']
        return self if fold is None else fold.with_linear_cost(self.linear_cost)

    def inequality_rows(self) -> Tuple[sp.csr_matrix, np.ndarray]:
        """Inequalities as C x <= d: upper sides first, then negated lower sides, one row per finite side."""
        if 'inequalities' not in self._structure:
            upper_rows = np.flatnonzero(np.isfinite(self.upper))
            lower_rows = np.flatnonzero(np.isfinite(self.lower))
            G = self.a_in
            C = sp.vstack([G[upper_rows], -G[lower_rows]], format='csr')
            d = np.concatenate([self.upper[upper_rows], -self.lower[lower_rows]])
            self._structure['inequalities'] = (C, d)
        return self._structure['inequalities']


@dataclass
class QpSolution:
    """
    eq_duals[i] is the increase of the optimal objective per unit increase of b_eq[i].
    kkt_residuals holds scaled 'primal', 'dual' and 'complementarity' norms.
    active_rows indexes the inequality rows held at equality by an active-set
    solve; a later solve of a problem with the same constraints can start there.
    """
    x: np.ndarray
    eq_duals: np.ndarray
    status: str
    kkt_residuals: Dict[str, float] = field(default_factory=dict)
    iterations: int = 0
    objective: float = float('nan')
    polished: bool = False
    active_rows: Optional[np.ndarray] = None
    warm_started: bool = False

    @property
    def is_optimal(self) -> bool:
        return self.status == OPTIMAL


class QpSolver:
    """
    Primal-dual interior-point solver for QpProblem.
    Inequalities are rewritten as C x + s = d with s >= 0, one row per finite side.
    """
    def __init__(self, tol: float = QP_TOLERANCE, max_iter: int = QP_MAX_ITERATIONS,
                 polish: bool = True, regularization: float = 1e-12):
        """
        Args:
            tol: Bound on every scaled KKT residual for an optimal status.
            max_iter: Interior-point iteration cap.
            polish: Re-solve on the identified active set once residuals are small.
            regularization: Diagonal shift that keeps the KKT factorization nonsingular.
        """
        if tol <= 0:
            raise ValueError("tol must be positive.")
        if max_iter < 1:
            raise ValueError("max_iter must be at least 1.")
        self.tol = tol
        self.max_iter = max_iter
        self.polish = polish
        self.regularization = regularization

    def solve(self, problem: QpProblem, warm_start: Optional[QpSolution] = None) -> QpSolution:
        """
        Solves the QP.
        Args:
            problem: A convex QpProblem.
            warm_start: An optimal solution of a problem with the same constraints
                (typically another linear cost). Its active set is tried first; the
                interior point runs only when that does not certify an optimum.
        Returns:
            A QpSolution whose status is 'optimal', 'infeasible' or 'max_iterations'.
        """
        # Rows pinned to a single value are solved as equalities; their duals are dropped.
        folded = problem.folded()
        solution = self._solve(folded, warm_start)
        if folded is not problem:
            solution.eq_duals = solution.eq_duals[:problem.a_eq.shape[0]]
        return solution

    def _solve(self, problem: QpProblem, warm_start: Optional[QpSolution]) -> QpSolution:
        C, d = problem.inequality_rows()
        if C.shape[0] == 0:
            return self._solve_equality_only(problem)
        if warm_start is not None:
            solution = self._warm_start(problem, C, d, warm_start)
            if solution is not None:
                return solution
        return self._interior_point(problem, C, d)

    def _scales(self, problem: QpProblem, d: np.ndarray) -> Tuple[float, float, float]:
        return (1.0 + _norm_inf(problem.b_eq), 1.0 + _norm_inf(d), 1.0 + _norm_inf(problem.linear_cost))

    def _residuals(self, problem: QpProblem, C: sp.spmatrix, d: np.ndarray, x: np.ndarray,
                   y: np.ndarray, s: np.ndarray, z: np.ndarray) -> Dict[str, float]:
        b_scale, d_scale, q_scale = self._scales(problem, d)
        P, q, A, b = problem.quadratic_cost, problem.linear_cost, problem.a_eq, problem.b_eq
        r_d = P @ x + q + A.T @ y + C.T @ z
        r_p = A @ x - b
        r_c = C @ x + s - d
        gap = float(s @ z)
        return {
            'primal': max(_norm_inf(r_p) / b_scale, _norm_inf(r_c) / d_scale),
            'dual': _norm_inf(r_d) / q_scale,
            'complementarity': abs(gap) / (1.0 + abs(problem.objective(x))),
        }

    def _converged(self, residuals: Dict[str, float], tol: float) -> bool:
        return all(value <= tol for value in residuals.values())

    def _solve_equality_only(self, problem: QpProblem) -> QpSolution:
        n, p = problem.n, problem.a_eq.shape[0]
        K = _kkt_matrix(problem.quadratic_cost, [problem.a_eq])
        rhs = np.concatenate([-problem.linear_cost, problem.b_eq])
        try:
            lu = splu(K + _shift(n, p, self.regularization, self.regularization))
            sol = lu.solve(rhs)
            for _ in range(2):
                sol = sol + lu.solve(rhs - K @ sol)
        except RuntimeError as e:
            logging.debug(f"Equality-constrained KKT factorization failed: {e}")
            return QpSolution(np.zeros(n), np.zeros(p), INFEASIBLE, iterations=1)
        x, y = sol[:n], sol[n:]
        empty = np.zeros(0)
        residuals = self._residuals(problem, sp.csr_matrix((0, n)), empty, x, y, empty, empty)
        status = OPTIMAL if self._converged(residuals, self.tol) else INFEASIBLE
        return QpSolution(x, -y, status, residuals, iterations=1, objective=problem.objective(x))

    def _interior_point(self, problem: QpProblem, C: sp.csr_matrix, d: np.ndarray) -> QpSolution:
        n, p, m = problem.n, problem.a_eq.shape[0], C.shape[0]
        P, q, A, b = problem.quadratic_cost, problem.linear_cost, problem.a_eq, problem.b_eq
        At, Ct = A.T.tocsr(), C.T.tocsr()
        shift = _shift(n, p, self.regularization, self.regularization)

        x = np.zeros(n)
        y = np.zeros(p)
        s = np.maximum(d - C @ x, 1.0)
        z = np.ones(m)

        polish_tried = False
        stalled = 0
        status = MAX_ITERATIONS
        iteration = 0

        for iteration in range(1, self.max_iter + 1):
            residuals = self._residuals(problem, C, d, x, y, s, z)

            if self.polish and not polish_tried and self._converged(residuals, max(self.tol, _POLISH_TRIGGER)):
                polish_tried = True
                polished = self._polish(problem, C, d, x, s, z, iteration)
                if polished is not None:
                    return polished

            if self._converged(residuals, self.tol):
                status = OPTIMAL
                break

            if self._has_infeasibility_certificate(problem, C, d, y, z):
                logging.debug(f"Primal infeasibility certificate found at iteration {iteration}.")
                status = INFEASIBLE
                break

            r_d = P @ x + q + At @ y + Ct @ z
            r_p = A @ x - b
            r_c = C @ x + s - d
            mu = float(s @ z) / m

            K = _kkt_matrix((P + Ct @ sp.diags(z / s) @ C).tocsc(), [A])
            try:
                lu = splu(K + shift)
            except RuntimeError as e:
                logging.debug(f"KKT factorization failed at iteration {iteration}: {e}")
                status = INFEASIBLE
                break

            def newton(r_sz: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
                rhs = np.concatenate([-r_d + Ct @ ((r_sz - z * r_c) / s), -r_p])
                sol = lu.solve(rhs)
                sol = sol + lu.solve(rhs - K @ sol)
                dx, dy = sol[:n], sol[n:]
                ds = -r_c - C @ dx
                dz = (-r_sz - z * ds) / s
                return dx, dy, ds, dz

            # predictor
            dx, dy, ds, dz = newton(s * z)
            alpha_aff = min(1.0, _max_step(s, ds), _max_step(z, dz))
            mu_aff = float((s + alpha_aff * ds) @ (z + alpha_aff * dz)) / m
            sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0

            # corrector with centering
            dx, dy, ds, dz = newton(s * z + ds * dz - sigma * mu)
            alpha = min(1.0, _STEP_FRACTION * min(_max_step(s, ds), _max_step(z, dz)))

            if not all(np.all(np.isfinite(v)) for v in (dx, dy, ds, dz)) or not np.isfinite(alpha):
                logging.debug(f"Newton direction broke down at iteration {iteration}.")
                status = INFEASIBLE if residuals['primal'] > np.sqrt(self.tol) else MAX_ITERATIONS
                break

            x = x + alpha * dx
            y = y + alpha * dy
            s = s + alpha * ds
            z = z + alpha * dz

            stalled = stalled + 1 if alpha < _STALL_STEP else 0
            if stalled >= _STALL_LIMIT:
                residuals = self._residuals(problem, C, d, x, y, s, z)
                if residuals['primal'] > np.sqrt(self.tol):
                    logging.debug(f"Interior point stalled while primal infeasible at iteration {iteration}.")
                    status = INFEASIBLE
                    break
                polished = self._polish(problem, C, d, x, s, z, iteration) if self.polish else None
                if polished is not None:
                    return polished
                logging.debug(f"Interior point stalled near a solution at iteration {iteration}.")
                status = MAX_ITERATIONS
                break

        if status == OPTIMAL and self.polish:
            polished = self._polish(problem, C, d, x, s, z, iteration)
            if polished is not None:
                return polished

        residuals = self._residuals(problem, C, d, x, y, s, z)
        logging.debug(f"Interior point finished with status {status} after {iteration} iterations.")
        active = np.flatnonzero(z > s) if status == OPTIMAL else None
        return QpSolution(x, -y, status, residuals, iterations=iteration, objective=problem.objective(x),
                          active_rows=active)

    def _has_infeasibility_certificate(self, problem: QpProblem, C: sp.spmatrix, d: np.ndarray,
                                       y: np.ndarray, z: np.ndarray) -> bool:
        """Checks whether (y, z) has grown into a Farkas certificate: A'y + C'z ~ 0, b'y + d'z < 0, z >= 0."""
        size = _norm_inf(y) + _norm_inf(z)
        if size < 1e8 * (1.0 + _norm_inf(problem.linear_cost)):
            return False
        y_hat, z_hat = y / size, z / size
        direction = problem.a_eq.T @ y_hat + C.T @ z_hat
        return _norm_inf(direction) <= 1e-6 and float(problem.b_eq @ y_hat + d @ z_hat) < -1e-6

    def _active_set_step(self, problem: QpProblem, C: sp.csr_matrix, d: np.ndarray, x_ref: np.ndarray,
                         active: np.ndarray) -> Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """
        Solves the KKT system with the rows in `active` held at equality. A small
        proximal term around x_ref fixes directions the active set leaves free.
        Returns (x, y, z_active), or None when the factorization breaks down.
        """
        n, p = problem.n, problem.a_eq.shape[0]
        K = _kkt_matrix((problem.quadratic_cost + _PROXIMAL * sp.identity(n)).tocsc(), [problem.a_eq, C[active]])
        rhs = np.concatenate([-problem.linear_cost + _PROXIMAL * x_ref, problem.b_eq, d[active]])
        try:
            lu = splu(K + _shift(n, p + active.size, 0.0, self.regularization))
            sol = lu.solve(rhs)
            for _ in range(3):
                sol = sol + lu.solve(rhs - K @ sol)
        except RuntimeError as e:
            logging.debug(f"Active-set factorization failed: {e}")
            return None
        if not np.all(np.isfinite(sol)):
            return None
        return sol[:n], sol[n:n + p], sol[n + p:]

    def _certify(self, problem: QpProblem, C: sp.csr_matrix, d: np.ndarray, active: np.ndarray,
                 step: Tuple[np.ndarray, np.ndarray, np.ndarray], iterations: int,
                 warm_started: bool = False) -> Optional[QpSolution]:
        """Accepts an active-set point only if it passes every KKT check; otherwise returns None."""
        x_new, y_new, z_active = step
        _, d_scale, q_scale = self._scales(problem, d)
        if z_active.size and z_active.min() < -self.tol * q_scale:
            logging.debug("Active-set point rejected: negative multiplier on an active row.")
            return None
        z_new = np.zeros(C.shape[0])
        z_new[active] = np.maximum(z_active, 0.0)
        slack = d - C @ x_new
        if slack.min() < -self.tol * d_scale:
            logging.debug("Active-set point rejected: inactive row violated.")
            return None
        s_new = np.maximum(slack, 0.0)

        residuals = self._residuals(problem, C, d, x_new, y_new, s_new, z_new)
        if not self._converged(residuals, self.tol):
            logging.debug(f"Active-set point rejected: residuals {residuals}.")
            return None
        return QpSolution(x_new, -y_new, OPTIMAL, residuals, iterations=iterations,
                          objective=problem.objective(x_new), polished=True, active_rows=active,
                          warm_started=warm_started)

    def _polish(self, problem: QpProblem, C: sp.csr_matrix, d: np.ndarray, x: np.ndarray,
                s: np.ndarray, z: np.ndarray, iteration: int) -> Optional[QpSolution]:
        """Re-solves the KKT system with the rows where z > s held at equality."""
        active = np.flatnonzero(z > s)
        step = self._active_set_step(problem, C, d, x, active)
        if step is None:
            return None
        return self._certify(problem, C, d, active, step, iteration)

    def _warm_start(self, problem: QpProblem, C: sp.csr_matrix, d: np.ndarray,
                    warm: QpSolution) -> Optional[QpSolution]:
        """
        Primal-dual active-set rounds starting from a previous optimum's active rows:
        rows whose multiplier turned negative are released and violated rows are
        added until the KKT checks pass. Returns None after _WARM_START_ROUNDS.
        """
        m = C.shape[0]
        if (warm.active_rows is None or warm.x.size != problem.n
                or (warm.active_rows.size and int(warm.active_rows.max()) >= m)):
            return None
        _, d_scale, q_scale = self._scales(problem, d)
        active = warm.active_rows
        for rounds in range(1, _WARM_START_ROUNDS + 1):
            step = self._active_set_step(problem, C, d, warm.x, active)
            if step is None:
                return None
            keep = step[2] >= -self.tol * q_scale
            violated = d - C @ step[0] < -self.tol * d_scale
            if np.all(keep) and not np.any(violated):
                return self._certify(problem, C, d, active, step, rounds, warm_started=True)
            mask = violated.copy()
            mask[active[keep]] = True
            active = np.flatnonzero(mask)
        logging.debug(f"Warm start gave up after {_WARM_START_ROUNDS} active-set rounds.")
        return None


def solve_qp(p: QpProblem, tol: float = QP_TOLERANCE, max_iter: int = QP_MAX_ITERATIONS) -> QpSolution:
    """
    Solves a convex QP and returns primal values and equality duals.
    Args:
        p: The problem; must be convex.
        tol: Residual tolerance.
        max_iter: Iteration cap.
    Returns:
        The QpSolution.
    """
    if not p.is_convex():
        raise ValueError("quadratic_cost is not positive semidefinite.")
    return QpSolver(tol=tol, max_iter=max_iter).solve(p)
