import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .qp_solver import INFEASIBLE, QpProblem, QpSolution, QpSolver
from .utils.data_parser import BidVector, DispatchResult, Scenario


class MarketClearingError(RuntimeError):
    """The clearing QP did not reach an optimal solution."""


class InfeasibleMarketError(MarketClearingError):
    """
    Demand cannot be met within unit limits.
    `period` is the first period found violating a supply envelope, or None.
    """
    def __init__(self, message: str, period: Optional[int] = None):
        super().__init__(message)
        self.period = period


@dataclass(frozen=True)
class VariableIndex:
    """
    Column of each decision variable, arrays shaped [company, period].
    Storage columns are -1 for companies without a battery.
    """
    sg: np.ndarray
    wt: np.ndarray
    bs: np.ndarray
    soc: np.ndarray
    n: int

    @property
    def balance_rows(self) -> np.ndarray:
        """Equality rows holding the supply-demand balance, one per period."""
        return np.arange(self.sg.shape[1])


def _index_variables(s: Scenario) -> VariableIndex:
    n_companies, horizon = len(s.companies), s.horizon
    sg = np.full((n_companies, horizon), -1, dtype=int)
    wt = np.full((n_companies, horizon), -1, dtype=int)
    bs = np.full((n_companies, horizon), -1, dtype=int)
    soc = np.full((n_companies, horizon), -1, dtype=int)
    column = 0
    for c, company in enumerate(s.companies):
        for t in range(horizon):
            sg[c, t] = column
            wt[c, t] = column + 1
            column += 2
            if company.bs is not None:
                bs[c, t] = column
                soc[c, t] = column + 1
                column += 2
    return VariableIndex(sg=sg, wt=wt, bs=bs, soc=soc, n=column)


class MarketOperator:
    """
    The system operator's clearing problem for one scenario.
    The constraint set does not depend on the bids, so it is assembled once and
    only the offer prices change between clearings.
    """
    def __init__(self, scenario: Scenario, solver: Optional[QpSolver] = None):
        """
        Args:
            scenario: A validated scenario.
            solver: QP solver to use; defaults to the scenario's solver settings.
        """
        self.scenario = scenario
        self.solver = solver or QpSolver(tol=scenario.solver.qp_tol, max_iter=scenario.solver.qp_max_iter)
        self.index = _index_variables(scenario)
        self._base = self._assemble()
        self._strategic_row = (
            scenario.company_index(scenario.strategic_company)
            if scenario.strategic_company is not None else None
        )

    def _assemble(self) -> QpProblem:
        s, idx = self.scenario, self.index
        dt = s.period_hours
        n = idx.n

        quadratic = np.zeros(n)
        linear = np.zeros(n)
        lower = np.zeros(n)
        upper = np.zeros(n)

        eq_rows: List[int] = []
        eq_cols: List[int] = []
        eq_vals: List[float] = []
        b_eq: List[float] = []

        def eq_entry(row: int, col: int, value: float) -> None:
            eq_rows.append(row)
            eq_cols.append(col)
            eq_vals.append(value)

        # Supply-demand balance, one row per period.
        for t in range(s.horizon):
            for c, company in enumerate(s.companies):
                eq_entry(t, idx.sg[c, t], 1.0)
                eq_entry(t, idx.wt[c, t], 1.0)
                if company.bs is not None:
                    eq_entry(t, idx.bs[c, t], 1.0)
            b_eq.append(s.demand[t])

        ramp_rows: List[Tuple[int, int, float, float]] = []
        row = s.horizon
        for c, company in enumerate(s.companies):
            sg = company.sg
            linear[idx.sg[c]] = sg.marginal_cost * dt
            lower[idx.sg[c]] = 0.0
            upper[idx.sg[c]] = sg.p_max
            # First-period ramp is measured from p_initial and folded into the bounds.
            lower[idx.sg[c, 0]] = max(0.0, sg.p_initial - sg.ramp_down * dt)
            upper[idx.sg[c, 0]] = min(sg.p_max, sg.p_initial + sg.ramp_up * dt)
            for t in range(1, s.horizon):
                ramp_rows.append((idx.sg[c, t], idx.sg[c, t - 1], -sg.ramp_down * dt, sg.ramp_up * dt))

            lower[idx.wt[c]] = 0.0
            upper[idx.wt[c]] = company.wind_profile

            bs = company.bs
            if bs is None:
                continue
            quadratic[idx.bs[c]] = 2.0 * bs.levelized_cost * dt
            lower[idx.bs[c]] = -bs.p_max
            upper[idx.bs[c]] = bs.p_max
            lower[idx.soc[c]] = bs.soc_min
            upper[idx.soc[c]] = bs.soc_max
            # SoC_t - SoC_{t-1} + P_BS,t * dt / E_max = 0
            for t in range(s.horizon):
                eq_entry(row, idx.soc[c, t], 1.0)
                eq_entry(row, idx.bs[c, t], dt / bs.e_max)
                if t > 0:
                    eq_entry(row, idx.soc[c, t - 1], -1.0)
                    b_eq.append(0.0)
                else:
                    b_eq.append(bs.soc_initial)
                row += 1
            # The cycle closes on the initial SoC.
            eq_entry(row, idx.soc[c, s.horizon - 1], 1.0)
            b_eq.append(bs.soc_initial)
            row += 1

        a_eq = sp.csr_matrix((eq_vals, (eq_rows, eq_cols)), shape=(row, n))

        box = sp.identity(n, format='csr')
        if ramp_rows:
            r = len(ramp_rows)
            ramp = sp.csr_matrix(
                ([1.0] * r + [-1.0] * r,
                 (list(range(r)) * 2, [e[0] for e in ramp_rows] + [e[1] for e in ramp_rows])),
                shape=(r, n),
            )
            a_in = sp.vstack([box, ramp], format='csr')
            lower = np.concatenate([lower, [e[2] for e in ramp_rows]])
            upper = np.concatenate([upper, [e[3] for e in ramp_rows]])
        else:
            a_in = box

        return QpProblem(
            quadratic_cost=sp.diags(quadratic, format='csc'),
            linear_cost=linear,
            a_eq=a_eq,
            b_eq=np.asarray(b_eq),
            a_in=a_in,
            lower=lower,
            upper=upper,
        )

    def check_bids(self, bids: Optional[BidVector]) -> None:
        if bids is None:
            return
        if self.scenario.strategic_company is None:
            raise ValueError("Bids were given but the scenario has no strategic company.")
        bids.check(self.scenario.horizon, self.scenario.k_max)

    def build_qp(self, bids: Optional[BidVector] = None) -> Tuple[QpProblem, VariableIndex]:
        """
        Returns the clearing QP for the given bids (None means truthful offers).
        Only the strategic company's SG offer is scaled by k_t; its storage stays at true cost.
        """
        self.check_bids(bids)
        if bids is None:
            return self._base, self.index
        linear = self._base.linear_cost.copy()
        c = self._strategic_row
        linear[self.index.sg[c]] = linear[self.index.sg[c]] * bids.as_array()
        return self._base.with_linear_cost(linear), self.index

    def clear(self, bids: Optional[BidVector] = None) -> DispatchResult:
        """
        Clears the market.
        Args:
            bids: Strategic multipliers, or None for truthful offers.
        Returns:
            The DispatchResult with clearing prices in ¥/MWh.
        Raises:
            InfeasibleMarketError: if demand cannot be served.
            MarketClearingError: if the solver stops without an optimal point.
        """
        return self.clear_with_solution(bids)[0]

    def clear_with_solution(self, bids: Optional[BidVector] = None,
                            warm_start: Optional[QpSolution] = None) -> Tuple[DispatchResult, QpSolution]:
        """
        Clears the market and also returns the raw QP solution, which can warm-start
        the next clearing of this operator (only the offer prices differ between them).
        """
        problem, _ = self.build_qp(bids)
        solution = self.solver.solve(problem, warm_start=warm_start)
        if not solution.is_optimal:
            self._raise_failure(solution)
        return self._unpack(solution, bids), solution

    def _unpack(self, solution: QpSolution, bids: Optional[BidVector]) -> DispatchResult:
        s, idx, x = self.scenario, self.index, solution.x
        has_bs = idx.bs >= 0
        bs_power = np.where(has_bs, x[np.where(has_bs, idx.bs, 0)], 0.0)
        soc = np.where(has_bs, x[np.where(has_bs, idx.soc, 0)], np.nan)
        prices = solution.eq_duals[idx.balance_rows] / s.period_hours

        result = DispatchResult(
            company_ids=tuple(s.company_ids),
            sg_output=x[idx.sg],
            bs_power=bs_power,
            wt_output=x[idx.wt],
            soc=soc,
            prices=prices,
            objective_value=solution.objective,
            bids=bids,
            strategic_company=s.strategic_company,
        )
        residual = float(np.max(np.abs(result.supply() - np.asarray(s.demand))))
        logging.debug(
            f"Cleared market in {solution.iterations} iterations "
            f"(polished={solution.polished}, warm={solution.warm_started}), "
            f"objective {solution.objective:.4f}, balance residual {residual:.2e}"
        )
        return result

    def _raise_failure(self, solution: QpSolution) -> None:
        period = self.first_infeasible_period()
        if solution.status == INFEASIBLE or period is not None:
            where = f" (first violating period {period})" if period is not None else ""
            logging.error(f"Market clearing infeasible{where}.")
            raise InfeasibleMarketError(f"Market clearing is infeasible{where}.", period)
        raise MarketClearingError(
            f"Market clearing stopped with status '{solution.status}' after {solution.iterations} iterations "
            f"(residuals {solution.kkt_residuals})."
        )

    def first_infeasible_period(self) -> Optional[int]:
        """
        Compares demand against the per-period supply envelope reachable from the
        initial SG outputs: shortage when demand exceeds the most that can be
        injected, oversupply when forced SG output cannot be absorbed by charging.
        """
        s = self.scenario
        dt = s.period_hours
        for t in range(s.horizon):
            most, least = 0.0, 0.0
            steps = t + 1
            for company in s.companies:
                sg = company.sg
                sg_high = min(sg.p_max, sg.p_initial + sg.ramp_up * dt * steps)
                sg_low = max(0.0, sg.p_initial - sg.ramp_down * dt * steps)
                bs_power = company.bs.p_max if company.bs is not None else 0.0
                most += sg_high + company.wind_profile[t] + bs_power
                least += sg_low - bs_power
            if s.demand[t] > most + 1e-9 or s.demand[t] < least - 1e-9:
                return t
        return None


def build_clearing_qp(s: Scenario, bids: Optional[BidVector] = None) -> Tuple[QpProblem, VariableIndex]:
    """Assembles the clearing QP and its variable index map for a scenario and optional bids."""
    return MarketOperator(s).build_qp(bids)


def clear_market(s: Scenario, bids: Optional[BidVector] = None) -> DispatchResult:
    """Clears the market for a scenario and optional strategic bids."""
    return MarketOperator(s).clear(bids)
