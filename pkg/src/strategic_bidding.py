import itertools
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .market_clearing import MarketClearingError, MarketOperator
from .qp_solver import QpSolution
from .utils.data_parser import BidVector, DispatchResult, Scenario, SolverConfig

# Guard for the exhaustive oracle.
MAX_GRID_EVALUATIONS = 1_000_000

# (profit, dispatch, QP solution); a failed clearing is (-inf, None, None).
_Cleared = Tuple[float, Optional[DispatchResult], Optional[QpSolution]]
# (bids, profit, dispatch, evaluations used) for one restart.
_RestartResult = Tuple[np.ndarray, float, Optional[DispatchResult], int]


@dataclass(frozen=True, eq=False)
class BilevelSolution:
    """Best bids found for the strategic company and the clearing they produce."""
    bids: BidVector
    dispatch: DispatchResult
    strategic_profit: float
    solve_stats: Dict[str, Any] = field(default_factory=dict)


def company_profit(d: DispatchResult, s: Scenario, company_id: str,
                   include_wind_revenue: bool = False) -> float:
    """
    Profit of one company at its TRUE costs:
    sum_t dt * (lambda_t * P_SG - O_SG * P_SG - O_BS * P_BS^2), plus lambda_t * P_WT when asked.
    """
    company = s.company(company_id)
    row = d.row(company_id)
    sg = d.sg_output[row]
    profit = d.prices @ sg - company.sg.marginal_cost * sg.sum()
    if company.bs is not None:
        profit -= company.bs.levelized_cost * float(d.bs_power[row] @ d.bs_power[row])
    if include_wind_revenue:
        profit += d.prices @ d.wt_output[row]
    return float(s.period_hours * profit)


def strategic_profit(d: DispatchResult, s: Scenario) -> float:
    """
    Upper-level objective of the strategic company for a clearing result.
    Args:
        d: Clearing result for s.
        s: Scenario naming the strategic company.
    Returns:
        Profit in ¥ (SG revenue minus SG and BS costs).
    """
    if s.strategic_company is None:
        raise ValueError("Scenario has no strategic company designated.")
    return company_profit(d, s, s.strategic_company)


def _prefer(profit: float, k: np.ndarray, best_profit: float, best_k: Optional[np.ndarray],
            tol: float) -> bool:
    """True when (profit, k) beats the incumbent; near-equal profits go to the smaller sum of k."""
    if best_k is None:
        return True
    margin = tol * max(1.0, abs(best_profit))
    if profit > best_profit + margin:
        return True
    return abs(profit - best_profit) <= margin and float(k.sum()) < float(best_k.sum()) - 1e-12


class StrategicBidder:
    """
    Nested bi-level solver: derivative-free search over the bid multipliers
    around exact market clearings.
    """
    def __init__(self, scenario: Scenario, operator: Optional[MarketOperator] = None):
        if scenario.strategic_company is None:
            raise ValueError("Strategic bidding needs a scenario with strategic_company set.")
        self.scenario = scenario
        self.config: SolverConfig = scenario.solver
        self.operator = operator or MarketOperator(scenario)
        self._cache: Dict[Tuple[float, ...], Tuple[float, DispatchResult]] = {}
        self._lock = threading.Lock()
        self.clearings = 0
        self.cache_hits = 0
        self.warm_starts = 0

    def _key(self, k: np.ndarray) -> Tuple[float, ...]:
        clipped = np.clip(k, 1.0, self.scenario.k_max)
        return tuple(float(v) for v in np.round(clipped, 9))

    def _clear(self, key: Tuple[float, ...], warm_start: Optional[QpSolution] = None) -> _Cleared:
        """Clears for the bids `key`. Failures away from truthful bids score -inf so the search moves on."""
        try:
            dispatch, solution = self.operator.clear_with_solution(BidVector(key), warm_start)
        except MarketClearingError as e:
            if all(v == 1.0 for v in key):
                raise
            logging.warning(f"Clearing failed for bids {key}: {e}")
            return -np.inf, None, None
        with self._lock:
            self.clearings += 1
            self.warm_starts += int(solution.warm_started)
        return strategic_profit(dispatch, self.scenario), dispatch, solution

    def evaluate(self, k: np.ndarray, use_cache: bool = True) -> Tuple[float, DispatchResult]:
        """Clears the market for the bids k and returns (strategic profit, dispatch)."""
        key = self._key(k)
        if use_cache:
            with self._lock:
                cached = self._cache.get(key)
                if cached is not None:
                    self.cache_hits += 1
                    return cached
        profit, dispatch, _ = self._clear(key)
        if use_cache and dispatch is not None:
            with self._lock:
                self._cache[key] = (profit, dispatch)
        return profit, dispatch  # type: ignore[return-value]

    def _starts(self) -> List[np.ndarray]:
        horizon, k_max = self.scenario.horizon, self.scenario.k_max
        rng = np.random.default_rng(self.config.seed)
        starts = [np.ones(horizon)]
        if self.config.restarts > 1:
            starts.append(np.full(horizon, k_max))
        for _ in range(self.config.restarts - 2):
            starts.append(rng.uniform(1.0, k_max, size=horizon))
        return starts

    def _search(self, restart: int, start: np.ndarray, budget: int) -> _RestartResult:
        """
        Runs one restart: an optional coarse lattice sweep (restart 0 only), then
        compass pattern search with step halving. Every clearing is warm-started
        from the incumbent's QP solution, and the restart keeps its own cache, so
        its path does not depend on what other restarts have done.
        Returns (k, profit, dispatch, evaluations used).
        """
        cfg, k_max, horizon = self.config, self.scenario.k_max, self.scenario.horizon
        cache: Dict[Tuple[float, ...], _Cleared] = {}
        used = 0
        incumbent: Optional[QpSolution] = None

        def score(k: np.ndarray) -> _Cleared:
            nonlocal used
            used += 1
            key = tuple(float(v) for v in k)
            if key in cache:
                with self._lock:
                    self.cache_hits += 1
                return cache[key]
            cache[key] = self._clear(key, incumbent)
            return cache[key]

        def better(p: float, k: np.ndarray) -> bool:
            # Strict order on (profit, -sum k) keeps the walk from cycling.
            return p > best or (p == best and float(k.sum()) < float(best_k.sum()))

        def consider(candidate: np.ndarray) -> None:
            nonlocal best, best_k, best_dispatch, incumbent
            p, dispatch, solution = score(candidate)
            if better(p, candidate):
                best, best_k, best_dispatch = p, candidate, dispatch
                incumbent = solution if solution is not None else incumbent

        best_k = np.array(self._key(start))
        best, best_dispatch, incumbent = score(best_k)
        spacing = (k_max - 1.0) / cfg.coarse_points

        if restart == 0:
            lattice = np.linspace(1.0, k_max, cfg.coarse_points + 1)
            while used < budget:
                pass_start = best
                for t in range(horizon):
                    for value in lattice:
                        if used >= budget:
                            break
                        if value == best_k[t]:
                            continue
                        candidate = best_k.copy()
                        candidate[t] = value
                        consider(np.array(self._key(candidate)))
                if best - pass_start < cfg.improve_tol:
                    break

        step = spacing / 2.0
        while step >= cfg.min_step and used < budget:
            pass_start = best
            for t in range(horizon):
                for direction in (1.0, -1.0):
                    if used >= budget:
                        break
                    candidate = best_k.copy()
                    candidate[t] = min(k_max, max(1.0, candidate[t] + direction * step))
                    candidate = np.array(self._key(candidate))
                    if candidate[t] == best_k[t]:
                        continue
                    consider(candidate)
            if best - pass_start < cfg.improve_tol:
                step /= 2.0

        logging.info(f"Restart {restart}: profit {best:.4f} after {used} evaluations.")
        return best_k, best, best_dispatch, used

    def solve(self) -> BilevelSolution:
        """
        Multi-start search for the profit-maximizing bids.
        Returns:
            The BilevelSolution; never worse than truthful bidding.
        Raises:
            InfeasibleMarketError: if the scenario cannot be cleared at truthful bids.
        """
        s, cfg = self.scenario, self.config
        started = time.perf_counter()
        truthful = np.ones(s.horizon)
        truthful_profit, truthful_dispatch = self.evaluate(truthful)

        if s.k_max <= 1.0:
            results: List[_RestartResult] = [(truthful, truthful_profit, truthful_dispatch, 1)]
            restarts = 0
        else:
            starts = self._starts()
            budget = max(1, cfg.eval_budget // len(starts))
            if cfg.workers > 1:
                with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                    results = list(pool.map(lambda job: self._search(job[0], job[1], budget), enumerate(starts)))
            else:
                results = [self._search(r, start, budget) for r, start in enumerate(starts)]
            restarts = len(starts)

        best_k: Optional[np.ndarray] = None
        best = -np.inf
        dispatch: Optional[DispatchResult] = None
        for k, profit, restart_dispatch, _ in results:
            if restart_dispatch is not None and _prefer(profit, k, best, best_k, 1e-7):
                best, best_k, dispatch = profit, k, restart_dispatch

        stats = {
            'evaluations': sum(used for _, _, _, used in results),
            'clearings': self.clearings,
            'warm_starts': self.warm_starts,
            'cache_hits': self.cache_hits,
            'restarts': restarts,
            'wall_time': time.perf_counter() - started,
        }
        logging.info(
            f"Strategic bidding for {s.strategic_company}: profit {best:.4f} ¥, "
            f"mean k {float(np.mean(best_k)):.4f}, {stats['clearings']} clearings "
            f"({stats['warm_starts']} warm-started)."
        )
        return BilevelSolution(bids=dispatch.bids, dispatch=dispatch, strategic_profit=best, solve_stats=stats)

    def brute_force(self, grid_step: float) -> BilevelSolution:
        """
        Exhaustive search over {1, 1+grid_step, ..., k_max}^T.
        Args:
            grid_step: Lattice spacing for every k_t.
        Returns:
            The grid argmax as a BilevelSolution.
        Raises:
            ValueError: for a non-positive step or more than MAX_GRID_EVALUATIONS points.
        """
        s = self.scenario
        if not grid_step > 0:
            raise ValueError(f"grid_step must be positive, got {grid_step}.")
        started = time.perf_counter()
        points = int(np.floor((s.k_max - 1.0) / grid_step + 1e-9)) + 1
        axis = list(1.0 + grid_step * np.arange(points))
        if axis[-1] < s.k_max - 1e-9:
            axis.append(s.k_max)
        total = len(axis) ** s.horizon
        if total > MAX_GRID_EVALUATIONS:
            raise ValueError(
                f"Oracle grid has {len(axis)}^{s.horizon} = {total} points, above the limit of {MAX_GRID_EVALUATIONS}."
            )
        logging.info(f"Grid oracle over {total} bid vectors (step {grid_step}).")

        best_k: Optional[np.ndarray] = None
        best = -np.inf
        best_dispatch: Optional[DispatchResult] = None
        for point in itertools.product(axis, repeat=s.horizon):
            k = np.array(self._key(np.array(point)))
            profit, dispatch = self.evaluate(k, use_cache=False)
            if _prefer(profit, k, best, best_k, 1e-7):
                best, best_k, best_dispatch = profit, k, dispatch

        stats = {
            'evaluations': total,
            'clearings': self.clearings,
            'warm_starts': 0,
            'cache_hits': 0,
            'restarts': 0,
            'wall_time': time.perf_counter() - started,
        }
        return BilevelSolution(bids=best_dispatch.bids, dispatch=best_dispatch, strategic_profit=best,
                               solve_stats=stats)


def _with_config(s: Scenario, cfg: Optional[SolverConfig]) -> Scenario:
    return s if cfg is None else replace(s, solver=cfg)


def solve_bilevel(s: Scenario, cfg: Optional[SolverConfig] = None) -> BilevelSolution:
    """Solves the strategic company's bidding problem; cfg replaces the scenario's solver block when given."""
    return StrategicBidder(_with_config(s, cfg)).solve()


def brute_force_bilevel(s: Scenario, grid_step: Optional[float] = None) -> BilevelSolution:
    """Grid oracle for small horizons; grid_step defaults to the scenario's solver.grid_step."""
    step = s.solver.grid_step if grid_step is None else grid_step
    return StrategicBidder(s).brute_force(step)
