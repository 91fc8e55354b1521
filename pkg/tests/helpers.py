# tests/helpers.py
"""Scenario builders and independent oracles shared by the test modules."""
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog

from src.utils.data_parser import (
    BsParams,
    CompanyAssets,
    Scenario,
    SgParams,
    SolverConfig,
    validate_scenario,
)

# Small search settings so strategic tests stay quick.
FAST_SOLVER = SolverConfig(restarts=3, seed=42, eval_budget=600, grid_step=0.01)


def make_company(company_id: str, p_max: float, cost: float, horizon: int = 1,
                 ramp: Optional[float] = None, p_initial: Optional[float] = None,
                 wind: Optional[Sequence[float]] = None, bs: Optional[BsParams] = None) -> CompanyAssets:
    """A company with generous ramps unless told otherwise."""
    ramp = 2.0 * p_max if ramp is None else ramp
    p_initial = 0.0 if p_initial is None else p_initial
    wind = [0.0] * horizon if wind is None else list(wind)
    return CompanyAssets(
        id=company_id,
        sg=SgParams(p_max=p_max, ramp_up=ramp, ramp_down=ramp, p_initial=p_initial, marginal_cost=cost),
        bs=bs,
        wind_profile=tuple(float(w) for w in wind),
    )


def make_scenario(companies: Sequence[CompanyAssets], demand: Sequence[float],
                  strategic: Optional[str] = None, k_max: float = 2.0, period_hours: float = 1.0,
                  solver: Optional[SolverConfig] = None) -> Scenario:
    return validate_scenario(Scenario(
        horizon=len(demand),
        companies=tuple(companies),
        demand=tuple(float(d) for d in demand),
        period_hours=period_hours,
        strategic_company=strategic,
        k_max=k_max,
        solver=solver or FAST_SOLVER,
    ))


def random_battery(rng: np.random.Generator) -> BsParams:
    soc_min = rng.uniform(0.1, 0.3)
    soc_max = rng.uniform(0.7, 0.95)
    return BsParams(
        p_max=rng.uniform(0.3, 1.5),
        e_max=rng.uniform(1.0, 3.0),
        soc_initial=rng.uniform(soc_min, soc_max),
        soc_min=soc_min,
        soc_max=soc_max,
        levelized_cost=rng.uniform(10.0, 100.0),
    )


def random_scenario(rng: np.random.Generator, horizon: int, n_companies: int, with_bs: bool = True,
                    ramp_slack: bool = False, with_wind: bool = True,
                    period_hours: float = 1.0) -> Scenario:
    """
    Random feasible market: demand is built from a dispatch that respects every
    limit (batteries idle, so SoC stays at its initial value).
    """
    companies: List[CompanyAssets] = []
    demand = np.zeros(horizon)
    for c in range(n_companies):
        p_max = rng.uniform(2.0, 8.0)
        ramp = 2.0 * p_max / period_hours if ramp_slack else rng.uniform(0.3, 1.0) * p_max
        p_initial = rng.uniform(0.0, p_max)
        wind = rng.uniform(0.0, 2.0, size=horizon) * (rng.random(horizon) < 0.7) if with_wind else np.zeros(horizon)

        output = p_initial
        for t in range(horizon):
            low = max(0.0, output - ramp * period_hours)
            high = min(p_max, output + ramp * period_hours)
            output = rng.uniform(low, high)
            demand[t] += output + rng.uniform(0.0, wind[t])

        companies.append(CompanyAssets(
            id=f'CO-{c + 1}',
            sg=SgParams(p_max=p_max, ramp_up=ramp, ramp_down=ramp, p_initial=p_initial,
                        marginal_cost=rng.uniform(100.0, 1000.0)),
            bs=random_battery(rng) if with_bs and rng.random() < 0.7 else None,
            wind_profile=tuple(float(w) for w in wind),
        ))
    return make_scenario(companies, demand, period_hours=period_hours)


def merit_order_price(s: Scenario, t: int, offers: Optional[Sequence[float]] = None) -> float:
    """
    Price from stacking SG offers in ascending order after free wind, for
    storage-free scenarios whose ramps never bind.
    """
    offers = [c.sg.marginal_cost for c in s.companies] if offers is None else list(offers)
    residual = s.demand[t] - sum(c.wind_profile[t] for c in s.companies)
    if residual < 0:
        return 0.0
    stacked = 0.0
    for offer, company in sorted(zip(offers, s.companies), key=lambda pair: pair[0]):
        stacked += company.sg.p_max
        if stacked >= residual:
            return offer
    raise ValueError("Demand exceeds capacity.")


def merit_order_margin(s: Scenario, t: int) -> float:
    """Distance of residual demand from the nearest capacity step (0 means a degenerate price)."""
    residual = s.demand[t] - sum(c.wind_profile[t] for c in s.companies)
    steps = [0.0]
    for company in sorted(s.companies, key=lambda c: c.sg.marginal_cost):
        steps.append(steps[-1] + company.sg.p_max)
    return min(abs(residual - step) for step in steps)


def linprog_dispatch(s: Scenario, bs_fixed: Optional[np.ndarray] = None,
                     offers: Optional[Sequence[float]] = None) -> Tuple[float, np.ndarray]:
    """
    Clearing cost with HiGHS for given battery powers (zero when omitted).
    Battery cost is added to the LP objective. Returns (objective, sg[c, t]).
    """
    n_companies, horizon, dt = len(s.companies), s.horizon, s.period_hours
    offers = [c.sg.marginal_cost for c in s.companies] if offers is None else list(offers)
    bs_fixed = np.zeros((n_companies, horizon)) if bs_fixed is None else np.asarray(bs_fixed, dtype=float)

    def sg_col(c: int, t: int) -> int:
        return c * horizon + t

    def wt_col(c: int, t: int) -> int:
        return n_companies * horizon + c * horizon + t

    n = 2 * n_companies * horizon
    cost = np.zeros(n)
    bounds = []
    for c, company in enumerate(s.companies):
        sg = company.sg
        for t in range(horizon):
            cost[sg_col(c, t)] = offers[c] * dt
            if t == 0:
                bounds.append((max(0.0, sg.p_initial - sg.ramp_down * dt), min(sg.p_max, sg.p_initial + sg.ramp_up * dt)))
            else:
                bounds.append((0.0, sg.p_max))
    for c, company in enumerate(s.companies):
        for t in range(horizon):
            bounds.append((0.0, company.wind_profile[t]))

    a_eq = np.zeros((horizon, n))
    b_eq = np.asarray(s.demand, dtype=float) - bs_fixed.sum(axis=0)
    for t in range(horizon):
        for c in range(n_companies):
            a_eq[t, sg_col(c, t)] = 1.0
            a_eq[t, wt_col(c, t)] = 1.0

    rows, rhs = [], []
    for c, company in enumerate(s.companies):
        for t in range(1, horizon):
            up = np.zeros(n)
            up[sg_col(c, t)], up[sg_col(c, t - 1)] = 1.0, -1.0
            rows.append(up)
            rhs.append(company.sg.ramp_up * dt)
            rows.append(-up)
            rhs.append(company.sg.ramp_down * dt)

    result = linprog(
        cost,
        A_ub=np.array(rows) if rows else None,
        b_ub=np.array(rhs) if rows else None,
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=bounds,
        method='highs',
    )
    if result.status != 0:
        return np.inf, np.zeros((n_companies, horizon))
    battery_cost = sum(
        company.bs.levelized_cost * dt * float(bs_fixed[c] @ bs_fixed[c])
        for c, company in enumerate(s.companies) if company.bs is not None
    )
    sg_values = result.x[:n_companies * horizon].reshape(n_companies, horizon)
    return float(result.fun) + battery_cost, sg_values


def grid_oracle_two_period(s: Scenario, step: float = 0.01) -> float:
    """
    Brute-force clearing cost for T = 2 with one battery: the cyclic SoC
    forces P_BS,2 = -P_BS,1, so the battery is gridded and the rest solved as an LP.
    """
    assert s.horizon == 2
    storage = [c for c, company in enumerate(s.companies) if company.bs is not None]
    assert len(storage) == 1
    c = storage[0]
    bs = s.companies[c].bs
    low = max(-bs.p_max, (bs.soc_initial - bs.soc_max) * bs.e_max / s.period_hours)
    high = min(bs.p_max, (bs.soc_initial - bs.soc_min) * bs.e_max / s.period_hours)

    def cost(power: float) -> float:
        fixed = np.zeros((len(s.companies), 2))
        fixed[c] = [power, -power]
        return linprog_dispatch(s, fixed)[0]

    # The cost is convex in the battery power, so a finer pass around the
    # coarse minimum is enough.
    coarse = np.append(np.arange(low, high, step), high)
    values = [cost(p) for p in coarse]
    centre = coarse[int(np.argmin(values))]
    fine = np.linspace(max(low, centre - step), min(high, centre + step), 21)
    return min(min(values), min(cost(p) for p in fine))
