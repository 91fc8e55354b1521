import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .strategic_bidding import company_profit
from .utils.data_parser import BidVector, DispatchResult, Scenario, SgParams


def reserve_type1(p_sg: float, params: SgParams, eps: float) -> float:
    """Headroom of an online unit ignoring ramping; 0 when the unit is offline (p_sg <= eps)."""
    if p_sg <= eps:
        return 0.0
    return max(params.p_max - p_sg, 0.0)


def reserve_type2(p_sg: float, params: SgParams, eps: float) -> float:
    """Headroom of an online unit capped by its one-period ramp-up capability."""
    if p_sg <= eps:
        return 0.0
    return min(max(params.p_max - p_sg, 0.0), params.ramp_up)


@dataclass(frozen=True, eq=False)
class ReserveSeries:
    """
    Spinning reserve per company and period (MW), arrays shaped [company, period].
    The averages run over every period, offline ones included.
    """
    company_ids: Tuple[str, ...]
    type1: np.ndarray
    type2: np.ndarray
    online_count: np.ndarray

    @property
    def system_type1(self) -> np.ndarray:
        return self.type1.sum(axis=0)

    @property
    def system_type2(self) -> np.ndarray:
        return self.type2.sum(axis=0)

    @property
    def mean_type1(self) -> float:
        return float(self.system_type1.mean())

    @property
    def mean_type2(self) -> float:
        return float(self.system_type2.mean())


def reserve_series(s: Scenario, d: DispatchResult, eps: Optional[float] = None) -> ReserveSeries:
    eps = s.solver.online_eps if eps is None else eps
    type1 = np.zeros_like(d.sg_output)
    type2 = np.zeros_like(d.sg_output)
    for c, company in enumerate(s.companies):
        for t in range(s.horizon):
            p = float(d.sg_output[c, t])
            type1[c, t] = reserve_type1(p, company.sg, eps)
            type2[c, t] = reserve_type2(p, company.sg, eps)
    online = (d.sg_output > eps).sum(axis=0)
    return ReserveSeries(company_ids=tuple(s.company_ids), type1=type1, type2=type2, online_count=online)


def lerner_index(bids: BidVector) -> Tuple[np.ndarray, float]:
    """
    Markup of multiplicative bids over true cost.
    Args:
        bids: Strategic multipliers k_t >= 1.
    Returns:
        (L_t = (k_t - 1) / k_t per period, mean of L_t).
    """
    k = bids.as_array()
    series = (k - 1.0) / k
    return series, float(series.mean())


@dataclass(frozen=True, eq=False)
class MarketReport:
    """
    Economic indicators of one clearing. energy_fee and profits are in k¥,
    prices in ¥/MWh.
    """
    label: str
    energy_fee: float
    profits: Dict[str, float]
    lerner_series: np.ndarray
    lerner_mean: float
    reserve: ReserveSeries
    prices: np.ndarray
    dispatch: DispatchResult
    strategic_company: Optional[str] = None
    strategic_profit: Optional[float] = None


def economic_report(s: Scenario, d: DispatchResult, bids: Optional[BidVector] = None,
                    include_wind_revenue: Optional[bool] = None, eps: Optional[float] = None,
                    label: Optional[str] = None) -> MarketReport:
    """
    Builds the economic indicators for a clearing result.
    Args:
        s: The scenario that was cleared.
        d: Its DispatchResult.
        bids: Strategic bids used, None for a competitive run (Lerner index all zeros).
        include_wind_revenue: Add lambda_t * P_WT to profits; defaults to the scenario setting.
        eps: Online threshold for reserves; defaults to the scenario setting.
        label: Case name stored on the report.
    Returns:
        The MarketReport.
    """
    company_count = len(s.companies)
    expected = (company_count, s.horizon)
    if d.sg_output.shape != expected or d.prices.shape != (s.horizon,):
        raise ValueError(
            f"Dispatch shape {d.sg_output.shape} with {d.prices.shape[0]} prices does not match scenario {expected}."
        )
    if tuple(d.company_ids) != tuple(s.company_ids):
        raise ValueError(f"Dispatch companies {d.company_ids} do not match scenario companies {s.company_ids}.")
    if bids is not None and len(bids.k) != s.horizon:
        raise ValueError(f"Bid vector has length {len(bids.k)}, expected {s.horizon}.")

    wind = s.solver.include_wind_revenue if include_wind_revenue is None else include_wind_revenue
    demand = np.asarray(s.demand)
    fee = float(d.prices @ demand) * s.period_hours

    supplied = float(d.prices @ d.supply()) * s.period_hours
    if abs(supplied - fee) > 1e-6 * max(1.0, abs(fee)):
        logging.warning(f"Energy fee {fee:.6f} differs from paid supply {supplied:.6f}.")

    profits = {company_id: company_profit(d, s, company_id, wind) / 1000.0 for company_id in s.company_ids}

    if bids is None:
        lerner_series, lerner_mean = np.zeros(s.horizon), 0.0
    else:
        lerner_series, lerner_mean = lerner_index(bids)

    strategic = d.strategic_company if bids is not None else None
    return MarketReport(
        label=label or ('pcm' if strategic is None else f'icm:{strategic}'),
        energy_fee=fee / 1000.0,
        profits=profits,
        lerner_series=lerner_series,
        lerner_mean=lerner_mean,
        reserve=reserve_series(s, d, eps),
        prices=d.prices,
        dispatch=d,
        strategic_company=strategic,
        strategic_profit=profits.get(strategic) if strategic is not None else None,
    )
