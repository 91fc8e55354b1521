# tests/test_reserve_analytics.py
import logging

import numpy as np
import pytest

from src.market_clearing import clear_market
from src.reserve_analytics import (
    economic_report,
    lerner_index,
    reserve_series,
    reserve_type1,
    reserve_type2,
)
from src.utils.data_parser import BidVector, DispatchResult, SgParams
from tests.helpers import make_company, make_scenario, random_scenario

EPS = 1e-4


def unit(p_max, ramp_up):
    return SgParams(p_max=p_max, ramp_up=ramp_up, ramp_down=ramp_up, p_initial=0.0, marginal_cost=500.0)


@pytest.fixture
def duopoly():
    """Strategic CO-1 (500 ¥/MWh, 6 MW) and CO-2 (600 ¥/MWh, 5 MW) serving 8 MW."""
    return make_scenario(
        [make_company('CO-1', 6.0, 500.0, p_initial=6.0), make_company('CO-2', 5.0, 600.0, p_initial=2.0)],
        [8.0],
    )


def dispatch(company_ids, sg, prices, wt=None, bs=None):
    sg = np.asarray(sg, dtype=float)
    return DispatchResult(
        company_ids=tuple(company_ids),
        sg_output=sg,
        bs_power=np.zeros_like(sg) if bs is None else np.asarray(bs, dtype=float),
        wt_output=np.zeros_like(sg) if wt is None else np.asarray(wt, dtype=float),
        soc=np.full_like(sg, np.nan),
        prices=np.asarray(prices, dtype=float),
        objective_value=0.0,
    )


@pytest.mark.parametrize("p_sg,p_max,expected", [(0.0, 4.0, 0.0), (2.0, 4.0, 2.0), (4.0, 4.0, 0.0)])
def test_type1_reserve(p_sg, p_max, expected):
    assert reserve_type1(p_sg, unit(p_max, 1.0), EPS) == pytest.approx(expected)


@pytest.mark.parametrize("p_sg,p_max,ramp_up,expected", [(1.0, 6.0, 3.0, 3.0), (2.0, 4.0, 2.0, 2.0), (0.0, 4.0, 2.0, 0.0)])
def test_type2_reserve(p_sg, p_max, ramp_up, expected):
    assert reserve_type2(p_sg, unit(p_max, ramp_up), EPS) == pytest.approx(expected)


def test_units_below_threshold_count_as_offline():
    params = unit(4.0, 2.0)
    assert reserve_type1(0.5 * EPS, params, EPS) == 0.0
    assert reserve_type2(0.5 * EPS, params, EPS) == 0.0
    assert reserve_type1(2.0 * EPS, params, EPS) > 0.0


def test_type2_never_exceeds_type1():
    rng = np.random.default_rng(8)
    for _ in range(500):
        p_max = rng.uniform(1.0, 10.0)
        params = unit(p_max, rng.uniform(0.1, 5.0))
        p = rng.uniform(0.0, p_max)
        r1, r2 = reserve_type1(p, params, EPS), reserve_type2(p, params, EPS)
        assert 0.0 <= r2 <= r1 <= p_max


def test_reserves_shrink_as_output_grows():
    params = unit(6.0, 2.0)
    outputs = np.linspace(0.01, 6.0, 50)
    type1 = [reserve_type1(p, params, EPS) for p in outputs]
    type2 = [reserve_type2(p, params, EPS) for p in outputs]
    assert np.all(np.diff(type1) < 0)
    assert np.all(np.diff(type2) <= 0)


def test_reserve_series_over_a_clearing(duopoly):
    d = clear_market(duopoly)
    series = reserve_series(duopoly, d)
    # CO-1 at 6 of 6 MW, CO-2 at 2 of 5 MW with a 10 MW/h ramp
    np.testing.assert_allclose(series.type1[:, 0], [0.0, 3.0], atol=1e-6)
    np.testing.assert_allclose(series.type2[:, 0], [0.0, 3.0], atol=1e-6)
    assert series.online_count[0] == 2
    assert series.mean_type1 == pytest.approx(3.0, abs=1e-6)


def test_averages_include_offline_periods():
    s = make_scenario([make_company('CO-1', 4.0, 500.0, horizon=2)], [0.0, 2.0])
    d = dispatch(['CO-1'], [[0.0, 2.0]], [0.0, 500.0])
    series = reserve_series(s, d)
    np.testing.assert_allclose(series.system_type1, [0.0, 2.0])
    assert series.mean_type1 == pytest.approx(1.0)
    np.testing.assert_array_equal(series.online_count, [0, 1])


def test_random_clearings_keep_reserve_order():
    rng = np.random.default_rng(77)
    for _ in range(30):
        s = random_scenario(rng, int(rng.integers(1, 5)), int(rng.integers(1, 4)))
        series = reserve_series(s, clear_market(s))
        assert np.all(series.type2 <= series.type1 + 1e-12)
        assert np.all(series.type2 >= 0.0)


def test_lerner_index_of_truthful_and_capped_bids():
    series, mean = lerner_index(BidVector.truthful(3))
    np.testing.assert_array_equal(series, 0.0)
    assert mean == 0.0
    _, mean = lerner_index(BidVector((2.0, 2.0)))
    assert mean == pytest.approx(0.5)


def test_lerner_index_over_a_bid_sweep():
    k = np.linspace(1.0, 2.0, 101)
    series, mean = lerner_index(BidVector.from_array(k))
    np.testing.assert_allclose(series, (k - 1.0) / k, atol=1e-12)
    assert np.all(np.diff(series) >= 0)
    assert np.all((series >= 0.0) & (series <= 0.5))
    assert mean == pytest.approx(float(np.mean((k - 1.0) / k)), abs=1e-12)


def test_fee_and_profit_of_the_merit_order_duopoly(duopoly):
    d = dispatch(['CO-1', 'CO-2'], [[6.0], [2.0]], [600.0])
    report = economic_report(duopoly, d)
    # 600 * 8 = 4800 ¥ and (600 - 500) * 6 = 600 ¥, both reported in k¥
    assert report.energy_fee == pytest.approx(4.8)
    assert report.profits['CO-1'] == pytest.approx(0.6)
    assert report.profits['CO-2'] == pytest.approx(0.0)
    assert report.label == 'pcm'
    assert report.strategic_company is None
    np.testing.assert_array_equal(report.lerner_series, 0.0)


def test_cleared_duopoly_report_matches_hand_values(duopoly):
    report = economic_report(duopoly, clear_market(duopoly))
    assert report.energy_fee == pytest.approx(4.8, abs=1e-6)
    assert report.profits['CO-1'] == pytest.approx(0.6, abs=1e-6)


def test_zero_prices_give_zero_fee_and_no_positive_profit():
    s = make_scenario(
        [make_company('CO-1', 4.0, 500.0, horizon=2), make_company('CO-2', 4.0, 300.0, horizon=2)],
        [3.0, 4.0],
    )
    d = dispatch(['CO-1', 'CO-2'], [[1.0, 2.0], [2.0, 2.0]], [0.0, 0.0])
    report = economic_report(s, d)
    assert report.energy_fee == 0.0
    assert all(profit <= 0.0 for profit in report.profits.values())


def test_strategic_report_carries_bids():
    s = make_scenario(
        [make_company('CO-1', 6.0, 500.0, p_initial=3.0), make_company('CO-2', 5.0, 600.0)],
        [3.0], strategic='CO-1',
    )
    bids = BidVector((1.1,))
    report = economic_report(s, clear_market(s, bids), bids)
    assert report.label == 'icm:CO-1'
    assert report.strategic_company == 'CO-1'
    assert report.lerner_mean == pytest.approx(0.1 / 1.1)
    # 550 * 3 - 500 * 3 = 150 ¥
    assert report.strategic_profit == pytest.approx(0.15, abs=1e-6)


def test_wind_revenue_follows_the_flag():
    s = make_scenario([make_company('CO-1', 4.0, 500.0, wind=[1.0])], [3.0])
    d = dispatch(['CO-1'], [[2.0]], [500.0], wt=[[1.0]])
    assert economic_report(s, d).profits['CO-1'] == pytest.approx(0.0)
    assert economic_report(s, d, include_wind_revenue=True).profits['CO-1'] == pytest.approx(0.5)


def test_mismatched_dispatch_is_rejected(duopoly):
    with pytest.raises(ValueError):
        economic_report(duopoly, dispatch(['CO-1'], [[6.0]], [600.0]))
    with pytest.raises(ValueError):
        economic_report(duopoly, dispatch(['CO-2', 'CO-1'], [[6.0], [2.0]], [600.0]))
    with pytest.raises(ValueError):
        economic_report(duopoly, dispatch(['CO-1', 'CO-2'], [[6.0], [2.0]], [600.0]), BidVector((1.0, 1.0)))


def test_unbalanced_dispatch_logs_a_warning(duopoly, caplog):
    d = dispatch(['CO-1', 'CO-2'], [[6.0], [1.0]], [600.0])
    with caplog.at_level(logging.WARNING):
        economic_report(duopoly, d)
    assert "differs from paid supply" in caplog.text
