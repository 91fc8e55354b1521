# tests/test_data_parser.py
import json
import math

import numpy as np
import pytest

from src.utils.data_parser import (
    BidVector,
    DispatchResult,
    ScenarioParser,
    ScenarioValidationError,
    SolverConfig,
    collect_violations,
    validate_scenario,
)
from src.utils.scenario_library import TABLE1_ASSETS, load_profiles, table1_scenario

# A small two-company market: one company with storage, one without.
SAMPLE_SCENARIO = {
    "horizon": 2,
    "period_hours": 1.0,
    "demand": [5.0, 6.0],
    "companies": [
        {
            "id": "CO-1",
            "sg": {"p_max": 4.0, "ramp_up": 2.0, "ramp_down": 2.0, "p_initial": 2.0, "marginal_cost": 900.0},
            "bs": {"p_max": 0.6, "e_max": 1.0, "soc_initial": 0.4, "soc_min": 0.2, "soc_max": 0.9,
                   "levelized_cost": 50.0},
            "wind_profile": [1.0, 0.5],
        },
        {
            "id": "CO-2",
            "sg": {"p_max": 5.0, "ramp_up": 2.5, "ramp_down": 2.5, "p_initial": 3.0, "marginal_cost": 600.0},
            "bs": None,
            "wind_profile": [0.0, 0.0],
        },
    ],
    "strategic_company": "CO-1",
    "k_max": 2.0,
    "solver": {"restarts": 2, "seed": 7},
}


@pytest.fixture
def parser():
    """Pytest fixture to create a ScenarioParser instance for tests."""
    return ScenarioParser()


@pytest.fixture
def document():
    """A fresh, mutable copy of the sample scenario document."""
    return json.loads(json.dumps(SAMPLE_SCENARIO))


def test_full_parse_success(parser, document):
    """
    Tests that a complete scenario document is parsed into typed dataclasses.
    """
    s = parser.parse(json.dumps(document))

    assert s.horizon == 2
    assert s.demand == (5.0, 6.0)
    assert s.company_ids == ['CO-1', 'CO-2']
    assert s.company('CO-1').sg.marginal_cost == 900.0
    assert s.company('CO-1').bs.e_max == 1.0
    assert s.company('CO-2').bs is None
    assert s.strategic_company == 'CO-1'
    assert s.solver.restarts == 2
    assert s.solver.seed == 7
    assert s.solver.eval_budget == SolverConfig().eval_budget


def test_optional_fields_take_defaults(parser, document):
    """
    Tests that period_hours, k_max, strategic_company and solver may be left out.
    """
    for key in ("period_hours", "k_max", "strategic_company", "solver"):
        del document[key]
    s = parser.from_dict(document)

    assert s.period_hours == 1.0
    assert s.k_max == 2.0
    assert s.strategic_company is None
    assert s.solver == SolverConfig()


def test_dict_round_trip(parser, document):
    s = parser.parse(json.dumps(document))
    assert parser.parse(parser.dumps(s)) == s


def test_save_and_load(parser, document, tmp_path):
    s = parser.parse(json.dumps(document))
    path = tmp_path / "nested" / "scenario.json"
    parser.save(s, path)
    assert parser.load(path) == s


def test_invalid_json_is_reported(parser):
    with pytest.raises(ScenarioValidationError) as excinfo:
        parser.parse("{not json")
    assert "not valid JSON" in str(excinfo.value)


def test_missing_fields_are_all_listed(parser, document):
    """
    Tests that every missing field is reported at once rather than one at a time.
    """
    del document["demand"]
    del document["companies"][0]["sg"]["p_max"]
    del document["companies"][1]["wind_profile"]
    with pytest.raises(ScenarioValidationError) as excinfo:
        parser.from_dict(document)
    errors = excinfo.value.errors
    assert any("'demand'" in e for e in errors)
    assert any("'p_max'" in e for e in errors)
    assert any("'wind_profile'" in e for e in errors)


def test_non_numeric_values_are_rejected(parser, document):
    document["companies"][0]["sg"]["marginal_cost"] = "cheap"
    document["demand"] = [5.0, "six"]
    with pytest.raises(ScenarioValidationError) as excinfo:
        parser.from_dict(document)
    assert len(excinfo.value.errors) == 2


def test_unknown_solver_setting_is_rejected(parser, document):
    document["solver"]["speed"] = "fast"
    with pytest.raises(ScenarioValidationError) as excinfo:
        parser.from_dict(document)
    assert "unknown solver setting 'speed'" in str(excinfo.value)


@pytest.mark.parametrize("mutate,message", [
    (lambda d: d.update(demand=[5.0]), "demand has length"),
    (lambda d: d.update(demand=[5.0, -1.0]), "demand[1] is negative"),
    (lambda d: d.update(k_max=0.5), "k_max below 1"),
    (lambda d: d.update(period_hours=0.0), "period_hours must be > 0"),
    (lambda d: d.update(strategic_company="CO-9"), "strategic_company 'CO-9'"),
    (lambda d: d["companies"][0]["sg"].update(p_initial=5.0), "p_initial"),
    (lambda d: d["companies"][0]["sg"].update(ramp_up=0.0), "ramp_up must be > 0"),
    (lambda d: d["companies"][0]["bs"].update(soc_initial=0.95), "soc_initial"),
    (lambda d: d["companies"][0]["bs"].update(soc_min=0.95), "soc_min"),
    (lambda d: d["companies"][1]["wind_profile"].append(1.0), "wind_profile has length"),
    (lambda d: d["companies"][1].update(id="CO-1"), "duplicate company id"),
    (lambda d: d.update(solver={"restarts": 0}), "solver.restarts"),
])
def test_invariant_violations(parser, document, mutate, message):
    mutate(document)
    with pytest.raises(ScenarioValidationError) as excinfo:
        parser.parse(json.dumps(document))
    assert message in str(excinfo.value)


def test_validation_error_is_a_value_error(parser, document):
    document["k_max"] = 0.5
    with pytest.raises(ValueError):
        parser.parse(json.dumps(document))


def test_valid_scenario_has_no_violations(parser, document):
    s = parser.from_dict(document)
    assert collect_violations(s) == []
    assert validate_scenario(s) is s


def test_non_finite_numbers_are_rejected(parser, document):
    s = parser.from_dict(document)
    broken = s.with_k_max(math.nan)
    assert any("k_max must be a finite number" in e for e in collect_violations(broken))


def test_scenario_helpers(parser, document):
    s = parser.from_dict(document)
    assert s.company_index('CO-2') == 1
    with pytest.raises(KeyError):
        s.company_index('CO-9')
    assert s.with_strategic(None).strategic_company is None
    assert s.with_k_max(1.5).k_max == 1.5
    assert s.with_solver({'seed': 1}).solver.seed == 1
    assert s.with_solver(None) == s


def test_bid_vector_checks():
    BidVector.truthful(3).check(3, 2.0)
    BidVector.from_array(np.array([1.0, 2.0])).check(2, 2.0)
    with pytest.raises(ValueError):
        BidVector((1.0,)).check(2, 2.0)
    with pytest.raises(ValueError):
        BidVector((0.99,)).check(1, 2.0)
    with pytest.raises(ValueError):
        BidVector((2.01,)).check(1, 2.0)


def test_dispatch_result_accessors():
    d = DispatchResult(
        company_ids=('CO-1', 'CO-2'),
        sg_output=np.array([[1.0, 2.0], [3.0, 0.0]]),
        bs_power=np.array([[0.5, -0.5], [0.0, 0.0]]),
        wt_output=np.array([[0.0, 1.0], [0.0, 0.0]]),
        soc=np.full((2, 2), np.nan),
        prices=np.array([600.0, 900.0]),
        objective_value=0.0,
    )
    assert d.horizon == 2
    assert d.row('CO-2') == 1
    np.testing.assert_allclose(d.supply(), [4.5, 2.5])
    with pytest.raises(ValueError):
        d.sg_output[0, 0] = 9.0


def test_bundled_profiles():
    profiles = load_profiles()
    assert len(profiles) == 24
    assert list(profiles['hour']) == list(range(24))
    assert (profiles['demand'] > 0).all()


def test_bundled_scenario_is_valid_and_exportable(parser):
    s = table1_scenario()
    assert s.horizon == 24
    assert s.company_ids == list(TABLE1_ASSETS)
    assert s.strategic_company is None
    assert s.k_max == 2.0
    assert parser.parse(parser.dumps(s)) == s
