# src/utils/data_parser.py
import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from config.settings import (
    BILEVEL_EVAL_BUDGET,
    BILEVEL_RESTARTS,
    BILEVEL_SEED,
    INCLUDE_WIND_REVENUE,
    ONLINE_EPS,
    ORACLE_GRID_STEP,
    QP_MAX_ITERATIONS,
    QP_TOLERANCE,
)


class ScenarioValidationError(ValueError):
    """
    Raised when a scenario (or its JSON document) breaks one or more invariants.
    The full list of violations is kept in `errors`.
    """
    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class SgParams:
    """Synchronous generator: limits in MW, ramps in MW/h, marginal cost in ¥/MWh."""
    p_max: float
    ramp_up: float
    ramp_down: float
    p_initial: float
    marginal_cost: float


@dataclass(frozen=True)
class BsParams:
    """
    Battery storage. SoC values are fractions of e_max.
    levelized_cost is the coefficient of the squared power term (¥/MW²·h).
    """
    p_max: float
    e_max: float
    soc_initial: float
    soc_min: float
    soc_max: float
    levelized_cost: float


@dataclass(frozen=True)
class CompanyAssets:
    id: str
    sg: SgParams
    bs: Optional[BsParams]
    wind_profile: Tuple[float, ...]


@dataclass(frozen=True)
class SolverConfig:
    """
    Numerical knobs carried in the scenario file under `solver`.
    Defaults come from config.settings so they can be set from the environment.
    """
    restarts: int = BILEVEL_RESTARTS
    seed: int = BILEVEL_SEED
    eval_budget: int = BILEVEL_EVAL_BUDGET
    grid_step: float = ORACLE_GRID_STEP
    improve_tol: float = 1e-4
    min_step: float = 1e-3
    coarse_points: int = 8
    workers: int = 1
    qp_tol: float = QP_TOLERANCE
    qp_max_iter: int = QP_MAX_ITERATIONS
    online_eps: float = ONLINE_EPS
    include_wind_revenue: bool = INCLUDE_WIND_REVENUE

    def merged(self, overrides: Optional[Dict[str, Any]]) -> "SolverConfig":
        """Returns a copy with the given fields replaced. Unknown keys are rejected."""
        if not overrides:
            return self
        known = {f.name for f in fields(self)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ScenarioValidationError([f"unknown solver setting '{key}'" for key in unknown])
        return replace(self, **overrides)


@dataclass(frozen=True)
class Scenario:
    """
    A full market instance: the companies, the horizon, demand and which company
    (if any) bids strategically.
    """
    horizon: int
    companies: Tuple[CompanyAssets, ...]
    demand: Tuple[float, ...]
    period_hours: float = 1.0
    strategic_company: Optional[str] = None
    k_max: float = 2.0
    solver: SolverConfig = field(default_factory=SolverConfig)

    @property
    def company_ids(self) -> List[str]:
        return [c.id for c in self.companies]

    def company_index(self, company_id: str) -> int:
        for i, company in enumerate(self.companies):
            if company.id == company_id:
                return i
        raise KeyError(f"Unknown company '{company_id}'.")

    def company(self, company_id: str) -> CompanyAssets:
        return self.companies[self.company_index(company_id)]

    def with_strategic(self, company_id: Optional[str]) -> "Scenario":
        return replace(self, strategic_company=company_id)

    def with_k_max(self, k_max: float) -> "Scenario":
        return replace(self, k_max=k_max)

    def with_solver(self, overrides: Optional[Dict[str, Any]]) -> "Scenario":
        return replace(self, solver=self.solver.merged(overrides))


@dataclass(frozen=True)
class BidVector:
    """Per-period multipliers k_t applied to the strategic company's SG offer."""
    k: Tuple[float, ...]

    @classmethod
    def truthful(cls, horizon: int) -> "BidVector":
        return cls(tuple([1.0] * horizon))

    @classmethod
    def from_array(cls, values: Any) -> "BidVector":
        return cls(tuple(float(v) for v in np.asarray(values, dtype=float).ravel()))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.k, dtype=float)

    def check(self, horizon: int, k_max: float, tol: float = 1e-12) -> None:
        """Raises ValueError unless the bids have length `horizon` and lie in [1, k_max]."""
        if len(self.k) != horizon:
            raise ValueError(f"Bid vector has length {len(self.k)}, expected {horizon}.")
        for t, k in enumerate(self.k):
            if not math.isfinite(k) or k < 1.0 - tol or k > k_max + tol:
                raise ValueError(f"Bid k[{t}] = {k} outside [1, {k_max}].")


@dataclass(frozen=True, eq=False)
class DispatchResult:
    """
    Outcome of one market clearing. Arrays indexed [company, period] follow
    `company_ids`; bs_power is positive when discharging. SoC of a company
    without storage is NaN.
    """
    company_ids: Tuple[str, ...]
    sg_output: np.ndarray
    bs_power: np.ndarray
    wt_output: np.ndarray
    soc: np.ndarray
    prices: np.ndarray
    objective_value: float
    bids: Optional[BidVector] = None
    strategic_company: Optional[str] = None

    def __post_init__(self):
        for name in ('sg_output', 'bs_power', 'wt_output', 'soc', 'prices'):
            array = np.array(getattr(self, name), dtype=float)
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @property
    def horizon(self) -> int:
        return int(self.prices.shape[0])

    def row(self, company_id: str) -> int:
        return self.company_ids.index(company_id)

    def supply(self) -> np.ndarray:
        """Total injection per period (SG + BS + WT)."""
        return self.sg_output.sum(axis=0) + self.bs_power.sum(axis=0) + self.wt_output.sum(axis=0)


def collect_violations(s: Scenario) -> List[str]:
    """Returns every invariant violation of the scenario (empty list when valid)."""
    errors: List[str] = []

    def finite(label: str, value: float) -> bool:
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            errors.append(f"{label} must be a finite number, got {value!r}")
            return False
        return True

    if not isinstance(s.horizon, int) or s.horizon < 1:
        errors.append(f"horizon must be an integer >= 1, got {s.horizon!r}")
    horizon = s.horizon if isinstance(s.horizon, int) else -1

    if finite("period_hours", s.period_hours) and s.period_hours <= 0:
        errors.append(f"period_hours must be > 0, got {s.period_hours}")
    if finite("k_max", s.k_max) and s.k_max < 1:
        errors.append(f"k_max below 1 (got {s.k_max})")

    if len(s.demand) != horizon:
        errors.append(f"demand has length {len(s.demand)}, expected horizon {horizon}")
    for t, value in enumerate(s.demand):
        if finite(f"demand[{t}]", value) and value < 0:
            errors.append(f"demand[{t}] is negative ({value})")

    if not s.companies:
        errors.append("scenario has no companies")
    seen = set()
    for company in s.companies:
        label = f"company {company.id}"
        if company.id in seen:
            errors.append(f"{label}: duplicate company id")
        seen.add(company.id)

        sg = company.sg
        values_ok = all(finite(f"{label}: sg.{f.name}", getattr(sg, f.name)) for f in fields(sg))
        if values_ok:
            if sg.p_max <= 0:
                errors.append(f"{label}: sg.p_max must be > 0")
            if sg.ramp_up <= 0:
                errors.append(f"{label}: sg.ramp_up must be > 0")
            if sg.ramp_down <= 0:
                errors.append(f"{label}: sg.ramp_down must be > 0")
            if not 0 <= sg.p_initial <= sg.p_max:
                errors.append(f"{label}: sg.p_initial {sg.p_initial} outside [0, {sg.p_max}]")
            if sg.marginal_cost < 0:
                errors.append(f"{label}: sg.marginal_cost must be >= 0")

        bs = company.bs
        if bs is not None:
            values_ok = all(finite(f"{label}: bs.{f.name}", getattr(bs, f.name)) for f in fields(bs))
            if values_ok:
                if bs.p_max <= 0:
                    errors.append(f"{label}: bs.p_max must be > 0")
                if bs.e_max <= 0:
                    errors.append(f"{label}: bs.e_max must be > 0")
                if bs.soc_min > bs.soc_max:
                    errors.append(f"{label}: soc_min {bs.soc_min} > soc_max {bs.soc_max}")
                if not 0 <= bs.soc_min <= bs.soc_initial <= bs.soc_max <= 1:
                    errors.append(
                        f"{label}: require 0 <= soc_min <= soc_initial <= soc_max <= 1, got "
                        f"{bs.soc_min}/{bs.soc_initial}/{bs.soc_max}"
                    )
                if bs.levelized_cost < 0:
                    errors.append(f"{label}: bs.levelized_cost must be >= 0")

        if len(company.wind_profile) != horizon:
            errors.append(
                f"{label}: wind_profile has length {len(company.wind_profile)}, expected horizon {horizon}"
            )
        for t, value in enumerate(company.wind_profile):
            if finite(f"{label}: wind_profile[{t}]", value) and value < 0:
                errors.append(f"{label}: wind_profile[{t}] is negative ({value})")

    if s.strategic_company is not None and s.strategic_company not in seen:
        errors.append(f"strategic_company '{s.strategic_company}' is not a company in the scenario")

    cfg = s.solver
    if cfg.restarts < 1:
        errors.append("solver.restarts must be >= 1")
    if cfg.eval_budget < 1:
        errors.append("solver.eval_budget must be >= 1")
    if cfg.grid_step <= 0:
        errors.append("solver.grid_step must be > 0")
    if cfg.min_step <= 0:
        errors.append("solver.min_step must be > 0")
    if cfg.coarse_points < 1:
        errors.append("solver.coarse_points must be >= 1")
    if cfg.workers < 1:
        errors.append("solver.workers must be >= 1")
    if cfg.qp_tol <= 0:
        errors.append("solver.qp_tol must be > 0")
    if cfg.qp_max_iter < 1:
        errors.append("solver.qp_max_iter must be >= 1")
    if cfg.online_eps < 0:
        errors.append("solver.online_eps must be >= 0")
    return errors


def validate_scenario(s: Scenario) -> Scenario:
    """
    Checks every scenario invariant.
    Args:
        s: The scenario to check.
    Returns:
        The same scenario object when it is valid.
    Raises:
        ScenarioValidationError: listing all violations otherwise.
    """
    errors = collect_violations(s)
    if errors:
        logging.debug(f"Scenario validation found {len(errors)} problem(s).")
        raise ScenarioValidationError(errors)
    return s


class ScenarioParser:
    """
    Converts scenarios to and from their JSON document form. Field names match
    the dataclass fields; `bs` may be null for a company without storage.
    """

    def parse(self, text: str) -> Scenario:
        """
        Parses a JSON document into a validated Scenario.
        Args:
            text: The JSON text.
        Returns:
            The parsed scenario.
        """
        try:
            document = json.loads(text)
        except json.JSONDecodeError as e:
            raise ScenarioValidationError([f"scenario is not valid JSON: {e}"])
        return validate_scenario(self.from_dict(document))

    def load(self, path: Union[str, Path]) -> Scenario:
        path = Path(path)
        logging.info(f"Loading scenario from {path}")
        return self.parse(path.read_text(encoding='utf-8'))

    def from_dict(self, document: Dict[str, Any]) -> Scenario:
        errors: List[str] = []
        if not isinstance(document, dict):
            raise ScenarioValidationError(["scenario document must be a JSON object"])

        def required(mapping: Dict[str, Any], key: str, where: str) -> Any:
            if key not in mapping:
                errors.append(f"{where}: missing field '{key}'")
                return None
            return mapping[key]

        horizon = required(document, 'horizon', 'scenario')
        demand = required(document, 'demand', 'scenario')
        raw_companies = required(document, 'companies', 'scenario')

        companies: List[CompanyAssets] = []
        for i, raw in enumerate(raw_companies or []):
            where = f"companies[{i}]"
            if not isinstance(raw, dict):
                errors.append(f"{where}: must be an object")
                continue
            company_id = required(raw, 'id', where)
            raw_sg = required(raw, 'sg', where)
            wind = required(raw, 'wind_profile', where)
            sg = self._build(SgParams, raw_sg, f"{where}.sg", errors)
            bs = None
            if raw.get('bs') is not None:
                bs = self._build(BsParams, raw['bs'], f"{where}.bs", errors)
            if company_id is None or sg is None or wind is None:
                continue
            companies.append(CompanyAssets(
                id=str(company_id),
                sg=sg,
                bs=bs,
                wind_profile=self._series(wind, f"{where}.wind_profile", errors),
            ))

        demand_series = self._series(demand, 'demand', errors) if demand is not None else tuple()

        solver = SolverConfig()
        if document.get('solver'):
            try:
                solver = solver.merged(document['solver'])
            except ScenarioValidationError as e:
                errors.extend(e.errors)

        if errors:
            raise ScenarioValidationError(errors)

        return Scenario(
            horizon=horizon,
            companies=tuple(companies),
            demand=demand_series,
            period_hours=float(document.get('period_hours', 1.0)),
            strategic_company=document.get('strategic_company'),
            k_max=float(document.get('k_max', 2.0)),
            solver=solver,
        )

    def to_dict(self, s: Scenario) -> Dict[str, Any]:
        def params(obj: Any) -> Optional[Dict[str, Any]]:
            if obj is None:
                return None
            return {f.name: getattr(obj, f.name) for f in fields(obj)}

        return {
            'horizon': s.horizon,
            'period_hours': s.period_hours,
            'demand': list(s.demand),
            'companies': [
                {
                    'id': c.id,
                    'sg': params(c.sg),
                    'bs': params(c.bs),
                    'wind_profile': list(c.wind_profile),
                }
                for c in s.companies
            ],
            'strategic_company': s.strategic_company,
            'k_max': s.k_max,
            'solver': params(s.solver),
        }

    def dumps(self, s: Scenario) -> str:
        return json.dumps(self.to_dict(s), indent=2)

    def save(self, s: Scenario, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(s) + "\n", encoding='utf-8')
        logging.info(f"Scenario written to {path}")

    def _build(self, cls: Any, raw: Any, where: str, errors: List[str]) -> Any:
        """Builds a parameter dataclass from a JSON object, recording missing or non-numeric fields."""
        if not isinstance(raw, dict):
            errors.append(f"{where}: must be an object")
            return None
        values = {}
        for f in fields(cls):
            if f.name not in raw:
                errors.append(f"{where}: missing field '{f.name}'")
                continue
            try:
                values[f.name] = float(raw[f.name])
            except (TypeError, ValueError):
                errors.append(f"{where}.{f.name}: expected a number, got {raw[f.name]!r}")
        if len(values) != len(fields(cls)):
            return None
        return cls(**values)

    def _series(self, raw: Any, where: str, errors: List[str]) -> Tuple[float, ...]:
        try:
            return tuple(float(v) for v in raw)
        except (TypeError, ValueError):
            errors.append(f"{where}: expected a list of numbers")
            return tuple()
