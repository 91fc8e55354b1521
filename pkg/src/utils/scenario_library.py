# src/utils/scenario_library.py
import logging
from pathlib import Path
from typing import Dict, Optional

import pandas as pd

from .data_parser import BsParams, CompanyAssets, Scenario, SgParams, SolverConfig, validate_scenario

DATA_DIR = Path(__file__).resolve().parent.parent / 'data'
TABLE1_PROFILES = DATA_DIR / 'table1_profiles.csv'

# Generation-source parameters of the three-company case study.
# sg: p_max, ramp_up, ramp_down, p_initial, marginal_cost
# bs: p_max, e_max, soc_initial, soc_min, soc_max, levelized_cost
TABLE1_ASSETS: Dict[str, Dict[str, tuple]] = {
    'CO-1': {'sg': (4.0, 2.0, 2.0, 2.0, 900.0), 'bs': (0.6, 1.0, 0.4, 0.2, 0.9, 50.0)},
    'CO-2': {'sg': (5.0, 2.5, 2.5, 3.0, 600.0), 'bs': (0.6, 1.0, 0.4, 0.2, 0.9, 50.0)},
    'CO-3': {'sg': (6.0, 3.0, 3.0, 4.0, 500.0), 'bs': (1.2, 2.0, 0.4, 0.2, 0.9, 50.0)},
}
TABLE1_K_MAX = 2.0


def load_profiles(path: Path = TABLE1_PROFILES) -> pd.DataFrame:
    """
    Reads the hourly demand and per-company wind availability profile.
    The bundled profile is synthetic: wind covers demand before 10:00 and the
    18:00 peak needs every SG at rated power.
    """
    frame = pd.read_csv(path)
    missing = {'hour', 'demand'} - set(frame.columns)
    if missing:
        raise ValueError(f"Profile file {path} is missing columns: {sorted(missing)}")
    return frame.sort_values('hour').reset_index(drop=True)


def table1_scenario(solver: Optional[SolverConfig] = None) -> Scenario:
    """
    Builds the bundled three-company case (T = 24, k_max = 2, no strategic company).
    Args:
        solver: Optional solver settings to attach; defaults to SolverConfig().
    Returns:
        The validated scenario.
    """
    profiles = load_profiles()
    companies = []
    for company_id, assets in TABLE1_ASSETS.items():
        column = f'wind_{company_id}'
        if column not in profiles.columns:
            raise ValueError(f"Profile file has no wind column for {company_id}.")
        companies.append(CompanyAssets(
            id=company_id,
            sg=SgParams(*assets['sg']),
            bs=BsParams(*assets['bs']),
            wind_profile=tuple(float(v) for v in profiles[column]),
        ))

    scenario = Scenario(
        horizon=len(profiles),
        companies=tuple(companies),
        demand=tuple(float(v) for v in profiles['demand']),
        period_hours=1.0,
        strategic_company=None,
        k_max=TABLE1_K_MAX,
        solver=solver or SolverConfig(),
    )
    logging.debug(f"Built bundled case with {len(companies)} companies over {scenario.horizon} periods.")
    return validate_scenario(scenario)
