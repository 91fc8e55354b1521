# config/settings.py
import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def _get_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw == '':
        return default
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"{name} must be a number, got '{raw}'.")


def _get_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw == '':
        return default
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{name} must be an integer, got '{raw}'.")


def _get_bool(name: str, default: bool) -> bool:
    raw = os.getenv(name)
    if raw is None or raw == '':
        return default
    if raw.strip().lower() in ('1', 'true', 'yes', 'on'):
        return True
    if raw.strip().lower() in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"{name} must be a boolean flag, got '{raw}'.")


# --- Logging ---
LOG_LEVEL = os.getenv('MARKET_SIM_LOG_LEVEL', 'INFO')
LOG_FILE = os.getenv('MARKET_SIM_LOG_FILE', 'logs/app.log')
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'

# --- Outputs ---
# Default directory for `simulate --case ...` runs when --out is omitted.
OUTPUT_DIR = os.getenv('MARKET_SIM_OUTPUT_DIR', 'results')

# --- QP solver ---
QP_TOLERANCE = _get_float('MARKET_SIM_QP_TOL', 1e-8)
QP_MAX_ITERATIONS = _get_int('MARKET_SIM_QP_MAX_ITER', 10000)

# --- Strategic bidding search ---
# Restart 0 starts from truthful bids, restart 1 from k_max, the rest are seeded draws.
BILEVEL_RESTARTS = _get_int('MARKET_SIM_RESTARTS', 8)
BILEVEL_SEED = _get_int('MARKET_SIM_SEED', 42)
BILEVEL_EVAL_BUDGET = _get_int('MARKET_SIM_EVAL_BUDGET', 5000)
ORACLE_GRID_STEP = _get_float('MARKET_SIM_GRID_STEP', 0.01)

# --- Reserve / reporting ---
# Output (MW) at or below which an SG counts as offline.
ONLINE_EPS = _get_float('MARKET_SIM_ONLINE_EPS', 1e-4)
INCLUDE_WIND_REVENUE = _get_bool('MARKET_SIM_INCLUDE_WIND_REVENUE', False)
