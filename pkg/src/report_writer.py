import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from .reserve_analytics import MarketReport

FLOAT_FORMAT = '%.6f'
DISPATCH_FILE = 'dispatch.csv'
SUMMARY_FILE = 'summary.csv'
RESERVE_SUMMARY_FILE = 'reserve_summary.csv'
SUMMARY_JSON = 'summary.json'
PARTIAL_NOTE = 'PARTIAL_RESULTS.txt'


def case_dir_name(label: str) -> str:
    """Directory name for a case label ('icm:CO-1' -> 'icm_CO-1')."""
    return label.replace(':', '_')


def _clean(values: Any) -> np.ndarray:
    # Rounding first keeps -0.000000 out of the files.
    return np.round(np.asarray(values, dtype=float), 6) + 0.0


class ReportWriter:
    """
    Writes case tables and cross-case summaries as CSV/JSON under one output directory.
    """
    def __init__(self, output_dir: Union[str, Path]):
        """
        Args:
            output_dir: Root directory for all artifacts.
        """
        self.output_dir = Path(output_dir)

    def ensure_writable(self) -> None:
        """
        Creates the output directory and checks a file can be written there.
        Raises:
            OSError: if the directory cannot be created or written.
        """
        self.output_dir.mkdir(parents=True, exist_ok=True)
        marker = self.output_dir / '.write_check'
        marker.write_text('ok', encoding='utf-8')
        marker.unlink()

    def dispatch_frame(self, report: MarketReport) -> pd.DataFrame:
        """
        One row per period: price, Lerner index, system reserves and
        per-company SG/BS/WT/SoC/reserve columns.
        """
        d, reserve = report.dispatch, report.reserve
        columns: Dict[str, Any] = {
            'price': _clean(report.prices),
            'lerner': _clean(report.lerner_series),
            'bid_k': _clean(d.bids.as_array() if d.bids is not None else np.ones(d.horizon)),
            'reserve_type1': _clean(reserve.system_type1),
            'reserve_type2': _clean(reserve.system_type2),
            'online_sg': reserve.online_count.astype(int),
        }
        for c, company_id in enumerate(d.company_ids):
            columns[f'{company_id}_sg'] = _clean(d.sg_output[c])
            columns[f'{company_id}_bs'] = _clean(d.bs_power[c])
            columns[f'{company_id}_wt'] = _clean(d.wt_output[c])
            columns[f'{company_id}_soc'] = _clean(d.soc[c])
            columns[f'{company_id}_type1'] = _clean(reserve.type1[c])
            columns[f'{company_id}_type2'] = _clean(reserve.type2[c])
        frame = pd.DataFrame(columns)
        frame.index.name = 'period'
        return frame

    def write_case(self, report: MarketReport) -> Path:
        """
        Writes one case's per-period table to <output_dir>/<case>/dispatch.csv.
        Returns:
            The case directory.
        """
        case_dir = self.output_dir / case_dir_name(report.label)
        case_dir.mkdir(parents=True, exist_ok=True)
        path = case_dir / DISPATCH_FILE
        self.dispatch_frame(report).to_csv(path, float_format=FLOAT_FORMAT, na_rep='', lineterminator='\n')
        logging.info(f"Wrote {path}")
        return case_dir

    def summary_frame(self, reports: List[MarketReport]) -> pd.DataFrame:
        """Energy fee and per-company profits (k¥), one column per case."""
        rows: Dict[str, List[float]] = {'Energy fee (k¥)': [r.energy_fee for r in reports]}
        for company_id in reports[0].profits:
            rows[f'Profit {company_id} (k¥)'] = [r.profits[company_id] for r in reports]
        rows['Mean Lerner index'] = [r.lerner_mean for r in reports]
        frame = pd.DataFrame.from_dict(
            {key: _clean(values) for key, values in rows.items()},
            orient='index', columns=[r.label for r in reports],
        )
        frame.index.name = 'indicator'
        return frame

    def reserve_summary_frame(self, reports: List[MarketReport]) -> pd.DataFrame:
        """Horizon-averaged system reserves (MW), one column per case."""
        frame = pd.DataFrame.from_dict(
            {
                'Type-I reserve (MW)': _clean([r.reserve.mean_type1 for r in reports]),
                'Type-II reserve (MW)': _clean([r.reserve.mean_type2 for r in reports]),
            },
            orient='index', columns=[r.label for r in reports],
        )
        frame.index.name = 'indicator'
        return frame

    def summary_document(self, reports: List[MarketReport],
                         solve_stats: Optional[Dict[str, Dict[str, Any]]] = None) -> Dict[str, Any]:
        pcm = next((r for r in reports if r.strategic_company is None), None)
        cases = []
        for r in reports:
            entry: Dict[str, Any] = {
                'label': r.label,
                'strategic_company': r.strategic_company,
                'energy_fee_kyuan': round(r.energy_fee, 6),
                'profits_kyuan': {key: round(value, 6) for key, value in r.profits.items()},
                'lerner_mean': round(r.lerner_mean, 6),
                'mean_reserve_type1_mw': round(r.reserve.mean_type1, 6),
                'mean_reserve_type2_mw': round(r.reserve.mean_type2, 6),
            }
            if pcm is not None and r is not pcm:
                entry['type1_at_least_pcm'] = bool(r.reserve.mean_type1 >= pcm.reserve.mean_type1 - 1e-9)
                entry['type2_at_least_pcm'] = bool(r.reserve.mean_type2 >= pcm.reserve.mean_type2 - 1e-9)
            if solve_stats and r.label in solve_stats:
                entry['solve_stats'] = solve_stats[r.label]
            cases.append(entry)
        return {'cases': cases}

    def write_summary(self, reports: List[MarketReport],
                      solve_stats: Optional[Dict[str, Dict[str, Any]]] = None) -> List[Path]:
        """
        Writes the cross-case tables and the JSON summary.
        Args:
            reports: Case reports in output column order.
            solve_stats: Optional per-label solver statistics for the JSON summary.
        Returns:
            Paths of the written files.
        """
        if not reports:
            raise ValueError("No case reports to summarize.")
        self.output_dir.mkdir(parents=True, exist_ok=True)
        written = []
        path = self.output_dir / SUMMARY_FILE
        self.summary_frame(reports).to_csv(path, float_format=FLOAT_FORMAT, lineterminator='\n')
        written.append(path)
        path = self.output_dir / RESERVE_SUMMARY_FILE
        self.reserve_summary_frame(reports).to_csv(path, float_format=FLOAT_FORMAT, lineterminator='\n')
        written.append(path)
        path = self.output_dir / SUMMARY_JSON
        path.write_text(json.dumps(self.summary_document(reports, solve_stats), indent=2) + "\n", encoding='utf-8')
        written.append(path)
        logging.info(f"Wrote summary tables for {len(reports)} case(s) to {self.output_dir}")
        return written

    def write_frame(self, frame: pd.DataFrame, name: str) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.output_dir / name
        frame.to_csv(path, float_format=FLOAT_FORMAT, lineterminator='\n')
        logging.info(f"Wrote {path}")
        return path

    def write_partial_note(self, completed: List[str], failed: str, error: BaseException) -> Path:
        """Records which cases finished before a suite was aborted."""
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.output_dir / PARTIAL_NOTE
        lines = [
            "Suite aborted; results in this directory are incomplete.",
            f"Failed case: {failed}",
            f"Error: {type(error).__name__}: {error}",
            "Completed cases: " + (", ".join(completed) if completed else "none"),
        ]
        path.write_text("\n".join(lines) + "\n", encoding='utf-8')
        logging.warning(f"Partial results note written to {path}")
        return path
