import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, NoReturn, Optional, Sequence, Tuple, Union

import pandas as pd

from .figure_manager import FigureManager
from .market_clearing import clear_market
from .report_writer import ReportWriter
from .reserve_analytics import MarketReport, economic_report
from .strategic_bidding import BilevelSolution, solve_bilevel
from .utils.data_parser import Scenario, ScenarioParser, validate_scenario
from .utils.scenario_library import table1_scenario

BUNDLED_SCENARIO = 'table1'
PCM = 'pcm'
ICM_PREFIX = 'icm:'


class ManifestError(ValueError):
    """The run manifest is malformed or names unknown cases."""


class SuiteError(RuntimeError):
    """A suite case failed; `completed` lists the cases written before the failure."""
    def __init__(self, message: str, failed: str, completed: List[str]):
        super().__init__(message)
        self.failed = failed
        self.completed = completed


def normalize_case(raw: str) -> str:
    """Canonical case label: 'pcm' or 'icm:<company id>'."""
    text = str(raw).strip()
    if text.lower() == PCM:
        return PCM
    if text.lower().startswith(ICM_PREFIX) and len(text) > len(ICM_PREFIX):
        return ICM_PREFIX + text[len(ICM_PREFIX):].strip()
    raise ManifestError(f"Unknown case '{raw}'; expected 'pcm' or 'icm:<company id>'.")


@dataclass(frozen=True)
class RunManifest:
    """
    What a suite run does: which scenario, which cases, where the output goes
    and which solver settings override the scenario's own.
    """
    scenario: str
    cases: Tuple[str, ...]
    output_dir: Path
    solver: Dict[str, Any] = field(default_factory=dict)
    workers: int = 1
    figures: bool = True

    @classmethod
    def from_dict(cls, document: Dict[str, Any], base_dir: Optional[Path] = None) -> "RunManifest":
        """
        Builds a manifest from its JSON form. A relative scenario path is
        resolved against base_dir (the manifest's own directory).
        """
        if not isinstance(document, dict):
            raise ManifestError("Manifest must be a JSON object.")
        missing = [key for key in ('scenario', 'cases', 'output_dir') if key not in document]
        if missing:
            raise ManifestError(f"Manifest is missing field(s): {', '.join(missing)}")

        raw_cases = document['cases']
        if isinstance(raw_cases, str) or not isinstance(raw_cases, list) or not raw_cases:
            raise ManifestError("Manifest 'cases' must be a non-empty list.")
        cases = tuple(normalize_case(case) for case in raw_cases)
        if len(set(cases)) != len(cases):
            raise ManifestError(f"Manifest lists a case more than once: {list(cases)}")

        scenario = str(document['scenario'])
        if scenario != BUNDLED_SCENARIO and base_dir is not None and not Path(scenario).is_absolute():
            scenario = str(base_dir / scenario)

        solver = dict(document.get('solver') or {})
        if 'seed' in document:
            solver['seed'] = document['seed']

        workers = document.get('workers', 1)
        if not isinstance(workers, int) or workers < 1:
            raise ManifestError(f"Manifest 'workers' must be a positive integer, got {workers!r}.")

        return cls(
            scenario=scenario,
            cases=cases,
            output_dir=Path(document['output_dir']),
            solver=solver,
            workers=workers,
            figures=bool(document.get('figures', True)),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunManifest":
        path = Path(path)
        logging.info(f"Loading manifest from {path}")
        try:
            document = json.loads(path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            raise ManifestError(f"Manifest {path} is not valid JSON: {e}")
        return cls.from_dict(document, base_dir=path.parent)


@dataclass
class SuiteResult:
    reports: List[MarketReport]
    solutions: Dict[str, BilevelSolution]
    files: List[Path]


def load_scenario(reference: str, overrides: Optional[Dict[str, Any]] = None) -> Scenario:
    """
    Loads the bundled case ('table1') or a scenario JSON file and applies solver overrides.
    """
    if reference == BUNDLED_SCENARIO:
        s = table1_scenario()
    else:
        s = ScenarioParser().load(reference)
    return validate_scenario(s.with_solver(overrides))


def run_pcm(s: Scenario) -> MarketReport:
    """
    Perfectly competitive case: every company offers its true cost.
    Returns:
        The MarketReport (Lerner index all zeros).
    """
    logging.info("Running competitive case")
    dispatch = clear_market(s.with_strategic(None))
    report = economic_report(s, dispatch, bids=None, label=PCM)
    logging.info(f"Competitive case: energy fee {report.energy_fee:.3f} k¥")
    return report


def run_icm(s: Scenario, strategic: str) -> Tuple[MarketReport, BilevelSolution]:
    """
    Imperfectly competitive case with one strategic company.
    Args:
        s: The scenario.
        strategic: Id of the company that bids strategically.
    Returns:
        (MarketReport, BilevelSolution).
    """
    if strategic not in s.company_ids:
        raise ValueError(f"Strategic company '{strategic}' is not in the scenario ({s.company_ids}).")
    logging.info(f"Running strategic case for {strategic}")
    scenario = validate_scenario(s.with_strategic(strategic))
    solution = solve_bilevel(scenario)
    report = economic_report(scenario, solution.dispatch, solution.bids, label=f'{ICM_PREFIX}{strategic}')
    logging.info(
        f"Strategic case {strategic}: energy fee {report.energy_fee:.3f} k¥, "
        f"profit {report.profits[strategic]:.3f} k¥, mean Lerner {report.lerner_mean:.4f}"
    )
    return report, solution


def run_case(s: Scenario, label: str) -> Tuple[MarketReport, Optional[BilevelSolution]]:
    label = normalize_case(label)
    if label == PCM:
        return run_pcm(s), None
    return run_icm(s, label[len(ICM_PREFIX):])


def _run_case(s: Scenario, label: str) -> Tuple[MarketReport, Optional[BilevelSolution]]:
    # Process-pool entry point; must stay importable at module level.
    return run_case(s, label)


def _check_cases(s: Scenario, cases: Sequence[str]) -> None:
    unknown = [c for c in cases if c != PCM and c[len(ICM_PREFIX):] not in s.company_ids]
    if unknown:
        raise ManifestError(f"Cases {unknown} name companies not in the scenario ({s.company_ids}).")


def run_suite(m: RunManifest) -> SuiteResult:
    """
    Runs every case of the manifest and writes the case tables, summaries and figures.
    Args:
        m: The run manifest.
    Returns:
        The SuiteResult with reports in manifest order.
    Raises:
        OSError: if the output directory is not writable (checked before solving).
        SuiteError: if a case fails; a partial-results note is written first.
    """
    writer = ReportWriter(m.output_dir)
    writer.ensure_writable()

    s = load_scenario(m.scenario, m.solver)
    _check_cases(s, m.cases)
    logging.info(f"Suite of {len(m.cases)} case(s) into {m.output_dir} with {m.workers} worker(s)")

    reports: List[MarketReport] = []
    solutions: Dict[str, BilevelSolution] = {}
    files: List[Path] = []

    def collect(label: str, outcome: Tuple[MarketReport, Optional[BilevelSolution]]) -> None:
        report, solution = outcome
        reports.append(report)
        if solution is not None:
            solutions[label] = solution
        files.append(writer.write_case(report))

    def abort(label: str, error: Exception) -> NoReturn:
        logging.error(f"Case {label} failed: {error}")
        writer.write_partial_note([r.label for r in reports], label, error)
        raise SuiteError(f"Case {label} failed: {error}", label, [r.label for r in reports]) from error

    if m.workers > 1 and len(m.cases) > 1:
        with ProcessPoolExecutor(max_workers=min(m.workers, len(m.cases))) as pool:
            futures = [pool.submit(_run_case, s, label) for label in m.cases]
            for label, future in zip(m.cases, futures):
                try:
                    outcome = future.result()
                except Exception as e:
                    for pending in futures:
                        pending.cancel()
                    abort(label, e)
                collect(label, outcome)
    else:
        for label in m.cases:
            try:
                outcome = run_case(s, label)
            except Exception as e:
                abort(label, e)
            collect(label, outcome)

    stats = {label: dict(solution.solve_stats) for label, solution in solutions.items()}
    files.extend(writer.write_summary(reports, stats))
    if m.figures:
        files.extend(FigureManager(m.output_dir).render([r.label for r in reports]))
    logging.info(f"Suite finished: {len(reports)} case(s) written to {m.output_dir}")
    return SuiteResult(reports=reports, solutions=solutions, files=files)


def run_kmax_sweep(s: Scenario, company: str, k_values: Sequence[float],
                   output_dir: Optional[Union[str, Path]] = None) -> pd.DataFrame:
    """
    Re-solves one company's strategic case for each bid cap.
    Args:
        s: The scenario.
        company: Strategic company id.
        k_values: Bid caps to try, each >= 1.
        output_dir: When given, the table is written there as kmax_sweep.csv.
    Returns:
        One row per k_max with fee, strategic profit, mean Lerner index and averaged reserves.
    """
    if not k_values:
        raise ValueError("k_max sweep needs at least one value.")
    bad = [k for k in k_values if k < 1]
    if bad:
        raise ValueError(f"k_max values below 1: {bad}")

    writer = None
    if output_dir is not None:
        writer = ReportWriter(output_dir)
        writer.ensure_writable()

    rows = []
    for k_max in k_values:
        logging.info(f"k_max sweep: {company} at k_max = {k_max}")
        report, _ = run_icm(s.with_k_max(float(k_max)), company)
        rows.append({
            'k_max': float(k_max),
            'energy_fee_kyuan': report.energy_fee,
            'strategic_profit_kyuan': report.profits[company],
            'lerner_mean': report.lerner_mean,
            'mean_reserve_type1_mw': report.reserve.mean_type1,
            'mean_reserve_type2_mw': report.reserve.mean_type2,
        })
    frame = pd.DataFrame(rows).set_index('k_max')
    if writer is not None:
        writer.write_frame(frame, 'kmax_sweep.csv')
    return frame
