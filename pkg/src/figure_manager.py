import logging
from pathlib import Path
from typing import Dict, List, Union

import matplotlib as mpl
mpl.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from .report_writer import DISPATCH_FILE, case_dir_name  # noqa: E402

FIGURE_SIZE = (8.0, 4.5)
FIGURE_DPI = 120


class FigureManager:
    """
    Renders the suite figures from the per-case CSV files, so every figure
    shows exactly what was written to disk.
    """
    def __init__(self, output_dir: Union[str, Path]):
        """
        Args:
            output_dir: Suite directory holding one sub-directory per case.
        """
        self.output_dir = Path(output_dir)

    def _load(self, labels: List[str]) -> Dict[str, pd.DataFrame]:
        frames = {}
        for label in labels:
            path = self.output_dir / case_dir_name(label) / DISPATCH_FILE
            frames[label] = pd.read_csv(path, index_col='period')
        return frames

    def _save(self, fig: plt.Figure, name: str) -> Path:
        path = self.output_dir / name
        fig.tight_layout()
        fig.savefig(path, dpi=FIGURE_DPI)
        plt.close(fig)
        logging.info(f"Wrote figure {path}")
        return path

    def lerner_by_hour(self, frames: Dict[str, pd.DataFrame]) -> Path:
        """Grouped bars of the hourly Lerner index, one group member per strategic case."""
        strategic = [label for label in frames if label != 'pcm']
        fig, ax = plt.subplots(figsize=FIGURE_SIZE)
        if strategic:
            width = 0.8 / len(strategic)
            for i, label in enumerate(strategic):
                hours = frames[label].index.to_numpy()
                ax.bar(hours + (i - (len(strategic) - 1) / 2) * width, frames[label]['lerner'],
                       width=width, label=label)
            ax.legend()
        ax.set_xlabel('Hour')
        ax.set_ylabel('Lerner index')
        ax.set_title('Lerner index of the strategic company')
        return self._save(fig, 'lerner_by_hour.png')

    def series_by_hour(self, frames: Dict[str, pd.DataFrame], column: str, ylabel: str,
                       title: str, name: str) -> Path:
        fig, ax = plt.subplots(figsize=FIGURE_SIZE)
        for label, frame in frames.items():
            ax.step(frame.index.to_numpy(), frame[column].to_numpy(), where='mid', label=label)
        ax.set_xlabel('Hour')
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend()
        ax.grid(alpha=0.3)
        return self._save(fig, name)

    def render(self, labels: List[str]) -> List[Path]:
        """
        Draws the Lerner, price and both reserve figures for the given cases.
        Args:
            labels: Case labels whose CSVs exist under output_dir.
        Returns:
            Paths of the PNG files.
        """
        frames = self._load(labels)
        logging.debug(f"Rendering figures for {len(frames)} case(s).")
        return [
            self.lerner_by_hour(frames),
            self.series_by_hour(frames, 'price', 'Price (¥/MWh)', 'Market clearing price', 'prices_by_hour.png'),
            self.series_by_hour(frames, 'reserve_type1', 'Reserve (MW)', 'Type-I reserve capacity',
                                'reserve_type1_by_hour.png'),
            self.series_by_hour(frames, 'reserve_type2', 'Reserve (MW)', 'Type-II reserve capacity',
                                'reserve_type2_by_hour.png'),
        ]
