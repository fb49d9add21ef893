"""
Visualization module for edit and bench charts.

Charts render headless through matplotlib's Agg canvas and are written as
PNG without creation metadata, so two runs with the same seed produce the
same files. Attention maps are also rendered as PPM overlays.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import matplotlib
matplotlib.use("Agg")

import numpy as np
import pandas as pd
import seaborn as sns
from matplotlib import colormaps
from matplotlib.backends.backend_agg import FigureCanvasAgg as FigureCanvas
from matplotlib.figure import Figure

from src.core.image_io import to_bytes, write_ppm_bytes

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def heatmap_overlay(image: np.ndarray, attn: np.ndarray, alpha: float = 0.5,
                    cmap: str = "viridis") -> np.ndarray:
    """
    Blend a token-grid map over an image.

    Args:
        image (np.ndarray): ``[H, W, 3]`` image in ``[-1, 1]``.
        attn (np.ndarray): ``[g, g]`` map; min-max normalized before colouring.
        alpha (float): Weight of the heat colours.
        cmap (str): Matplotlib colormap name.

    Returns:
        np.ndarray: ``[H, W, 3]`` uint8 image.
    """
    attn = np.asarray(attn, dtype=np.float64)
    span = attn.max() - attn.min()
    norm = (attn - attn.min()) / span if span > 0 else np.zeros_like(attn)
    factor = image.shape[0] // attn.shape[0]
    upsampled = np.kron(norm, np.ones((factor, factor)))
    heat = colormaps[cmap](upsampled)[..., :3]
    base = (np.asarray(image, dtype=np.float64) + 1.0) / 2.0
    blended = (1.0 - alpha) * base + alpha * heat
    return to_bytes(blended * 2.0 - 1.0)


def write_overlay(path: PathLike, image: np.ndarray, attn: np.ndarray, alpha: float = 0.5) -> Path:
    path = Path(path)
    write_ppm_bytes(path, heatmap_overlay(image, attn, alpha))
    return path


class BaseChart:
    """
    Base class for all charts.

    Owns a figure on an Agg canvas; subclasses draw into ``self.ax``.
    """

    def __init__(self, figsize=(8, 5), dpi: int = 100):
        """Initialize the base chart."""
        self.figure = Figure(figsize=figsize, dpi=dpi)
        self.canvas = FigureCanvas(self.figure)
        self.ax = self.figure.add_subplot(111)
        sns.set_style("darkgrid")

    def clear(self):
        """Clear the chart."""
        self.ax.clear()

    def _empty(self, message: str = "No data available"):
        self.ax.text(0.5, 0.5, message, ha="center", va="center", transform=self.ax.transAxes)

    def save(self, filepath: PathLike) -> Path:
        """Write the chart as PNG without timestamps."""
        path = Path(filepath)
        self.figure.tight_layout()
        self.figure.savefig(str(path), format="png", metadata={"Software": None})
        logger.debug("chart written", extra={"fields": {"path": str(path)}})
        return path


class LossChart(BaseChart):
    """
    Line chart of per-iteration losses.

    Used for training curves and for tendency-loss traces of edits.
    """

    def plot(self, traces: Dict[str, Sequence[float]], title: str = "Loss",
             xlabel: str = "Iteration", max_lines: int = 20):
        """
        Plot one line per named trace.

        Args:
            traces (Dict[str, Sequence[float]]): Name to loss values.
            title (str): Chart title.
            xlabel (str): X axis label.
            max_lines (int): Traces beyond this count are skipped, in sorted
                name order.
        """
        self.ax.clear()
        names = [n for n in sorted(traces) if len(traces[n])][:max_lines]
        if not names:
            self._empty()
            return
        for name in names:
            values = np.asarray(traces[name], dtype=np.float64)
            self.ax.plot(np.arange(len(values)), values, linewidth=1.5, label=name)
        self.ax.set_xlabel(xlabel, fontsize=12, fontweight="bold")
        self.ax.set_ylabel("Loss", fontsize=12, fontweight="bold")
        self.ax.set_title(title, fontsize=14, fontweight="bold")
        if len(names) <= 10:
            self.ax.legend(loc="best", fontsize=8)
        self.ax.grid(True, alpha=0.3)


class SweepChart(BaseChart):
    """
    Metric against a swept optimizer setting.
    """

    def plot(self, df: pd.DataFrame, x_col: str, y_cols: Optional[List[str]] = None):
        self.ax.clear()
        y_cols = y_cols or ["success_rate", "alignment"]
        missing = [c for c in [x_col] + y_cols if c not in df.columns]
        if df.empty or missing:
            self._empty(f"Missing columns: {', '.join(missing)}" if missing else "No data available")
            return
        positions = np.arange(len(df))
        for col in y_cols:
            self.ax.plot(positions, df[col].astype(float), marker="o", linewidth=2, label=col)
        self.ax.set_xticks(positions)
        self.ax.set_xticklabels([str(v) for v in df[x_col]])
        self.ax.set_xlabel(x_col, fontsize=12, fontweight="bold")
        self.ax.set_ylabel("Value", fontsize=12, fontweight="bold")
        self.ax.set_title(f"Sweep over {x_col}", fontsize=14, fontweight="bold")
        self.ax.legend(loc="best")
        self.ax.grid(True, alpha=0.3)


class TendencyHeatmap(BaseChart):
    """
    Annotated heatmap of the tendency table (rows = concept@prompt,
    columns = noise type).
    """

    def plot(self, table: pd.DataFrame, title: str = "Attention tendency (%)"):
        self.ax.clear()
        if table.empty:
            self._empty()
            return
        sns.heatmap(table.astype(float), annot=True, fmt=".1f", cmap="mako", cbar=True, ax=self.ax)
        self.ax.set_title(title, fontsize=14, fontweight="bold")


class AttentionMapChart(BaseChart):
    """
    Side-by-side smoothed attention maps, e.g. source and target token.
    """

    def __init__(self, n_maps: int = 2, dpi: int = 100):
        super().__init__(figsize=(4 * n_maps, 4), dpi=dpi)
        self.figure.clear()
        self.axes = [self.figure.add_subplot(1, n_maps, i + 1) for i in range(n_maps)]
        self.ax = self.axes[0]

    def plot(self, maps: Dict[str, np.ndarray]):
        for ax, (name, values) in zip(self.axes, sorted(maps.items())):
            ax.clear()
            sns.heatmap(np.asarray(values, dtype=np.float64), cmap="viridis", square=True,
                        cbar=False, xticklabels=False, yticklabels=False, ax=ax)
            ax.set_title(name, fontsize=11, fontweight="bold")
