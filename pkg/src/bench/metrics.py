"""
Per-task and aggregate edit metrics.

Rows are sorted by task id before aggregation, so the report does not
depend on the order results arrive in.
"""

from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from src.ai.lore import EditResult
from src.ai.oracle import OracleClassifier, score_batch
from src.ai.probe import TokenMask
from src.ai.vocab import class_index
from src.bench.suites import EditTask
from src.core.errors import ConfigError

DILATION_TOKENS = 1
DIGITS = 6


def background_mse(source: np.ndarray, edited: np.ndarray, mask: np.ndarray, patch: int = 4) -> float:
    """
    MSE x 10^3 between two images rescaled to ``[0, 1]`` outside the mask
    dilated by one token; 0 when nothing lies outside.
    """
    keep = ~TokenMask.from_pixels(mask, patch).dilate(DILATION_TOKENS).to_pixels(patch)
    if not keep.any():
        return 0.0
    a = (np.asarray(source, dtype=np.float64) + 1.0) / 2.0
    b = (np.asarray(edited, dtype=np.float64) + 1.0) / 2.0
    return float(np.mean((a[keep] - b[keep]) ** 2) * 1e3)


def nonincreasing_fraction(trace: Sequence[float]) -> float:
    if len(trace) < 2:
        return 1.0
    steps = np.diff(np.asarray(trace, dtype=np.float64))
    return float(np.mean(steps <= 0.0))


@dataclass
class MetricsReport:
    """
    Aggregates over a declared task set.

    Attributes:
        n_tasks (int): Tasks evaluated.
        alignment (float): Mean oracle probability of the target class.
        success_rate (float): Fraction whose oracle argmax is the target.
        source_rate (float): Fraction whose oracle argmax is the source.
        background_mse (float): Mean MSE x 10^3 outside the dilated mask.
        tendency_source_pre (float): Mean Tend(source | inverted noise).
        tendency_target_pre (float): Mean Tend(target | inverted noise).
        tendency_source_post (float): Mean Tend(source | optimized noise).
        tendency_target_post (float): Mean Tend(target | optimized noise).
        target_gain_rate (float): Fraction with Tend(target) increased.
        loss_nonincreasing (float): Fraction of consecutive loss pairs that
            did not increase, over all tasks.
    """
    n_tasks: int
    alignment: float
    success_rate: float
    source_rate: float
    background_mse: float
    tendency_source_pre: float
    tendency_target_pre: float
    tendency_source_post: float
    tendency_target_post: float
    target_gain_rate: float
    loss_nonincreasing: float

    def to_dict(self) -> Dict[str, float]:
        return {k: (round(v, DIGITS) if isinstance(v, float) else v) for k, v in asdict(self).items()}


def task_frame(tasks: List[EditTask], results: List[EditResult], oracle: OracleClassifier) -> pd.DataFrame:
    """
    One row per task, sorted by ``task_id``.

    Raises:
        ConfigError: If the lists are empty or differ in length.
    """
    if not tasks or len(tasks) != len(results):
        raise ConfigError(f"evaluate needs matching nonempty lists ({len(tasks)} tasks, {len(results)} results)")
    probs = score_batch(oracle, [r.image for r in results], [t.mask for t in tasks])
    rows = []
    for task, result, p in zip(tasks, results, probs):
        predicted = int(np.argmax(p))
        trace = result.loss_trace
        rows.append({
            "task_id": task.task_id,
            "suite": task.suite,
            "source_class": f"{task.source_class[1]} {task.source_class[0]}",
            "target_class": f"{task.target_class[1]} {task.target_class[0]}",
            "alignment": float(p[class_index(task.target_class)]),
            "success": predicted == class_index(task.target_class),
            "source_kept": predicted == class_index(task.source_class),
            "background_mse": background_mse(task.image, result.image, task.mask),
            "tend_source_pre": result.tendency["source_pre"],
            "tend_target_pre": result.tendency["target_pre"],
            "tend_source_post": result.tendency["source_post"],
            "tend_target_post": result.tendency["target_post"],
            "loss_first": float(trace[0]) if trace else float("nan"),
            "loss_last": float(trace[-1]) if trace else float("nan"),
            "loss_pairs": max(len(trace) - 1, 0),
            "loss_nonincreasing": nonincreasing_fraction(trace) * max(len(trace) - 1, 0),
        })
    return pd.DataFrame(rows).sort_values("task_id", kind="mergesort").reset_index(drop=True)


def summarize(frame: pd.DataFrame) -> MetricsReport:
    pairs = int(frame["loss_pairs"].sum())
    gain = frame["tend_target_post"] > frame["tend_target_pre"]
    return MetricsReport(
        n_tasks=int(len(frame)),
        alignment=float(frame["alignment"].mean()),
        success_rate=float(frame["success"].mean()),
        source_rate=float(frame["source_kept"].mean()),
        background_mse=float(frame["background_mse"].mean()),
        tendency_source_pre=float(frame["tend_source_pre"].mean()),
        tendency_target_pre=float(frame["tend_target_pre"].mean()),
        tendency_source_post=float(frame["tend_source_post"].mean()),
        tendency_target_post=float(frame["tend_target_post"].mean()),
        target_gain_rate=float(gain.mean()),
        loss_nonincreasing=float(frame["loss_nonincreasing"].sum() / pairs) if pairs else 1.0,
    )


def evaluate(tasks: List[EditTask], results: List[EditResult], oracle: OracleClassifier) -> MetricsReport:
    """
    Aggregate alignment, success, background preservation and tendency
    shifts over paired tasks and results.

    Raises:
        ConfigError: On mismatched or empty lists.
    """
    return summarize(task_frame(tasks, results, oracle))
