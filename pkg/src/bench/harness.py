"""
Benchmark harness.

Coordinates suite construction, edit runs, oracle evaluation, tendency
analysis and the ablation sweeps, and collects everything into one report
dictionary. Wall-clock timings are kept apart from the report so the report
stays byte-identical across runs with the same seed.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.ai.flow import ScheduleConfig, reconstruction_mse, sample
from src.ai.lore import EditResult, OptimConfig, edit
from src.ai.models import MicroDiT, ProbeConfig, unpatchify
from src.ai.oracle import OracleClassifier, score_batch
from src.ai.probe import TokenMask, prompt_tendency
from src.ai.vocab import BACKGROUNDS, CLASSES, POSITIONS, class_index
from src.bench.metrics import MetricsReport, evaluate, task_frame
from src.bench.shapes import gen_scene, single_object_spec
from src.bench.suites import EditTask, build_suite, semantic_gap
from src.core.errors import ConfigError
from src.core.logging_utils import log_phase
from src.core.rng import Rng

logger = logging.getLogger(__name__)

DIGITS = 6
NOISE_TYPES = ("inverted", "random", "optimized")
TENDENCY_ROWS = ("C_src@P_src", "C_tgt@P_tgt", "C_src@P_comb", "C_tgt@P_comb")


@dataclass
class BenchConfig:
    """
    Benchmark sizes and sweeps.

    Attributes:
        pie_tasks (int): Tasks in the single-object suite.
        smart_tasks (int): Tasks in the multi-instance suite.
        gap_tasks (int): Tasks in the large-gap suite.
        sweep_tasks (int): Leading pie tasks reused by every sweep.
        roundtrip_tasks (int): Pie tasks used for the inversion round trip.
        jobs (int): Worker threads for independent edits.
        lr_sweep (List[float]): Learning rates swept.
        iteration_sweep (List[int]): Iteration counts swept.
        roundtrip_steps (List[int]): Schedules for the round-trip check.
        gate_samples (int): Single-object samples for the training gate.
        oracle_train (int): Oracle training scenes.
        oracle_holdout (int): Oracle held-out scenes.
        sweeps (bool): Run the ablation sweeps.
        write_images (bool): Write edited images.
    """
    pie_tasks: int = 100
    smart_tasks: int = 40
    gap_tasks: int = 60
    sweep_tasks: int = 20
    roundtrip_tasks: int = 50
    jobs: int = 1
    lr_sweep: List[float] = field(default_factory=lambda: [1e-4, 1e-3, 1e-2, 1e-1])
    iteration_sweep: List[int] = field(default_factory=lambda: [0, 2, 5, 10, 20])
    roundtrip_steps: List[int] = field(default_factory=lambda: [5, 15, 30])
    gate_samples: int = 200
    oracle_train: int = 3000
    oracle_holdout: int = 600
    sweeps: bool = True
    write_images: bool = True

    def validate(self) -> None:
        sizes = (self.pie_tasks, self.smart_tasks, self.gap_tasks, self.sweep_tasks,
                 self.roundtrip_tasks, self.gate_samples)
        if any(s < 0 for s in sizes):
            raise ConfigError("bench sizes must be >= 0")
        if self.pie_tasks < 1:
            raise ConfigError("bench needs at least one pie task")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if any(lr <= 0 for lr in self.lr_sweep) or any(e < 0 for e in self.iteration_sweep):
            raise ConfigError("sweep values must be positive learning rates and >= 0 iterations")
        if any(s < 1 for s in self.roundtrip_steps):
            raise ConfigError("round-trip schedules need >= 1 step")


def _rounded(value: Any) -> Any:
    if isinstance(value, float):
        return round(value, DIGITS)
    if isinstance(value, dict):
        return {str(k): _rounded(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_rounded(v) for v in value]
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return _rounded(value.item())
    return value


@dataclass
class BenchOutcome:
    """
    Attributes:
        report (Dict[str, Any]): Deterministic metrics (rounded).
        timings (Dict[str, Any]): Wall-clock measurements.
        frames (Dict[str, pd.DataFrame]): Per-task and sweep tables.
        images (Dict[str, np.ndarray]): Edited images by task id.
        loss_traces (Dict[str, List[float]]): Loss trace by task id.
    """
    report: Dict[str, Any]
    timings: Dict[str, Any]
    frames: Dict[str, pd.DataFrame] = field(default_factory=dict)
    images: Dict[str, np.ndarray] = field(default_factory=dict)
    loss_traces: Dict[str, List[float]] = field(default_factory=dict)


def tendency_table(model: MicroDiT, tasks: List[EditTask], results: List[EditResult], rng: Rng,
                   probe: Optional[ProbeConfig] = None) -> pd.DataFrame:
    """
    Mean tendency (%) per concept/prompt row and noise type.

    Columns are the inverted noise, fresh Gaussian noise drawn from
    ``rng.spawn(i)`` for task ``i`` and the optimized noise. ``P_comb`` rows
    skip tasks whose target prompt has no room for the extra word.
    """
    sums = {row: {noise: [] for noise in NOISE_TYPES} for row in TENDENCY_ROWS}
    for i, (task, result) in enumerate(zip(tasks, results)):
        mask = TokenMask.from_pixels(task.mask, model.config.patch)
        latents = {
            "inverted": result.inverted,
            "random": rng.spawn(i).normal(result.inverted.shape),
            "optimized": result.latent,
        }
        combined = task.combined_prompt()
        for noise, z in latents.items():
            sums["C_src@P_src"][noise].append(
                prompt_tendency(model, z, task.src_prompt, task.source_token, mask, probe))
            sums["C_tgt@P_tgt"][noise].append(
                prompt_tendency(model, z, task.tgt_prompt, task.target_token, mask, probe))
            if combined is not None:
                comb_prompt, src_index = combined
                sums["C_src@P_comb"][noise].append(
                    prompt_tendency(model, z, comb_prompt, src_index, mask, probe))
                sums["C_tgt@P_comb"][noise].append(
                    prompt_tendency(model, z, comb_prompt, task.target_token, mask, probe))
    return pd.DataFrame(
        {noise: [100.0 * float(np.mean(sums[row][noise])) if sums[row][noise] else float("nan")
                 for row in TENDENCY_ROWS] for noise in NOISE_TYPES},
        index=list(TENDENCY_ROWS))


class BenchHarness:
    """
    Runs every benchmark section against one trained model.

    Attributes:
        model (MicroDiT): Read-only during the whole run.
        oracle (OracleClassifier): Gated alignment judge.
        config (BenchConfig): Sizes and sweeps.
        optim (OptimConfig): Default edit settings.
        sched (ScheduleConfig): Schedule and guidance.
        probe (ProbeConfig): Layer/head aggregation.
        rng (Rng): Root stream of the run.
        progress (bool): Show progress bars.
    """

    def __init__(self, model: MicroDiT, oracle: OracleClassifier, config: BenchConfig,
                 optim: OptimConfig, sched: ScheduleConfig, probe: Optional[ProbeConfig] = None,
                 rng: Optional[Rng] = None, progress: bool = False):
        config.validate()
        optim.validate()
        sched.validate()
        self.model = model
        self.oracle = oracle
        self.config = config
        self.optim = optim
        self.sched = sched
        self.probe = probe or ProbeConfig()
        self.rng = rng or Rng(0)
        self.progress = progress
        self.results_cache: Dict[Tuple, List[EditResult]] = {}

    # ------------------------------------------------------------ edits
    def run_edits(self, tasks: List[EditTask], optim: Optional[OptimConfig] = None,
                  label: str = "edit") -> List[EditResult]:
        """Edit every task; results keep task order whatever ``jobs`` is."""
        optim = optim or self.optim
        key = (tuple((t.task_id, t.tgt_prompt.ids) for t in tasks), repr(optim))
        if key in self.results_cache:
            return self.results_cache[key]

        def one(task: EditTask) -> EditResult:
            return edit(task, self.model, optim, self.sched, probe=self.probe, rng=Rng(task.seed))

        if self.config.jobs == 1:
            results = [one(t) for t in tqdm(tasks, desc=label, disable=not self.progress, leave=False)]
        else:
            with ThreadPoolExecutor(max_workers=self.config.jobs) as pool:
                results = list(tqdm(pool.map(one, tasks), total=len(tasks), desc=label,
                                    disable=not self.progress, leave=False))
        self.results_cache[key] = results
        return results

    def suite_metrics(self, tasks: List[EditTask], optim: Optional[OptimConfig] = None,
                      label: str = "edit") -> Tuple[MetricsReport, List[EditResult]]:
        results = self.run_edits(tasks, optim, label)
        return evaluate(tasks, results, self.oracle), results

    # ---------------------------------------------------------- sections
    def tendency_table(self, tasks: List[EditTask], results: List[EditResult]) -> pd.DataFrame:
        return tendency_table(self.model, tasks, results, self.rng.spawn(7), self.probe)

    def injection_pairing(self, tasks: List[EditTask]) -> Tuple[Dict[str, float], pd.DataFrame]:
        """Background MSE with and without value injection on the same tasks."""
        on = task_frame(tasks, self.run_edits(tasks, replace(self.optim, value_injection=True), "inject-on"),
                        self.oracle)
        off = task_frame(tasks, self.run_edits(tasks, replace(self.optim, value_injection=False), "inject-off"),
                         self.oracle)
        paired = pd.DataFrame({"task_id": on["task_id"],
                               "mse_injection": on["background_mse"],
                               "mse_plain": off["background_mse"]})
        summary = {
            "tasks": int(len(paired)),
            "mean_mse_injection": float(paired["mse_injection"].mean()),
            "mean_mse_plain": float(paired["mse_plain"].mean()),
            "fraction_not_worse": float((paired["mse_injection"] <= paired["mse_plain"]).mean()),
        }
        return summary, paired

    def reconstruction_baseline(self, tasks: List[EditTask]) -> Dict[str, float]:
        """E = 0, no injection, target prompt = source prompt."""
        recon_tasks = [replace(t, tgt_prompt=t.src_prompt, target_class=t.source_class,
                               target_token=t.source_token) for t in tasks]
        optim = replace(self.optim, iterations=0, value_injection=False)
        report, _ = self.suite_metrics(recon_tasks, optim, "reconstruct")
        return {"source_rate": report.source_rate, "background_mse": report.background_mse,
                "oracle_accuracy": float(self.oracle.accuracy or 0.0)}

    def sweep(self, tasks: List[EditTask], name: str, values: List[Any],
              make: Callable[[Any], OptimConfig]) -> Tuple[pd.DataFrame, Dict[str, float]]:
        """Evaluate one optimizer setting per value; returns metrics and mean edit seconds."""
        rows, seconds = [], {}
        for value in values:
            optim = make(value)
            report, results = self.suite_metrics(tasks, optim, f"{name}={value}")
            rows.append({name: value, **report.to_dict()})
            seconds[str(value)] = float(np.mean([r.total_time for r in results]))
        return pd.DataFrame(rows), seconds

    def roundtrip(self, tasks: List[EditTask]) -> Dict[str, float]:
        out = {}
        for steps in self.config.roundtrip_steps:
            sched = replace(self.sched, steps=steps)
            out[str(steps)] = float(np.mean([
                reconstruction_mse(self.model, t.image, t.src_prompt, sched) for t in tasks]))
        return out

    def training_gate(self, n: int) -> Dict[str, float]:
        """Oracle accuracy on single-object samples generated from noise with guidance."""
        if n == 0:
            return {"samples": 0, "accuracy": float("nan")}
        cfg = self.model.config
        stream = self.rng.spawn(11)
        images, masks, labels = [], [], []
        for i in range(n):
            sub = stream.spawn(i)
            cls = CLASSES[int(sub.integers(0, len(CLASSES)))]
            cell = int(sub.integers(0, len(POSITIONS)))
            background = BACKGROUNDS[int(sub.integers(0, len(BACKGROUNDS)))]
            scene = gen_scene(single_object_spec(cls, cell, background, sub.next_seed()))
            z1 = sub.spawn(1).normal((cfg.n_image_tokens, cfg.token_dim))
            latent = sample(self.model, z1, scene.prompt, self.sched)
            images.append(unpatchify(latent, cfg.patch, cfg.channels))
            masks.append(scene.mask_for(cell))
            labels.append(class_index(cls))
        probs = score_batch(self.oracle, images, masks)
        accuracy = float(np.mean(np.argmax(probs, axis=1) == np.asarray(labels)))
        return {"samples": n, "accuracy": accuracy}

    def semantic_gap_summary(self) -> Dict[str, float]:
        same_shape, diff_both = [], []
        for a, b in combinations(CLASSES, 2):
            gap = semantic_gap(self.model, a, b)
            if a[0] == b[0]:
                same_shape.append(gap)
            elif a[1] != b[1]:
                diff_both.append(gap)
        return {"same_shape_mean": float(np.mean(same_shape)),
                "different_shape_colour_mean": float(np.mean(diff_both))}

    # -------------------------------------------------------------- run
    def run(self) -> BenchOutcome:
        cfg = self.config
        frames: Dict[str, pd.DataFrame] = {}
        report: Dict[str, Any] = {"oracle": {"accuracy": float(self.oracle.accuracy or 0.0)}}
        timings: Dict[str, Any] = {}
        e0 = replace(self.optim, iterations=0)

        with log_phase(logger, "build_suites"):
            suites = {"pie": build_suite("pie", cfg.pie_tasks, self.rng.spawn(1))}
            if cfg.smart_tasks:
                suites["smart"] = build_suite("smart", cfg.smart_tasks, self.rng.spawn(1))
            if cfg.gap_tasks:
                suites["gap"] = build_suite("gap", cfg.gap_tasks, self.rng.spawn(1), model=self.model)

        suite_reports: Dict[str, Dict] = {}
        all_results: Dict[str, List[EditResult]] = {}
        with log_phase(logger, "edit_suites", jobs=cfg.jobs) as summary:
            for name, tasks in suites.items():
                metrics, results = self.suite_metrics(tasks, label=name)
                suite_reports[name] = metrics.to_dict()
                all_results[name] = results
                frames[f"tasks_{name}"] = task_frame(tasks, results, self.oracle)
                if name in ("pie", "gap"):
                    base, _ = self.suite_metrics(tasks, e0, f"{name}-e0")
                    suite_reports[f"{name}_e0"] = base.to_dict()
            summary["suites"] = len(suites)
        report["suites"] = suite_reports
        report["improvement"] = {
            name: suite_reports[name]["success_rate"] - suite_reports[f"{name}_e0"]["success_rate"]
            for name in ("pie", "gap") if f"{name}_e0" in suite_reports}

        pie = suites["pie"]
        with log_phase(logger, "tendency_table"):
            table = self.tendency_table(pie, all_results["pie"])
            frames["tendency"] = table
            report["tendency_table"] = {row: table.loc[row].to_dict() for row in table.index}

        with log_phase(logger, "injection_pairing"):
            report["injection"], frames["injection"] = self.injection_pairing(pie)

        with log_phase(logger, "reconstruction"):
            report["reconstruction"] = self.reconstruction_baseline(pie)
            report["roundtrip_mse"] = self.roundtrip(pie[:cfg.roundtrip_tasks])

        if cfg.sweeps:
            subset = pie[:cfg.sweep_tasks]
            sweeps: Dict[str, List[Dict]] = {}
            with log_phase(logger, "sweeps", tasks=len(subset)):
                lr_frame, _ = self.sweep(subset, "lr", cfg.lr_sweep, lambda v: replace(self.optim, lr=v))
                it_frame, it_seconds = self.sweep(subset, "iterations", cfg.iteration_sweep,
                                                  lambda v: replace(self.optim, iterations=v))
                sup_frame, _ = self.sweep(subset, "source_suppression", [False, True],
                                          lambda v: replace(self.optim, source_suppression=v))
                rn_frame, _ = self.sweep(subset, "renoise", [False, True],
                                         lambda v: replace(self.optim, renoise=v))
            for name, frame in (("lr", lr_frame), ("iterations", it_frame),
                                ("source_suppression", sup_frame), ("renoise", rn_frame)):
                frames[f"sweep_{name}"] = frame
                sweeps[name] = frame.to_dict(orient="records")
            report["sweeps"] = sweeps
            timings["seconds_per_edit_by_iterations"] = it_seconds
            if "0" in it_seconds and "5" in it_seconds and it_seconds["0"] > 0:
                timings["ratio_e5_e0"] = it_seconds["5"] / it_seconds["0"]

        with log_phase(logger, "training_gate", samples=cfg.gate_samples):
            report["training_gate"] = self.training_gate(cfg.gate_samples)
        report["semantic_gap"] = self.semantic_gap_summary()

        phase_means: Dict[str, float] = {}
        for phase in ("invert", "optimize", "denoise"):
            phase_means[phase] = float(np.mean([r.timings[phase] for r in all_results["pie"]]))
        timings["phase_seconds_pie"] = phase_means

        images = {}
        traces = {}
        for name, tasks in suites.items():
            for task, result in zip(tasks, all_results[name]):
                images[task.task_id] = result.image
                traces[task.task_id] = result.loss_trace
        return BenchOutcome(report=_rounded(report), timings=_rounded(timings), frames=frames,
                            images=images if cfg.write_images else {}, loss_traces=traces)
