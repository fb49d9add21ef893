"""
Command-line entry point.

``python -m src.main <command> [options]`` runs one of train, sample,
invert, edit, tendency, bench, gradcheck or dataset-gen. Options are merged
over the defaults (or over ``--config FILE``) field by field; only options
given explicitly override. All artifacts go to the output directory
(``--out``, or ``LORE_OUT`` when set).

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure,
3 I/O or file-format error.
"""

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from src.ai.flow import invert, sample, train
from src.ai.lore import EditResult, edit, random_tendency_gradcheck
from src.ai.models import MicroDiT, patchify, unpatchify
from src.ai.oracle import train_oracle
from src.ai.probe import attention_record, extract_map, gaussian_smooth
from src.ai.vocab import (POSITIONS, PromptSeq, Role, background_word, concept_token, find_word,
                          instance_words, parse_prompt)
from src.bench.harness import BenchHarness, BenchOutcome, tendency_table
from src.bench.shapes import gen_dataset
from src.bench.suites import SUITES, EditTask, build_suite, write_tasks
from src.core.config import (COMMANDS, RunConfig, apply_overrides, config_summary, dump_config,
                             layers_list, load_config, resolve_out_dir)
from src.core.errors import (ConfigError, FormatError, LoreError, NumericalError, OracleError,
                             ShapeError, TapeError)
from src.core.export import CSVExporter, JSONExporter, PDFReporter, TextReport, metrics_frame
from src.core.gradcheck import failing_ops, run_gradcheck_suite
from src.core.image_io import read_image, read_mask, write_image
from src.core.logging_utils import log_event, log_phase, setup_logging
from src.core.rng import Rng
from src.core.serialization import load_tensor, save_tensor
from src.ui.visualization import AttentionMapChart, LossChart, SweepChart, TendencyHeatmap, write_overlay

logger = logging.getLogger("src.main")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3

MODEL_FILE = "model.lore"
LOSS_TOLERANCE = 1e-3


class UsageError(Exception):
    """Bad command line; carries the usage text."""

    def __init__(self, message: str, usage: str):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message, self.format_usage())


# (flags, config path, add_argument kwargs)
_OPTIONS: List[tuple] = [
    (("--seed",), "seed", dict(type=int, help="root seed (u64)")),
    (("--out",), "out_dir", dict(help="artifact directory (LORE_OUT wins)")),
    (("--model",), "model_path", dict(help="model checkpoint")),
    (("--log-level",), "log_level", dict(choices=["DEBUG", "INFO", "WARNING", "ERROR"])),
    (("--quiet",), "quiet", dict(action="store_true", help="no progress bars")),
    (("--jobs",), "bench.jobs", dict(type=int, help="parallel edits in bench")),
    # schedule
    (("--steps",), "schedule.steps", dict(type=int, help="Euler steps T")),
    (("--guidance",), "schedule.guidance", dict(type=float, help="CFG scale g")),
    (("--no-invert-guidance",), "schedule.invert_with_guidance", dict(action="store_false")),
    # latent optimization
    (("--lr",), "optim.lr", dict(type=float, help="latent learning rate")),
    (("--iters",), "optim.iterations", dict(type=int, help="optimization iterations E")),
    (("--renoise",), "optim.renoise", dict(action="store_true")),
    (("--source-suppression",), "optim.source_suppression", dict(action="store_true")),
    (("--no-injection",), "optim.value_injection", dict(action="store_false")),
    (("--no-mask-restrict",), "optim.mask_restricted_update", dict(action="store_false")),
    (("--kernel-size",), "optim.kernel_size", dict(type=int)),
    (("--kernel-sigma",), "optim.kernel_sigma", dict(type=float)),
    (("--inject-start",), "optim.injection_start", dict(type=int)),
    (("--inject-end",), "optim.injection_end", dict(type=int)),
    (("--probe-layers",), "probe.layers", dict(type=layers_list, help="e.g. 0,2 or all")),
    (("--probe-heads",), "probe.heads", dict(type=layers_list, help="e.g. 1,3 or all")),
    # training
    (("--train-steps",), "train.steps", dict(type=int)),
    (("--batch-size",), "train.batch_size", dict(type=int)),
    (("--train-lr",), "train.lr", dict(type=float)),
    (("--optimizer",), "train.optimizer", dict(choices=["sgd", "adam"])),
    (("--dataset-size",), "train.dataset_size", dict(type=int)),
    (("--d-model",), "model.d_model", dict(type=int)),
    (("--depth",), "model.layers", dict(type=int)),
    (("--n-heads",), "model.heads", dict(type=int)),
    # single-item inputs
    (("--image",), "inputs.image", dict(help="source PPM")),
    (("--mask",), "inputs.mask", dict(help="mask PPM")),
    (("--prompt",), "inputs.prompt", dict()),
    (("--src-prompt",), "inputs.src_prompt", dict()),
    (("--tgt-prompt",), "inputs.tgt_prompt", dict()),
    (("--target-word",), "inputs.target_word", dict()),
    (("--latent",), "inputs.latent", dict(help="tensor blob to denoise")),
    # suites / bench
    (("--suite",), "dataset.suite", dict(choices=list(SUITES))),
    (("--tasks",), "dataset.tasks", dict(type=int)),
    (("--pie-tasks",), "bench.pie_tasks", dict(type=int)),
    (("--smart-tasks",), "bench.smart_tasks", dict(type=int)),
    (("--gap-tasks",), "bench.gap_tasks", dict(type=int)),
    (("--sweep-tasks",), "bench.sweep_tasks", dict(type=int)),
    (("--roundtrip-tasks",), "bench.roundtrip_tasks", dict(type=int)),
    (("--gate-samples",), "bench.gate_samples", dict(type=int)),
    (("--oracle-train",), "bench.oracle_train", dict(type=int)),
    (("--oracle-holdout",), "bench.oracle_holdout", dict(type=int)),
    (("--no-sweeps",), "bench.sweeps", dict(action="store_false")),
    (("--no-images",), "bench.write_images", dict(action="store_false")),
    # gradcheck
    (("--gc-seeds",), "gradcheck.seeds", dict(type=int)),
    (("--eps",), "gradcheck.eps", dict(type=float)),
    (("--tolerance",), "gradcheck.tolerance", dict(type=float)),
]

_HELP = {
    "train": "train the toy model on generated scenes",
    "sample": "generate an image from a prompt",
    "invert": "invert an image to noise and reconstruct it",
    "edit": "edit a masked region towards a target prompt",
    "tendency": "tendency table and attention heatmaps for one edit",
    "bench": "run the benchmark suites, analyses and sweeps",
    "gradcheck": "finite-difference check of every differentiable op",
    "dataset-gen": "write a benchmark suite as PPM files and a task index",
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS, help="YAML config to start from")
    common.add_argument("--dump-config", default=argparse.SUPPRESS, metavar="PATH",
                        help="write the resolved config and exit")
    for flags, dest, kwargs in _OPTIONS:
        common.add_argument(*flags, dest=dest, default=argparse.SUPPRESS, **kwargs)

    parser = _Parser(prog="lore", description="Latent optimization editing on a toy rectified flow.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=_HELP[name], argument_default=argparse.SUPPRESS)
    return parser


def resolve_config(ns: argparse.Namespace) -> RunConfig:
    """Defaults or ``--config``, then explicitly given flags."""
    values = vars(ns)
    cfg = load_config(values["config"]) if "config" in values else RunConfig()
    cfg.command = values["command"]
    overrides = {k: v for k, v in values.items() if k not in ("command", "config", "dump_config")}
    return apply_overrides(cfg, overrides)


# ------------------------------------------------------------------ helpers
def _require(value: Optional[str], flag: str, command: str) -> str:
    if not value:
        raise ConfigError(f"'{command}' needs {flag}")
    return value


def _load_model(cfg: RunConfig) -> MicroDiT:
    model = MicroDiT.load(_require(cfg.model_path, "--model", cfg.command))
    cfg.probe.validate(model.config)
    return model


def _prompt(text: str, model: MicroDiT) -> PromptSeq:
    return parse_prompt(text, model.config.max_text_tokens)


def _write_json(cfg: RunConfig, path: Path, payload: Dict[str, Any]) -> Path:
    return JSONExporter.export({**payload, "seed": cfg.seed}, path)


def _edit_task(cfg: RunConfig, model: MicroDiT) -> EditTask:
    """Build a single edit from the command-line inputs."""
    inputs, command = cfg.inputs, cfg.command
    size = model.config.image_size
    image = read_image(_require(inputs.image, "--image", command), size)
    mask = read_mask(_require(inputs.mask, "--mask", command), size)
    src = _prompt(_require(inputs.src_prompt, "--src-prompt", command), model)
    tgt = _prompt(_require(inputs.tgt_prompt, "--tgt-prompt", command), model)
    if inputs.target_word:
        token = find_word(tgt, inputs.target_word, reference=src)
    else:
        token = concept_token(src, tgt)
    if not src.is_real_token(token):
        raise ConfigError(f"source prompt has no word at position {token}")
    src_words, tgt_words = instance_words(src, token), instance_words(tgt, token)
    position = tgt_words.get(Role.POSITION)
    return EditTask(
        task_id="cli", suite="cli", seed=cfg.seed, image=image, mask=mask,
        src_prompt=src, tgt_prompt=tgt,
        source_class=(src_words[Role.SHAPE], src_words[Role.COLOR]),
        target_class=(tgt_words[Role.SHAPE], tgt_words[Role.COLOR]),
        source_token=token, target_token=token,
        edited_cell=POSITIONS.index(position) if position else -1,
        background=background_word(src),
    )


def _run_edit(cfg: RunConfig, model: MicroDiT, task: EditTask) -> EditResult:
    with log_phase(logger, "edit", iterations=cfg.optim.iterations, lr=cfg.optim.lr,
                   steps=cfg.schedule.steps, guidance=cfg.schedule.guidance) as summary:
        result = edit(task, model, cfg.optim, cfg.schedule, probe=cfg.probe, rng=Rng(cfg.seed).spawn(0))
        summary.update({k: round(v, 4) for k, v in result.timings.items()})
        if result.loss_trace:
            summary["final_loss"] = result.loss_trace[-1]
    return result


# ----------------------------------------------------------------- commands
def cmd_train(cfg: RunConfig, out: Path, progress: bool) -> Dict[str, Any]:
    root = Rng(cfg.seed)
    with log_phase(logger, "dataset", scenes=cfg.train.dataset_size):
        images, prompts, _ = gen_dataset(cfg.train.dataset_size, root.spawn(0),
                                         max_tokens=cfg.model.max_text_tokens)
    model = MicroDiT.init(cfg.model, root.spawn(1))
    with log_phase(logger, "train", steps=cfg.train.steps, params=model.param_count()) as summary:
        losses = train(model, images, prompts, cfg.train, root.spawn(2), progress)
        if losses:
            summary["final_loss"] = losses[-1]
    with log_phase(logger, "write"):
        model.save(out / MODEL_FILE)
        CSVExporter.export(pd.DataFrame({"step": np.arange(len(losses)), "loss": losses}), out / "losses.csv")
        chart = LossChart()
        chart.plot({"train": losses}, title="Training loss", xlabel="Step")
        chart.save(out / "loss.png")
        tail = losses[-cfg.train.log_every:] if cfg.train.log_every else losses
        _write_json(cfg, out / "train.json", {
            "steps": len(losses),
            "params": model.param_count(),
            "final_loss": float(losses[-1]) if losses else None,
            "mean_final_window": float(np.mean(tail)) if tail else None,
            "model": asdict(cfg.model),
            "train": asdict(cfg.train),
        })
    return {"model": str(out / MODEL_FILE)}


def cmd_sample(cfg: RunConfig, out: Path, progress: bool) -> Dict[str, Any]:
    model = _load_model(cfg)
    mc = model.config
    prompt = _prompt(_require(cfg.inputs.prompt, "--prompt", cfg.command), model)
    if cfg.inputs.latent:
        z1 = load_tensor(cfg.inputs.latent)
        if z1.shape != (mc.n_image_tokens, mc.token_dim):
            raise ShapeError(f"latent {z1.shape} does not match the model's {(mc.n_image_tokens, mc.token_dim)}")
    else:
        z1 = Rng(cfg.seed).spawn(0).normal((mc.n_image_tokens, mc.token_dim))
    with log_phase(logger, "denoise", steps=cfg.schedule.steps, guidance=cfg.schedule.guidance):
        latent = sample(model, z1, prompt, cfg.schedule, progress=progress)
    write_image(out / "sample.ppm", unpatchify(latent, mc.patch, mc.channels))
    _write_json(cfg, out / "sample.json", {"prompt": prompt.text(), "schedule": asdict(cfg.schedule),
                                           "latent": cfg.inputs.latent})
    return {"image": str(out / "sample.ppm")}


def cmd_invert(cfg: RunConfig, out: Path, progress: bool) -> Dict[str, Any]:
    model = _load_model(cfg)
    mc = model.config
    image = read_image(_require(cfg.inputs.image, "--image", cfg.command), mc.image_size)
    prompt = _prompt(_require(cfg.inputs.prompt, "--prompt", cfg.command), model)
    with log_phase(logger, "invert", steps=cfg.schedule.steps):
        inv = invert(model, image, prompt, cfg.schedule, progress=progress)
    with log_phase(logger, "denoise", steps=cfg.schedule.steps) as summary:
        recon = sample(model, inv.latent, prompt, cfg.schedule, progress=progress)
        mse = float(np.mean((recon.astype(np.float64) - patchify(image, mc.patch)) ** 2))
        summary["reconstruction_mse"] = mse
    save_tensor(out / "inverted.lort", inv.latent)
    write_image(out / "reconstruction.ppm", unpatchify(recon, mc.patch, mc.channels))
    _write_json(cfg, out / "invert.json", {"prompt": prompt.text(), "reconstruction_mse": round(mse, 8),
                                           "schedule": asdict(cfg.schedule)})
    return {"latent": str(out / "inverted.lort")}


def cmd_edit(cfg: RunConfig, out: Path, progress: bool) -> Dict[str, Any]:
    model = _load_model(cfg)
    task = _edit_task(cfg, model)
    result = _run_edit(cfg, model, task)
    write_image(out / "edited.ppm", result.image)
    save_tensor(out / "optimized.lort", result.latent)
    chart = LossChart()
    chart.plot({"tendency loss": result.loss_trace}, title="Tendency loss")
    chart.save(out / "loss.png")
    _write_json(cfg, out / "result.json", {
        "src_prompt": task.src_prompt.text(),
        "tgt_prompt": task.tgt_prompt.text(),
        "token": task.target_token,
        "optim": asdict(cfg.optim),
        "schedule": asdict(cfg.schedule),
        **result.to_record(),
        "timings": {k: round(v, 6) for k, v in sorted(result.timings.items())},
    })
    return {"image": str(out / "edited.ppm")}


def cmd_tendency(cfg: RunConfig, out: Path, progress: bool) -> Dict[str, Any]:
    model = _load_model(cfg)
    task = _edit_task(cfg, model)
    result = _run_edit(cfg, model, task)
    with log_phase(logger, "tendency_table"):
        table = tendency_table(model, [task], [result], Rng(cfg.seed).spawn(7), cfg.probe)
    report = TextReport()
    report.add("Generation tendency (%)", table)
    report.add_pairs("Edit tendency", result.tendency)
    report.export(out / "table.txt")
    chart = TendencyHeatmap()
    chart.plot(table)
    chart.save(out / "tendency.png")
    with log_phase(logger, "heatmaps"):
        kernel = cfg.optim.kernel
        maps: Dict[str, np.ndarray] = {}
        for noise, z in (("inverted", result.inverted), ("optimized", result.latent)):
            for name, prompt, token in (("source", task.src_prompt, task.source_token),
                                        ("target", task.tgt_prompt, task.target_token)):
                record, _ = attention_record(model, z, prompt, probe=cfg.probe)
                amap = gaussian_smooth(extract_map(record, token, cfg.probe), kernel).numpy()
                write_overlay(out / f"heatmap_{name}_{noise}.ppm", task.image, amap)
                maps[f"{name} | {noise}"] = amap
        grid = AttentionMapChart(n_maps=len(maps))
        grid.plot(maps)
        grid.save(out / "attention_maps.png")
    _write_json(cfg, out / "tendency.json", {
        "table": {row: table.loc[row].round(6).to_dict() for row in table.index},
        "tendency": {k: round(v, 6) for k, v in sorted(result.tendency.items())},
    })
    return {"table": str(out / "table.txt")}


def _write_bench(cfg: RunConfig, out: Path, outcome: BenchOutcome) -> List[Path]:
    report, frames = outcome.report, outcome.frames
    written = [_write_json(cfg, out / "metrics.json", {
        **report, "config": {"optim": asdict(cfg.optim), "schedule": asdict(cfg.schedule),
                             "bench": asdict(cfg.bench)}})]
    written.append(JSONExporter.export(outcome.timings, out / "timings.json"))

    task_frames = [frames[k] for k in sorted(frames) if k.startswith("tasks_")]
    written.append(CSVExporter.export(pd.concat(task_frames, ignore_index=True), out / "tasks.csv"))

    tables: Dict[str, pd.DataFrame] = {"Suites": metrics_frame(report["suites"]),
                                       "Generation tendency (%)": frames["tendency"]}
    text = TextReport()
    for title, frame in tables.items():
        text.add(title, frame)
    for section in ("improvement", "injection", "reconstruction", "roundtrip_mse",
                    "training_gate", "semantic_gap", "oracle"):
        if report.get(section):
            text.add_pairs(section.replace("_", " ").capitalize(), report[section])
    for key in sorted(frames):
        if key.startswith("sweep_"):
            title = f"Sweep: {key[len('sweep_'):]}"
            text.add(title, frames[key], index=False)
            tables[title] = frames[key].set_index(frames[key].columns[0])
    written.append(text.export(out / "table.txt"))

    charts: List[Path] = []
    heat = TendencyHeatmap()
    heat.plot(frames["tendency"])
    charts.append(heat.save(out / "tendency.png"))
    for key in ("sweep_lr", "sweep_iterations"):
        if key in frames:
            sweep = SweepChart()
            sweep.plot(frames[key], key[len("sweep_"):], ["success_rate", "alignment", "target_gain_rate"])
            charts.append(sweep.save(out / f"{key}.png"))
    pie_traces = {k: v for k, v in outcome.loss_traces.items() if k.startswith("pie-")}
    losses = LossChart()
    losses.plot(pie_traces, title="Tendency loss (pie)")
    charts.append(losses.save(out / "loss_traces.png"))
    written.extend(charts)

    settings = {"seed": cfg.seed, "steps": cfg.schedule.steps, "guidance": cfg.schedule.guidance,
                "lr": cfg.optim.lr, "iterations": cfg.optim.iterations,
                "value_injection": cfg.optim.value_injection, "kernel": cfg.optim.kernel_size,
                "pie_tasks": cfg.bench.pie_tasks, "smart_tasks": cfg.bench.smart_tasks,
                "gap_tasks": cfg.bench.gap_tasks}
    written.append(PDFReporter().generate_report(out / "report.pdf", "LORE bench report", settings,
                                                 tables, charts))

    if outcome.images:
        (out / "images").mkdir(exist_ok=True)
        for task_id in sorted(outcome.images):
            write_image(out / "images" / f"{task_id}.ppm", outcome.images[task_id])
    return written


def cmd_bench(cfg: RunConfig, out: Path, progress: bool) -> Dict[str, Any]:
    model = _load_model(cfg)
    root = Rng(cfg.seed)
    with log_phase(logger, "oracle", train=cfg.bench.oracle_train, holdout=cfg.bench.oracle_holdout):
        oracle = train_oracle(root.spawn(20), n_train=cfg.bench.oracle_train,
                              n_holdout=cfg.bench.oracle_holdout)
    harness = BenchHarness(model, oracle, cfg.bench, cfg.optim, cfg.schedule, cfg.probe,
                           rng=root.spawn(21), progress=progress)
    outcome = harness.run()
    with log_phase(logger, "write") as summary:
        written = _write_bench(cfg, out, outcome)
        summary["files"] = len(written) + len(outcome.images)
    return {"metrics": str(out / "metrics.json")}


def cmd_gradcheck(cfg: RunConfig, out: Path, progress: bool) -> Dict[str, Any]:
    gc = cfg.gradcheck
    with log_phase(logger, "gradcheck_ops", seeds=gc.seeds, eps=gc.eps) as summary:
        report = run_gradcheck_suite(cfg.seed, gc.seeds, gc.eps)
        summary["worst"] = report.worst
    with log_phase(logger, "gradcheck_tendency_loss") as summary:
        loss_err = random_tendency_gradcheck(cfg.seed)
        summary["max_rel_err"] = loss_err
    failed = failing_ops(report, gc.tolerance)
    loss_ok = loss_err <= LOSS_TOLERANCE
    _write_json(cfg, out / "gradcheck.json", {
        "seeds": gc.seeds,
        "eps": gc.eps,
        "tolerance": gc.tolerance,
        "max_rel_err": {k: float(f"{v:.6e}") for k, v in sorted(report.max_rel_err.items())},
        "worst": float(f"{report.worst:.6e}"),
        "failed": failed,
        "tendency_loss": {"max_rel_err": float(f"{loss_err:.6e}"), "tolerance": LOSS_TOLERANCE,
                          "passed": loss_ok},
        "passed": not failed and loss_ok,
    })
    if failed or not loss_ok:
        raise NumericalError("gradient check failed",
                             diagnostics={"failed_ops": failed, "tendency_loss_err": loss_err})
    return {"report": str(out / "gradcheck.json")}


def cmd_dataset_gen(cfg: RunConfig, out: Path, progress: bool) -> Dict[str, Any]:
    model = MicroDiT.load(cfg.model_path) if cfg.model_path else None
    with log_phase(logger, "build_suite", suite=cfg.dataset.suite, tasks=cfg.dataset.tasks):
        tasks = build_suite(cfg.dataset.suite, cfg.dataset.tasks, Rng(cfg.seed).spawn(1), model=model)
    path = write_tasks(tasks, out)
    _write_json(cfg, out / "dataset.json", {"suite": cfg.dataset.suite, "tasks": len(tasks),
                                            "index": path.name})
    return {"index": str(path)}


COMMAND_HANDLERS: Dict[str, Callable[[RunConfig, Path, bool], Dict[str, Any]]] = {
    "train": cmd_train,
    "sample": cmd_sample,
    "invert": cmd_invert,
    "edit": cmd_edit,
    "tendency": cmd_tendency,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
    "dataset-gen": cmd_dataset_gen,
}


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the process exit code."""
    if isinstance(exc, (NumericalError, TapeError, OracleError)):
        return EXIT_NUMERICAL
    if isinstance(exc, (FormatError, OSError)):
        return EXIT_IO
    return EXIT_USAGE


def run(argv: List[str]) -> int:
    """Parse ``argv``, run one command, return the exit code."""
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if getattr(ns, "command", None) is None:
            raise UsageError("a command is required", parser.format_usage())
    except UsageError as exc:
        sys.stderr.write(f"{exc.usage}lore: error: {exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    setup_logging()
    try:
        cfg = resolve_config(ns)
        setup_logging(cfg.log_level)
        cfg.validate()
        if "dump_config" in vars(ns):
            dump_config(cfg, ns.dump_config)
            log_event(logger, "config dumped", path=ns.dump_config)
            return EXIT_OK
        out = resolve_out_dir(cfg)
        out.mkdir(parents=True, exist_ok=True)
        log_event(logger, "run started", command=cfg.command, seed=cfg.seed, out=str(out),
                  config=config_summary(cfg))
        dump_config(cfg, out / "config.yaml")
        artifacts = COMMAND_HANDLERS[cfg.command](cfg, out, not cfg.quiet)
    except (LoreError, OSError) as exc:
        code = exit_code_for(exc)
        fields = {"error": type(exc).__name__, "detail": str(exc), "exit_code": code}
        if isinstance(exc, NumericalError):
            fields["diagnostics"] = exc.diagnostics
        log_event(logger, "run failed", logging.ERROR, **fields)
        return code
    log_event(logger, "run finished", command=cfg.command, **artifacts)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]))
