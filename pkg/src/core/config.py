"""
Run configuration.

All settings of a run live in one structured :class:`RunConfig`. It is
dumped to and loaded from YAML with OmegaConf, and flags given on the
command line override the loaded values field by field.
"""

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from omegaconf import OmegaConf
from omegaconf.errors import OmegaConfBaseException

from src.ai.flow import ScheduleConfig, TrainConfig
from src.ai.lore import OptimConfig
from src.ai.models import ModelConfig, ProbeConfig
from src.bench.harness import BenchConfig
from src.bench.suites import SUITES
from src.core.errors import ConfigError

OUT_ENV = "LORE_OUT"
COMMANDS = ("train", "sample", "invert", "edit", "tendency", "bench", "gradcheck", "dataset-gen")


@dataclass
class InputsConfig:
    """
    File and prompt inputs of the single-item commands.

    Attributes:
        image (Optional[str]): Source PPM.
        mask (Optional[str]): Mask PPM (nonzero = edit region).
        prompt (Optional[str]): Prompt for ``sample`` and ``invert``.
        src_prompt (Optional[str]): Source prompt of an edit.
        tgt_prompt (Optional[str]): Target prompt of an edit.
        target_word (Optional[str]): Edited concept word in the target prompt.
        latent (Optional[str]): Tensor blob to denoise instead of fresh noise.
    """
    image: Optional[str] = None
    mask: Optional[str] = None
    prompt: Optional[str] = None
    src_prompt: Optional[str] = None
    tgt_prompt: Optional[str] = None
    target_word: Optional[str] = None
    latent: Optional[str] = None


@dataclass
class DatasetConfig:
    suite: str = "pie"
    tasks: int = 20


@dataclass
class GradcheckConfig:
    seeds: int = 100
    eps: float = 1e-6
    tolerance: float = 1e-4


@dataclass
class RunConfig:
    """
    Everything a run depends on besides the checkpoint bytes.

    Attributes:
        command (str): Subcommand.
        seed (int): Root seed, recorded in every output.
        out_dir (str): Artifact directory (``LORE_OUT`` overrides).
        model_path (Optional[str]): Checkpoint to load.
        log_level (str): Root log level.
        quiet (bool): Disable progress bars.
    """
    command: str = "gradcheck"
    seed: int = 0
    out_dir: str = "out"
    model_path: Optional[str] = None
    log_level: str = "INFO"
    quiet: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    inputs: InputsConfig = field(default_factory=InputsConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command '{self.command}'")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be a u64, got {self.seed}")
        self.model.validate()
        self.schedule.validate()
        self.optim.validate()
        # commands that load a checkpoint check the probe against its config
        if self.command == "train":
            self.probe.validate(self.model)
        else:
            self.probe.check_indices()
        self.train.validate()
        self.bench.validate()
        if self.dataset.suite not in SUITES:
            raise ConfigError(f"unknown suite '{self.dataset.suite}'")
        if self.gradcheck.seeds < 1 or self.gradcheck.eps <= 0:
            raise ConfigError("gradcheck needs seeds >= 1 and eps > 0")


def to_yaml(cfg: RunConfig) -> str:
    return OmegaConf.to_yaml(OmegaConf.structured(cfg))


def dump_config(cfg: RunConfig, path: Union[str, Path]) -> None:
    OmegaConf.save(config=OmegaConf.structured(cfg), f=str(path))


def load_config(path: Union[str, Path]) -> RunConfig:
    """
    Merge a YAML file over the structured defaults.

    Raises:
        ConfigError: On unknown keys or mistyped values.
        OSError: If the file cannot be read.
    """
    if not Path(path).is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        merged = OmegaConf.merge(OmegaConf.structured(RunConfig), OmegaConf.load(str(path)))
        return OmegaConf.to_object(merged)
    except OmegaConfBaseException as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def apply_overrides(cfg: RunConfig, overrides: Dict[str, Any]) -> RunConfig:
    """
    Set dotted-path fields, e.g. ``{"schedule.steps": 30}``.

    Raises:
        ConfigError: On a path that names no field.
    """
    for path, value in sorted(overrides.items()):
        *parents, leaf = path.split(".")
        target = cfg
        for name in parents:
            target = getattr(target, name, None)
            if target is None:
                raise ConfigError(f"no config section '{path}'")
        if not hasattr(target, leaf):
            raise ConfigError(f"no config field '{path}'")
        setattr(target, leaf, value)
    return cfg


def resolve_out_dir(cfg: RunConfig) -> Path:
    """``LORE_OUT`` wins over the configured directory."""
    return Path(os.environ.get(OUT_ENV) or cfg.out_dir)


def config_summary(cfg: RunConfig) -> Dict[str, Any]:
    """Plain nested dict of the resolved config."""
    return OmegaConf.to_container(OmegaConf.structured(cfg), resolve=True)


def layers_list(text: Optional[str]) -> Optional[List[int]]:
    """Parse ``"0,2,3"`` into ``[0, 2, 3]``; empty/None means all."""
    if text is None or text.strip() in ("", "all"):
        return None
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got '{text}'") from exc
