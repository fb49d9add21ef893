"""
Latent optimization with a tendency loss and masked value injection.

An edit runs three phases:

1. invert the source image under the source prompt, caching image-token
   value rows at every step;
2. push the inverted noise towards the target concept by gradient descent
   on ``1 - max(M * G(A_obj))`` measured at t = 1;
3. denoise the optimized noise under the target prompt while value rows
   outside the mask are taken from the cache.
"""

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, Iterator, List, Optional

import numpy as np

from src.ai.flow import DenoiseResult, ScheduleConfig, denoise, invert
from src.ai.injection import COND, NULL, ValueCache, injection_for, step_in_range
from src.ai.models import MicroDiT, ModelConfig, ProbeConfig, unpatchify
from src.ai.probe import (GaussianKernel, TokenMask, extract_map, gaussian_smooth, masked_max,
                          prompt_tendency)
from src.ai.vocab import PromptSeq, find_word, parse_prompt
from src.core import tensor as T
from src.core.errors import ConfigError, NumericalError
from src.core.gradcheck import grad_check
from src.core.rng import Rng
from src.core.tensor import Tensor

if TYPE_CHECKING:
    from src.bench.suites import EditTask

logger = logging.getLogger(__name__)


@dataclass
class OptimConfig:
    """
    Latent optimization and injection settings.

    Attributes:
        lr (float): Step size of plain SGD on the latent.
        iterations (int): Number of gradient steps E.
        mask_restricted_update (bool): Only update latent entries of masked
            tokens; the rest stay bit-identical.
        renoise (bool): Replace masked latent entries with fresh noise first.
        source_suppression (bool): Add the masked peak of the source token
            under the source prompt to the loss.
        kernel_size (int): Gaussian kernel side (odd, <= 7).
        kernel_sigma (float): Gaussian kernel sigma in tokens.
        value_injection (bool): Reuse cached value rows outside the mask.
        injection_start (int): First denoising step that injects.
        injection_end (Optional[int]): Step after the last injecting one
            (None = through the end).
    """
    lr: float = 0.01
    iterations: int = 10
    mask_restricted_update: bool = True
    renoise: bool = False
    source_suppression: bool = False
    kernel_size: int = 3
    kernel_sigma: float = 1.0
    value_injection: bool = True
    injection_start: int = 0
    injection_end: Optional[int] = None

    @property
    def kernel(self) -> GaussianKernel:
        return GaussianKernel(self.kernel_size, self.kernel_sigma)

    def validate(self) -> None:
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.injection_start < 0 or (self.injection_end is not None
                                        and self.injection_end < self.injection_start):
            raise ConfigError("injection step range is empty or negative")
        self.kernel.validate()


@dataclass
class OptimizationResult:
    latent: np.ndarray
    loss_trace: List[float]
    grad_norms: List[float] = field(default_factory=list)


@dataclass
class EditResult:
    """
    Outcome of one edit.

    Attributes:
        image (np.ndarray): Edited image ``[H, W, 3]`` in ``[-1, 1]``.
        latent (np.ndarray): Optimized noise.
        inverted (np.ndarray): Inverted noise before optimization.
        loss_trace (List[float]): One loss per iteration.
        tendency (Dict[str, float]): ``source_pre``, ``target_pre``,
            ``source_post``, ``target_post``.
        timings (Dict[str, float]): Wall seconds per phase.
    """
    image: np.ndarray
    latent: np.ndarray
    inverted: np.ndarray
    loss_trace: List[float]
    tendency: Dict[str, float]
    timings: Dict[str, float]

    @property
    def total_time(self) -> float:
        return float(sum(self.timings.values()))

    def to_record(self) -> Dict:
        return {
            "loss_trace": [float(x) for x in self.loss_trace],
            "tendency": {k: float(v) for k, v in sorted(self.tendency.items())},
        }


@contextmanager
def _timed(timings: Dict[str, float], phase: str) -> Iterator[None]:
    start = time.perf_counter()
    try:
        yield
    finally:
        timings[phase] = time.perf_counter() - start


# -------------------------------------------------------------------- loss
def tendency_loss(
    record,
    target_token: int,
    mask: TokenMask,
    cfg: OptimConfig,
    probe: Optional[ProbeConfig] = None,
    source_record=None,
    source_token: Optional[int] = None,
) -> Tensor:
    """
    ``L = 1 - max over masked tokens of G(A[target])``.

    With ``cfg.source_suppression`` and a source record, the masked peak of
    the smoothed source-token map is added, so L may exceed 1 but is at most
    2; without it L lies in ``[0, 1]``.

    Raises:
        ConfigError: If the target token is padding/null or the mask is empty.
    """
    if mask.is_empty:
        raise ConfigError("tendency loss needs a nonempty mask")
    target = gaussian_smooth(extract_map(record, target_token, probe), cfg.kernel)
    loss = T.add_scalar(T.scale(masked_max(target, mask), -1.0), 1.0)
    if cfg.source_suppression and source_record is not None and source_token is not None:
        source = gaussian_smooth(extract_map(source_record, source_token, probe), cfg.kernel)
        loss = T.add(loss, masked_max(source, mask))
    return loss


def _loss_at(model: MicroDiT, z: Tensor, tgt_prompt: PromptSeq, target_token: int, mask: TokenMask,
             cfg: OptimConfig, probe: Optional[ProbeConfig], src_prompt: Optional[PromptSeq],
             source_token: Optional[int]) -> Tensor:
    probe = probe or ProbeConfig()
    rec_probe = ProbeConfig(record_attention=True, layers=probe.layers, heads=probe.heads)
    record = model.forward_velocity(z, tgt_prompt, 1.0, probe=rec_probe).record
    source_record = None
    if cfg.source_suppression and src_prompt is not None and source_token is not None:
        source_record = model.forward_velocity(z, src_prompt, 1.0, probe=rec_probe).record
    return tendency_loss(record, target_token, mask, cfg, probe, source_record, source_token)


def optimize_latent(
    model: MicroDiT,
    z0: np.ndarray,
    tgt_prompt: PromptSeq,
    target_token: int,
    mask: TokenMask,
    cfg: OptimConfig,
    rng: Rng,
    src_prompt: Optional[PromptSeq] = None,
    source_token: Optional[int] = None,
    probe: Optional[ProbeConfig] = None,
) -> OptimizationResult:
    """
    Gradient descent on the inverted noise.

    Each iteration runs one differentiable forward at t = 1 under the target
    prompt, evaluates :func:`tendency_loss` and applies
    ``z <- z - lr * dL/dz``; with ``mask_restricted_update`` only the
    entries of masked tokens move. With ``renoise`` the masked entries are
    first replaced by fresh Gaussian noise.

    Raises:
        ConfigError: On an invalid config or non-finite input latent.
        NumericalError: If the loss or gradient is non-finite; diagnostics
            carry the iteration and the loss trace so far.
    """
    cfg.validate()
    z = np.array(z0, dtype=np.float32, copy=True)
    if not np.isfinite(z).all():
        raise ConfigError("latent to optimize contains non-finite values")
    frozen = model.frozen()
    update_mask = mask.expand_to_latent(z.shape[-1])
    if cfg.renoise:
        z = np.where(update_mask, rng.normal(z.shape), z).astype(np.float32)

    trace: List[float] = []
    norms: List[float] = []
    lr = np.float32(cfg.lr)
    for it in range(cfg.iterations):
        leaf = Tensor(z, requires_grad=True)
        try:
            loss = _loss_at(frozen, leaf, tgt_prompt, target_token, mask, cfg, probe,
                            src_prompt, source_token)
            T.backward(loss)
        except NumericalError as exc:
            exc.diagnostics.update(phase="optimize", iteration=it, loss_trace=list(trace))
            raise
        grad = leaf.grad.astype(np.float32)
        stepped = (z - lr * grad).astype(np.float32)
        z = np.where(update_mask, stepped, z) if cfg.mask_restricted_update else stepped
        trace.append(loss.item())
        norms.append(float(np.linalg.norm(grad[update_mask])))
    return OptimizationResult(latent=z, loss_trace=trace, grad_norms=norms)


def tendency_loss_gradcheck(model: MicroDiT, z0: np.ndarray, tgt_prompt: PromptSeq, target_token: int,
                            mask: TokenMask, cfg: OptimConfig, eps: float = 1e-5,
                            probe: Optional[ProbeConfig] = None) -> float:
    """Max relative error of ``dL/dz`` against central differences (float64)."""
    frozen = model.frozen()
    return grad_check(
        lambda z: _loss_at(frozen, z, tgt_prompt, target_token, mask, cfg, probe, None, None),
        np.asarray(z0, dtype=np.float64), eps=eps)


CHECK_MODEL = ModelConfig(image_size=8, patch=4, d_model=16, heads=2, layers=2,
                          time_embed_dim=16, mlp_ratio=2)
CHECK_PROMPT = "red circle top-left on black"


def random_tendency_gradcheck(seed: int, eps: float = 1e-5, param_scale: float = 0.3,
                              cfg: Optional[OptimConfig] = None) -> float:
    """
    Check ``dL/dz`` of the full tendency-loss graph on a small random model.

    Weights are redrawn with standard deviation ``param_scale`` so that the
    attention maps are far from uniform and no masked entries tie.
    """
    rng = Rng(seed).spawn(30)
    model = MicroDiT.init(CHECK_MODEL, rng.spawn(0))
    for i, (name, p) in enumerate(sorted(model.params.items())):
        if not name.endswith(".g"):
            p.data = (rng.spawn(1, i).normal(p.shape) * np.float32(param_scale)).astype(np.float32)
    prompt = parse_prompt(CHECK_PROMPT, CHECK_MODEL.max_text_tokens)
    grid = np.zeros((CHECK_MODEL.grid, CHECK_MODEL.grid), dtype=bool)
    grid[0, :] = True
    z0 = rng.spawn(2).normal((CHECK_MODEL.n_image_tokens, CHECK_MODEL.token_dim))
    return tendency_loss_gradcheck(model, z0, prompt, find_word(prompt, "circle"), TokenMask(grid),
                                   cfg or OptimConfig(), eps=eps)


# -------------------------------------------------------------- injection
def denoise_with_injection(
    model: MicroDiT,
    z_hat: np.ndarray,
    tgt_prompt: PromptSeq,
    cache: ValueCache,
    mask: TokenMask,
    sched: ScheduleConfig,
    g: Optional[float] = None,
    cfg: Optional[OptimConfig] = None,
    record_values: bool = False,
) -> DenoiseResult:
    """
    Denoise while image value rows outside ``mask`` come from the cache.

    Denoising step ``i`` reads inversion step ``T - 1 - i`` (the same time
    interval) for both guidance branches. Text-token values are untouched
    and masked rows keep their live values.

    Raises:
        ScheduleMismatchError: If the cache was recorded with another T.
        ConfigError: If the cache lacks steps or layers.
    """
    cache.check_schedule(sched.steps)
    if cache.layers != model.config.layers:
        raise ConfigError(f"value cache has {cache.layers} layers, model has {model.config.layers}")
    cfg = cfg or OptimConfig()
    keep = mask.flat()

    def plan(step: int):
        if not step_in_range(step, cfg.injection_start, cfg.injection_end):
            return None
        source_step = sched.steps - 1 - step
        return {branch: injection_for(cache, source_step, branch, keep) for branch in (COND, NULL)}

    return denoise(model, z_hat, tgt_prompt, sched, g, injection_plan=plan,
                   record_values=record_values)


# -------------------------------------------------------------- pipeline
def edit(
    task: "EditTask",
    model: MicroDiT,
    cfg: OptimConfig,
    sched: ScheduleConfig,
    g: Optional[float] = None,
    probe: Optional[ProbeConfig] = None,
    rng: Optional[Rng] = None,
) -> EditResult:
    """
    Invert, optimize and denoise one task.

    Raises:
        ConfigError: If the target token is not a real token of the target
            prompt or the task mask is empty.
    """
    cfg.validate()
    sched.validate()
    if not task.tgt_prompt.is_real_token(task.target_token):
        raise ConfigError(f"target token {task.target_token} missing from '{task.tgt_prompt.text()}'")
    rng = rng or Rng(task.seed)
    patch = model.config.patch
    mask = TokenMask.from_pixels(task.mask, patch)
    if mask.is_empty:
        raise ConfigError(f"task {task.task_id} has an empty mask")
    timings: Dict[str, float] = {}

    with _timed(timings, "invert"):
        inv = invert(model, task.image, task.src_prompt, sched, g,
                     probe=ProbeConfig(record_values=cfg.value_injection))

    tend = {
        "source_pre": prompt_tendency(model, inv.latent, task.src_prompt, task.source_token, mask, probe),
        "target_pre": prompt_tendency(model, inv.latent, task.tgt_prompt, task.target_token, mask, probe),
    }

    with _timed(timings, "optimize"):
        opt = optimize_latent(model, inv.latent, task.tgt_prompt, task.target_token, mask, cfg,
                              rng.spawn(1), src_prompt=task.src_prompt,
                              source_token=task.source_token, probe=probe)

    tend["source_post"] = prompt_tendency(model, opt.latent, task.src_prompt, task.source_token, mask, probe)
    tend["target_post"] = prompt_tendency(model, opt.latent, task.tgt_prompt, task.target_token, mask, probe)

    with _timed(timings, "denoise"):
        if cfg.value_injection:
            out = denoise_with_injection(model, opt.latent, task.tgt_prompt, inv.cache, mask, sched, g, cfg)
        else:
            out = denoise(model, opt.latent, task.tgt_prompt, sched, g)

    logger.debug("edit finished", extra={"fields": {
        "task": task.task_id, "final_loss": opt.loss_trace[-1] if opt.loss_trace else None}})
    return EditResult(
        image=unpatchify(out.latent, patch, model.config.channels),
        latent=opt.latent,
        inverted=inv.latent,
        loss_trace=opt.loss_trace,
        tendency=tend,
        timings=timings,
    )
