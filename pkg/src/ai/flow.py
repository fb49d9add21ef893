"""
Rectified-flow training, guided Euler sampling and inversion.

Convention used by every integrator in this module:

    t = 0 is data, t = 1 is noise
    z_t = (1 - t) * x + t * eps,   target velocity v* = eps - x

Generation integrates t: 1 -> 0 with ``z <- z - tau * v``; inversion
integrates t: 0 -> 1 with ``z <- z + tau * v``. Denoising step ``i`` covers
the same time interval as inversion step ``T - 1 - i``.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from src.ai.injection import COND, NULL, ValueCache, ValueInjection
from src.ai.models import ForwardOutput, MicroDiT, ProbeConfig, patchify, unpatchify
from src.ai.vocab import PromptSeq, null_prompt
from src.core import tensor as T
from src.core.errors import ConfigError, NumericalError
from src.core.rng import Rng
from src.core.tensor import Tensor

logger = logging.getLogger(__name__)

InjectionPlan = Callable[[int], Optional[Dict[str, ValueInjection]]]


@dataclass
class ScheduleConfig:
    """
    Uniform Euler schedule.

    Attributes:
        steps (int): Number of Euler steps T; step width is 1/T.
        guidance (float): Default classifier-free guidance scale g.
        invert_with_guidance (bool): Apply g during inversion too; when off
            inversion uses the conditional velocity alone.
    """
    steps: int = 15
    guidance: float = 2.0
    invert_with_guidance: bool = True

    def validate(self) -> None:
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.guidance < 0:
            raise ConfigError(f"guidance must be >= 0, got {self.guidance}")

    @property
    def tau(self) -> float:
        return 1.0 / self.steps

    def timesteps(self) -> np.ndarray:
        """Grid ``0, 1/T, ..., 1`` (strictly increasing)."""
        return np.arange(self.steps + 1, dtype=np.float64) / self.steps

    def denoise_time(self, step: int) -> float:
        return 1.0 - step / self.steps

    def invert_time(self, step: int) -> float:
        return step / self.steps


@dataclass
class TrainConfig:
    """
    Toy training settings.

    Attributes:
        steps (int): Optimizer steps.
        batch_size (int): Images per step.
        lr (float): Learning rate.
        momentum (float): SGD momentum.
        prompt_dropout (float): Per-sample probability of the null prompt.
        optimizer (str): ``"sgd"`` or ``"adam"``.
        dataset_size (int): Scenes generated for training.
        log_every (int): Steps between loss log records.
    """
    steps: int = 3000
    batch_size: int = 32
    lr: float = 1e-3
    momentum: float = 0.9
    prompt_dropout: float = 0.1
    optimizer: str = "sgd"
    dataset_size: int = 2048
    log_every: int = 50

    def validate(self) -> None:
        if self.steps < 0 or self.batch_size < 1 or self.dataset_size < 1:
            raise ConfigError("train steps, batch_size and dataset_size must be positive")
        if self.lr <= 0:
            raise ConfigError(f"train lr must be positive, got {self.lr}")
        if not 0.0 <= self.prompt_dropout <= 1.0:
            raise ConfigError(f"prompt_dropout must lie in [0, 1], got {self.prompt_dropout}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer '{self.optimizer}'")


class SGD:
    """SGD with heavy-ball momentum."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, momentum: float = 0.9):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self._buf = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, buf in zip(self.params, self._buf):
            if p.grad is None:
                continue
            buf *= np.float32(self.momentum)
            buf += p.grad.astype(np.float32)
            p.data = (p.data - np.float32(self.lr) * buf).astype(np.float32)


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.betas, self.eps = lr, betas, eps
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._t = 0

    def step(self) -> None:
        self._t += 1
        b1, b2 = self.betas
        c1, c2 = 1.0 - b1 ** self._t, 1.0 - b2 ** self._t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad.astype(np.float32)
            m[...] = b1 * m + (1.0 - b1) * g
            v[...] = b2 * v + (1.0 - b2) * g * g
            p.data = (p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(np.float32)


def make_optimizer(model: MicroDiT, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(model.parameters(), lr=cfg.lr)
    return SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum)


def _check_latent(z: np.ndarray, phase: str, step: int) -> None:
    if not np.isfinite(z).all():
        raise NumericalError(
            f"non-finite latent during {phase} at step {step}",
            diagnostics={"phase": phase, "step": step,
                         "non_finite": int(z.size - np.isfinite(z).sum())},
        )


# ------------------------------------------------------------------ training
def train_step(
    model: MicroDiT,
    images: np.ndarray,
    prompts: Sequence[PromptSeq],
    rng: Rng,
    optimizer,
    prompt_dropout: float = 0.1,
) -> float:
    """
    One flow-matching step.

    Draws ``t ~ U(0, 1)`` and ``eps ~ N(0, 1)`` per sample, swaps prompts
    for the null prompt with probability ``prompt_dropout``, and minimizes
    the per-element mean of ``(v(z_t, P, t) - (eps - x))^2``.

    Returns:
        float: Loss before the parameter update.

    Raises:
        ConfigError: On an empty batch.
        NumericalError: If the loss or a gradient is non-finite; the
            diagnostics name the phase.
    """
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4 or len(images) == 0 or len(images) != len(prompts):
        raise ConfigError("train_step needs a nonempty batch of images with one prompt each")
    cfg = model.config
    x = np.stack([patchify(im, cfg.patch) for im in images])
    batch = len(x)
    t = rng.spawn(0).uniform((batch,))
    eps = rng.spawn(1).normal(x.shape)
    drop = rng.spawn(2).uniform((batch,)) < np.float32(prompt_dropout)
    null = null_prompt(cfg.max_text_tokens)
    batch_prompts = [null if d else p for p, d in zip(prompts, drop)]

    tb = t[:, None, None]
    z_t = ((1.0 - tb) * x + tb * eps).astype(np.float32)
    target = (eps - x).astype(np.float32)

    model.zero_grad()
    try:
        out = model.forward_velocity(Tensor(z_t), batch_prompts, t)
        diff = out.velocity - Tensor(target)
        loss = T.mean(diff * diff)
        T.backward(loss)
    except NumericalError as exc:
        exc.diagnostics.setdefault("phase", "train_step")
        raise
    optimizer.step()
    return loss.item()


def train(
    model: MicroDiT,
    images: np.ndarray,
    prompts: Sequence[PromptSeq],
    cfg: TrainConfig,
    rng: Rng,
    progress: bool = True,
) -> List[float]:
    """Run ``cfg.steps`` training steps over a fixed dataset; returns losses."""
    cfg.validate()
    optimizer = make_optimizer(model, cfg)
    n = len(images)
    losses: List[float] = []
    for step in tqdm(range(cfg.steps), desc="train", disable=not progress, leave=False):
        idx = rng.spawn(step, 0).choice(n, size=cfg.batch_size, replace=n < cfg.batch_size)
        try:
            loss = train_step(model, images[idx], [prompts[i] for i in idx],
                              rng.spawn(step, 1), optimizer, cfg.prompt_dropout)
        except NumericalError as exc:
            exc.diagnostics["train_step"] = step
            raise
        losses.append(loss)
        if cfg.log_every and (step + 1) % cfg.log_every == 0:
            window = losses[-cfg.log_every:]
            logger.info("train progress", extra={"fields": {
                "step": step + 1, "loss": round(float(np.mean(window)), 6)}})
    return losses


# ------------------------------------------------------------------ guidance
@dataclass
class GuidedVelocity:
    """
    Guided velocity and the raw branch forwards that produced it.

    Attributes:
        velocity (np.ndarray): ``v_null + g * (v_cond - v_null)``.
        branches (Dict[str, ForwardOutput]): ``"cond"``/``"null"`` forwards
            actually evaluated (one branch when g is 0 or 1).
    """
    velocity: np.ndarray
    branches: Dict[str, ForwardOutput] = field(default_factory=dict)


def cfg_velocity(
    model,
    z: np.ndarray,
    prompt: PromptSeq,
    t: float,
    g: float,
    injections: Optional[Dict[str, ValueInjection]] = None,
    probe: Optional[ProbeConfig] = None,
    step: Optional[int] = None,
) -> GuidedVelocity:
    """
    Classifier-free guided velocity.

    ``g == 1`` returns the conditional velocity and ``g == 0`` the
    unconditional one without any extrapolation arithmetic.

    Raises:
        ConfigError: If ``g < 0``.
    """
    if g < 0:
        raise ConfigError(f"guidance must be >= 0, got {g}")
    injections = injections or {}
    branches: Dict[str, ForwardOutput] = {}
    if g != 0:
        branches[COND] = model.velocity(z, prompt, t, injection=injections.get(COND),
                                        probe=probe, step=step)
    if g != 1:
        branches[NULL] = model.velocity(z, null_prompt(len(prompt.ids)), t,
                                        injection=injections.get(NULL), probe=probe, step=step)
    if g == 1:
        v = branches[COND].velocity.data
    elif g == 0:
        v = branches[NULL].velocity.data
    else:
        v_null = branches[NULL].velocity.data
        v = v_null + np.float32(g) * (branches[COND].velocity.data - v_null)
    return GuidedVelocity(velocity=np.asarray(v, dtype=np.float32), branches=branches)


# ------------------------------------------------------------ integrators
@dataclass
class DenoiseResult:
    """
    Output of a 1 -> 0 integration.

    Attributes:
        latent (np.ndarray): ``z`` at t = 0 in patch layout.
        values (Optional[Dict]): ``(step, branch)`` to per-layer image value
            rows seen by each forward, when requested.
    """
    latent: np.ndarray
    values: Optional[Dict] = None

    def image(self, patch: int = 4, channels: int = 3) -> np.ndarray:
        return unpatchify(self.latent, patch, channels)


def denoise(
    model,
    z1: np.ndarray,
    prompt: PromptSeq,
    sched: ScheduleConfig,
    g: Optional[float] = None,
    injection_plan: Optional[InjectionPlan] = None,
    record_values: bool = False,
    progress: bool = False,
) -> DenoiseResult:
    """
    Euler integration from t = 1 to t = 0::

        z_{t - tau} = z_t - tau * cfg_velocity(z_t, prompt, t, g)

    ``injection_plan(step)`` may return per-branch value injections for a
    step.
    """
    sched.validate()
    g = sched.guidance if g is None else g
    z = np.array(z1, dtype=np.float32, copy=True)
    _check_latent(z, "denoise", -1)
    tau = np.float32(sched.tau)
    probe = ProbeConfig(record_values=True) if record_values else None
    values: Optional[Dict] = {} if record_values else None
    for i in tqdm(range(sched.steps), desc="denoise", disable=not progress, leave=False):
        injections = injection_plan(i) if injection_plan is not None else None
        out = cfg_velocity(model, z, prompt, sched.denoise_time(i), g,
                           injections=injections, probe=probe, step=i)
        if values is not None:
            for branch, fo in out.branches.items():
                values[(i, branch)] = fo.values
        z = (z - tau * out.velocity).astype(np.float32)
        _check_latent(z, "denoise", i)
    return DenoiseResult(latent=z, values=values)


def sample(model, z1: np.ndarray, prompt: PromptSeq, sched: ScheduleConfig,
           g: Optional[float] = None, progress: bool = False) -> np.ndarray:
    """Generate from noise ``z1``; returns the t = 0 latent."""
    return denoise(model, z1, prompt, sched, g, progress=progress).latent


@dataclass
class InversionResult:
    """
    Attributes:
        latent (np.ndarray): Inverted noise at t = 1.
        cache (Optional[ValueCache]): Recorded value rows (frozen).
        trajectory (List[np.ndarray]): ``z`` at each grid time ``0 .. 1``.
    """
    latent: np.ndarray
    cache: Optional[ValueCache]
    trajectory: List[np.ndarray]


def invert(
    model,
    image: np.ndarray,
    src_prompt: PromptSeq,
    sched: ScheduleConfig,
    g: Optional[float] = None,
    probe: Optional[ProbeConfig] = None,
    progress: bool = False,
) -> InversionResult:
    """
    Euler integration from t = 0 to t = 1 under the source prompt::

        z_{t + tau} = z_t + tau * cfg_velocity(z_t, src_prompt, t, g)

    Args:
        image (np.ndarray): ``[H, W, 3]`` image or a latent already in
            patch layout.
        probe (Optional[ProbeConfig]): With ``record_values`` the value rows
            of every evaluated branch are kept per step.
    """
    sched.validate()
    g = sched.guidance if g is None else g
    g_inv = g if sched.invert_with_guidance else 1.0
    cfg = model.config
    z = patchify(image, cfg.patch) if np.ndim(image) == 3 else np.array(image, dtype=np.float32)
    _check_latent(z, "invert", -1)
    record = probe is not None and probe.record_values
    cache = ValueCache(steps=sched.steps, layers=cfg.layers) if record else None
    step_probe = ProbeConfig(record_values=True) if record else None
    tau = np.float32(sched.tau)
    trajectory = [z]
    for j in tqdm(range(sched.steps), desc="invert", disable=not progress, leave=False):
        out = cfg_velocity(model, z, src_prompt, sched.invert_time(j), g_inv, probe=step_probe, step=j)
        if cache is not None:
            for branch, fo in out.branches.items():
                cache.record(j, branch, fo.values)
        z = (z + tau * out.velocity).astype(np.float32)
        _check_latent(z, "invert", j)
        trajectory.append(z)
    if cache is not None:
        cache.freeze()
    return InversionResult(latent=z, cache=cache, trajectory=trajectory)


def reconstruction_mse(model, image: np.ndarray, prompt: PromptSeq, sched: ScheduleConfig,
                       g: Optional[float] = None) -> float:
    """Per-element MSE of ``sample(invert(x))`` against ``x``."""
    inv = invert(model, image, prompt, sched, g)
    out = sample(model, inv.latent, prompt, sched, g)
    x = patchify(image, model.config.patch)
    return float(np.mean((out.astype(np.float64) - x) ** 2))
