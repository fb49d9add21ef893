"""
Micro DiT velocity network.

A small transformer over the joint sequence ``[text tokens; image tokens]``
with adaptive layer-norm (shift/scale/gate) timestep conditioning. The
network predicts the rectified-flow velocity ``v(z, P, t)`` for a latent in
patch layout and can expose its attention probabilities and value rows for
probing and injection.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.ai.vocab import USED_IDS, PromptSeq
from src.core import tensor as T
from src.core.errors import ConfigError, FormatError, ShapeError
from src.core.rng import Rng
from src.core.serialization import read_checkpoint, write_checkpoint
from src.core.tensor import Tensor

logger = logging.getLogger(__name__)

INIT_STD = 0.02


@dataclass
class ModelConfig:
    """
    Architecture hyper-parameters.

    Attributes:
        image_size (int): Square image side in pixels.
        patch (int): Patch side; image tokens = (image_size / patch) ** 2.
        channels (int): Colour channels.
        d_model (int): Hidden width.
        heads (int): Attention heads; per-head width is d_model / heads.
        layers (int): Transformer blocks.
        vocab_size (int): Token table rows.
        max_text_tokens (int): Prompt length including padding.
        time_embed_dim (int): Sinusoidal timestep embedding width.
        mlp_ratio (int): MLP hidden width multiplier.
    """
    image_size: int = 32
    patch: int = 4
    channels: int = 3
    d_model: int = 64
    heads: int = 4
    layers: int = 4
    vocab_size: int = 48
    max_text_tokens: int = 10
    time_embed_dim: int = 64
    mlp_ratio: int = 4

    FIELD_ORDER = ("image_size", "patch", "channels", "d_model", "heads", "layers",
                   "vocab_size", "max_text_tokens", "time_embed_dim", "mlp_ratio")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    @property
    def n_image_tokens(self) -> int:
        return self.grid * self.grid

    @property
    def token_dim(self) -> int:
        return self.patch * self.patch * self.channels

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    @property
    def seq_len(self) -> int:
        return self.max_text_tokens + self.n_image_tokens

    def validate(self) -> None:
        for name in self.FIELD_ORDER:
            if getattr(self, name) <= 0:
                raise ConfigError(f"ModelConfig.{name} must be positive")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.image_size % self.patch:
            raise ConfigError(f"image_size {self.image_size} not divisible by patch {self.patch}")
        if self.time_embed_dim % 2 or self.d_model % 4:
            raise ConfigError("time_embed_dim must be even and d_model divisible by 4")
        if self.vocab_size < USED_IDS:
            raise ConfigError(f"vocab_size must be at least {USED_IDS}")

    def to_fields(self) -> List[int]:
        return [int(getattr(self, name)) for name in self.FIELD_ORDER]

    @classmethod
    def from_fields(cls, fields: Sequence[int]) -> "ModelConfig":
        if len(fields) != len(cls.FIELD_ORDER):
            raise FormatError(f"checkpoint has {len(fields)} config fields, expected {len(cls.FIELD_ORDER)}")
        return cls(**dict(zip(cls.FIELD_ORDER, fields)))


@dataclass
class ProbeConfig:
    """
    What a forward pass should expose.

    Attributes:
        record_attention (bool): Keep image-to-text attention blocks.
        record_values (bool): Keep image-token value rows per layer.
        layers (Optional[List[int]]): Layers to aggregate (None = all).
        heads (Optional[List[int]]): Heads to aggregate (None = all).
    """
    record_attention: bool = False
    record_values: bool = False
    layers: Optional[List[int]] = None
    heads: Optional[List[int]] = None

    def layer_set(self, cfg: ModelConfig) -> List[int]:
        return sorted(set(self.layers)) if self.layers is not None else list(range(cfg.layers))

    def head_set(self, cfg: ModelConfig) -> List[int]:
        return sorted(set(self.heads)) if self.heads is not None else list(range(cfg.heads))

    def check_indices(self) -> None:
        """Checks that need no architecture: nonempty, nonnegative selections."""
        for name, chosen in (("layers", self.layers), ("heads", self.heads)):
            if chosen is not None and (not chosen or min(chosen) < 0):
                raise ConfigError(f"probe {name} {chosen} must be nonempty and >= 0")

    def validate(self, cfg: ModelConfig) -> None:
        self.check_indices()
        layers, heads = self.layer_set(cfg), self.head_set(cfg)
        if not layers or not heads:
            raise ConfigError("probe must select at least one layer and one head")
        if any(not 0 <= l < cfg.layers for l in layers):
            raise ConfigError(f"probe layers {layers} outside 0..{cfg.layers - 1}")
        if any(not 0 <= h < cfg.heads for h in heads):
            raise ConfigError(f"probe heads {heads} outside 0..{cfg.heads - 1}")


@dataclass
class AttentionRecord:
    """
    Attention captured during one forward pass.

    Attributes:
        cross (List[Tensor]): Per layer, ``[B, heads, n_image, n_text]`` block
            of image queries attending to text keys; live graph nodes when
            the forward was differentiable.
        full (List[np.ndarray]): Per layer, the full ``[B, heads, S, S]``
            attention probabilities (detached).
        t (float): Timestep of the forward.
        step (Optional[int]): Integration step index, if any.
    """
    cross: List[Tensor]
    full: List[np.ndarray]
    t: float
    step: Optional[int] = None
    n_text: int = 0
    prompt: Optional[PromptSeq] = None

    @property
    def layers(self) -> int:
        return len(self.cross)


@dataclass
class ForwardOutput:
    velocity: Tensor
    record: Optional[AttentionRecord] = None
    values: Optional[List[np.ndarray]] = None


def timestep_embedding(t: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal embedding of ``1000 * t``, ``[B, dim]``."""
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = (1000.0 * np.asarray(t, dtype=np.float64))[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=1).astype(np.float32)


def sincos_2d(dim: int, grid: int) -> np.ndarray:
    """Fixed 2-D sin-cos position table, ``[grid * grid, dim]``, row-major."""
    quarter = dim // 4
    omega = 1.0 / 10000.0 ** (np.arange(quarter, dtype=np.float64) / quarter)
    ys, xs = np.meshgrid(np.arange(grid), np.arange(grid), indexing="ij")
    parts = []
    for coord in (ys.reshape(-1), xs.reshape(-1)):
        out = coord[:, None] * omega[None, :]
        parts += [np.sin(out), np.cos(out)]
    return np.concatenate(parts, axis=1).astype(np.float32)


def param_shapes(cfg: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Every parameter name and shape, in checkpoint order."""
    d, hidden = cfg.d_model, cfg.mlp_ratio * cfg.d_model
    shapes: Dict[str, Tuple[int, ...]] = {
        "tok_embed": (cfg.vocab_size, d),
        "txt_pos": (cfg.max_text_tokens, d),
        "patch_in.w": (cfg.token_dim, d),
        "patch_in.b": (d,),
        "time.w1": (cfg.time_embed_dim, d),
        "time.b1": (d,),
        "time.w2": (d, d),
        "time.b2": (d,),
    }
    for l in range(cfg.layers):
        p = f"blocks.{l}."
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "wq": (d, d), p + "bq": (d,),
            p + "wk": (d, d), p + "bk": (d,),
            p + "wv": (d, d), p + "bv": (d,),
            p + "wo": (d, d), p + "bo": (d,),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "mlp.w1": (d, hidden), p + "mlp.b1": (hidden,),
            p + "mlp.w2": (hidden, d), p + "mlp.b2": (d,),
            p + "ada.w": (d, 6 * d), p + "ada.b": (6 * d,),
        })
    shapes.update({
        "final.ln.g": (d,), "final.ln.b": (d,),
        "final.ada.w": (d, 2 * d), "final.ada.b": (2 * d,),
        "head.w": (d, cfg.token_dim), "head.b": (cfg.token_dim,),
    })
    return shapes


def expected_param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count."""
    d, hidden, te, td = cfg.d_model, cfg.mlp_ratio * cfg.d_model, cfg.time_embed_dim, cfg.token_dim
    embed = cfg.vocab_size * d + cfg.max_text_tokens * d + td * d + d
    time = te * d + d + d * d + d
    block = 4 * d + 4 * (d * d + d) + (d * hidden + hidden + hidden * d + d) + (6 * d * d + 6 * d)
    final = 2 * d + 2 * d * d + 2 * d + d * td + td
    return embed + time + cfg.layers * block + final


def patchify(image: np.ndarray, patch: int = 4) -> np.ndarray:
    """
    Rearrange ``[H, W, C]`` pixels into ``[(H/p) * (W/p), p * p * C]``
    tokens. Tokens are row-major over the patch grid; inside a token the
    order is (row, column, channel).

    Raises:
        ShapeError: If the image is not ``[H, W, C]`` with sides divisible
            by ``patch``.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] % patch or image.shape[1] % patch:
        raise ShapeError(f"cannot patchify image of shape {image.shape} with patch {patch}")
    h, w, c = image.shape
    gh, gw = h // patch, w // patch
    return (image.reshape(gh, patch, gw, patch, c)
                 .transpose(0, 2, 1, 3, 4)
                 .reshape(gh * gw, patch * patch * c)
                 .astype(np.float32, copy=True))


def unpatchify(tokens: np.ndarray, patch: int = 4, channels: int = 3) -> np.ndarray:
    """Inverse of :func:`patchify` for a square grid."""
    tokens = np.asarray(tokens)
    n, width = tokens.shape
    grid = int(round(np.sqrt(n)))
    if grid * grid != n or width != patch * patch * channels:
        raise ShapeError(f"cannot unpatchify tokens of shape {tokens.shape}")
    return (tokens.reshape(grid, grid, patch, patch, channels)
                  .transpose(0, 2, 1, 3, 4)
                  .reshape(grid * patch, grid * patch, channels)
                  .astype(np.float32, copy=True))


class MicroDiT:
    """
    The velocity network and its parameters.

    Attributes:
        config (ModelConfig): Architecture.
        params (Dict[str, Tensor]): Named parameters (leaves with grad).
    """

    def __init__(self, config: ModelConfig, params: Dict[str, Tensor]):
        config.validate()
        shapes = param_shapes(config)
        if set(params) != set(shapes):
            missing = sorted(set(shapes) - set(params))
            extra = sorted(set(params) - set(shapes))
            raise ConfigError(f"parameter table mismatch; missing={missing} extra={extra}")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ShapeError(f"{name}: expected {shape}, got {params[name].shape}")
        self.config = config
        self.params = {name: params[name] for name in shapes}
        self._pos_img = sincos_2d(config.d_model, config.grid)

    # -------------------------------------------------------------- creation
    @classmethod
    def init(cls, config: ModelConfig, rng: Rng) -> "MicroDiT":
        """
        Fresh parameters: N(0, 0.02) weights, zero biases, unit layer-norm
        gains, and a zero velocity head so the initial field is v = 0.
        """
        config.validate()
        params = {}
        for name, shape in param_shapes(config).items():
            leaf = name.rsplit(".", 1)[-1]
            if name.startswith("head.") or leaf in ("b", "bq", "bk", "bv", "bo", "b1", "b2"):
                data = np.zeros(shape, dtype=np.float32)
            elif leaf == "g":
                data = np.ones(shape, dtype=np.float32)
            else:
                data = (rng.spawn(len(params)).normal(shape) * np.float32(INIT_STD)).astype(np.float32)
            params[name] = Tensor(data, requires_grad=True, name=name)
        return cls(config, params)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MicroDiT":
        fields, tensors = read_checkpoint(path)
        config = ModelConfig.from_fields(fields)
        model = cls(config, {k: Tensor(v, requires_grad=True, name=k) for k, v in tensors.items()})
        logger.info("checkpoint loaded", extra={"fields": {"path": str(path), "params": model.param_count()}})
        return model

    def save(self, path: Union[str, Path]) -> None:
        write_checkpoint(path, self.config.to_fields(), {k: v.data for k, v in self.params.items()})

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def frozen(self) -> "MicroDiT":
        """Same weights as constant leaves; gradients then stop at the inputs."""
        return MicroDiT(self.config, {k: Tensor(v.data, name=k) for k, v in self.params.items()})

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # --------------------------------------------------------------- forward
    def _prompt_ids(self, prompts: Sequence[PromptSeq]) -> np.ndarray:
        cfg = self.config
        for prompt in prompts:
            if len(prompt.ids) > cfg.max_text_tokens:
                raise ConfigError(f"prompt has {len(prompt.ids)} tokens, limit is {cfg.max_text_tokens}")
            if len(prompt.ids) != cfg.max_text_tokens:
                raise ConfigError(f"prompt must be padded to {cfg.max_text_tokens} tokens")
            if max(prompt.ids) >= cfg.vocab_size or min(prompt.ids) < 0:
                raise ConfigError("prompt token id outside the vocabulary")
        return np.asarray([p.ids for p in prompts], dtype=np.int64)

    def _linear(self, x: Tensor, w: str, b: str) -> Tensor:
        return T.add(T.matmul(x, self.params[w]), self.params[b])

    def forward_velocity(
        self,
        z: Union[Tensor, np.ndarray],
        prompt: Union[PromptSeq, Sequence[PromptSeq]],
        t: Union[float, Sequence[float], np.ndarray],
        probe: Optional[ProbeConfig] = None,
        injection=None,
        step: Optional[int] = None,
    ) -> ForwardOutput:
        """
        Predict the velocity for latent ``z`` under ``prompt`` at time ``t``.

        Args:
            z (Union[Tensor, np.ndarray]): ``[n_image, token_dim]`` or
                ``[B, n_image, token_dim]``.
            prompt (Union[PromptSeq, Sequence[PromptSeq]]): One prompt per
                batch row (a single prompt for an unbatched latent).
            t (Union[float, Sequence[float], np.ndarray]): Time in ``[0, 1]``,
                scalar or one per row.
            probe (Optional[ProbeConfig]): What to record; recording never
                changes the velocity.
            injection: Optional :class:`~src.ai.injection.ValueInjection`.
            step (Optional[int]): Step index stored on the record.

        Returns:
            ForwardOutput: Velocity shaped like ``z`` plus optional record and
            value rows.

        Raises:
            ConfigError: If ``t`` is outside ``[0, 1]`` or a prompt is too long.
            ShapeError: If ``z`` has the wrong shape.
        """
        cfg = self.config
        probe = probe or ProbeConfig()
        z = z if isinstance(z, Tensor) else Tensor(z)
        unbatched = z.ndim == 2
        if unbatched:
            z = T.reshape(z, (1,) + z.shape)
        if z.ndim != 3 or z.shape[1:] != (cfg.n_image_tokens, cfg.token_dim):
            raise ShapeError(f"latent must be [*, {cfg.n_image_tokens}, {cfg.token_dim}], got {z.shape}")
        batch = z.shape[0]
        prompts = [prompt] if isinstance(prompt, PromptSeq) else list(prompt)
        if len(prompts) != batch:
            raise ShapeError(f"{len(prompts)} prompts for a batch of {batch}")
        ts = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1), (batch,))
        if np.any(ts < 0.0) or np.any(ts > 1.0) or not np.isfinite(ts).all():
            raise ConfigError(f"t must lie in [0, 1], got {t}")
        ids = self._prompt_ids(prompts)
        p = self.params
        n_text, d = cfg.max_text_tokens, cfg.d_model

        txt = T.add(T.getitem(p["tok_embed"], ids), p["txt_pos"])
        img = T.add(self._linear(z, "patch_in.w", "patch_in.b"), Tensor(self._pos_img))
        h = T.concat([txt, img], axis=1)

        temb = Tensor(timestep_embedding(ts, cfg.time_embed_dim))
        c = self._linear(T.silu(self._linear(temb, "time.w1", "time.b1")), "time.w2", "time.b2")
        c_act = T.silu(c)

        cross: List[Tensor] = []
        full: List[np.ndarray] = []
        values: List[np.ndarray] = []
        heads, dh = cfg.heads, cfg.head_dim
        inv_sqrt = 1.0 / float(np.sqrt(dh))

        for l in range(cfg.layers):
            pre = f"blocks.{l}."
            mod = self._linear(c_act, pre + "ada.w", pre + "ada.b")
            chunks = [T.reshape(T.getitem(mod, (slice(None), slice(k * d, (k + 1) * d))), (batch, 1, d))
                      for k in range(6)]
            shift1, scale1, gate1, shift2, scale2, gate2 = chunks

            x = T.layernorm(h, p[pre + "ln1.g"], p[pre + "ln1.b"])
            x = T.add(T.mul(x, T.add_scalar(scale1, 1.0)), shift1)
            q = self._linear(x, pre + "wq", pre + "bq")
            k = self._linear(x, pre + "wk", pre + "bk")
            v = self._linear(x, pre + "wv", pre + "bv")
            if injection is not None:
                v = injection.apply(l, v)
            if probe.record_values:
                values.append(np.array(v.data[:, n_text:, :], copy=True))

            def split(a: Tensor) -> Tensor:
                return T.transpose(T.reshape(a, (batch, -1, heads, dh)), (0, 2, 1, 3))

            qh, kh, vh = split(q), split(k), split(v)
            scores = T.scale(T.matmul(qh, T.transpose(kh, (0, 1, 3, 2))), inv_sqrt)
            attn = T.softmax_lastdim(scores)
            if probe.record_attention:
                cross.append(T.getitem(attn, (slice(None), slice(None), slice(n_text, None), slice(0, n_text))))
                full.append(np.array(attn.data, copy=True))
            o = T.reshape(T.transpose(T.matmul(attn, vh), (0, 2, 1, 3)), (batch, -1, d))
            o = self._linear(o, pre + "wo", pre + "bo")
            h = T.add(h, T.mul(gate1, o))

            x2 = T.layernorm(h, p[pre + "ln2.g"], p[pre + "ln2.b"])
            x2 = T.add(T.mul(x2, T.add_scalar(scale2, 1.0)), shift2)
            m = self._linear(T.gelu(self._linear(x2, pre + "mlp.w1", pre + "mlp.b1")), pre + "mlp.w2", pre + "mlp.b2")
            h = T.add(h, T.mul(gate2, m))

        fmod = self._linear(c_act, "final.ada.w", "final.ada.b")
        f_shift = T.reshape(T.getitem(fmod, (slice(None), slice(0, d))), (batch, 1, d))
        f_scale = T.reshape(T.getitem(fmod, (slice(None), slice(d, 2 * d))), (batch, 1, d))
        y = T.layernorm(T.getitem(h, (slice(None), slice(n_text, None))), p["final.ln.g"], p["final.ln.b"])
        y = T.add(T.mul(y, T.add_scalar(f_scale, 1.0)), f_shift)
        velocity = self._linear(y, "head.w", "head.b")
        if unbatched:
            velocity = T.reshape(velocity, velocity.shape[1:])
            values = [v[0] for v in values]

        record = None
        if probe.record_attention:
            record = AttentionRecord(cross=cross, full=full, t=float(ts[0]), step=step,
                                     n_text=n_text, prompt=prompts[0])
        return ForwardOutput(velocity=velocity, record=record,
                             values=values if probe.record_values else None)

    def velocity(self, z: np.ndarray, prompt: PromptSeq, t: float, injection=None,
                 probe: Optional[ProbeConfig] = None, step: Optional[int] = None) -> ForwardOutput:
        """Inference forward without building a graph."""
        with T.no_grad():
            return self.forward_velocity(z, prompt, t, probe=probe, injection=injection, step=step)
