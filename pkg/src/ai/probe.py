"""
Attention probing: spatial maps for a text token, Gaussian smoothing and
the generation-tendency statistic.

Maps live on the image-token grid (8 x 8 for the default model). Smoothing
is a fixed linear operator built once per (kernel, grid) and applied as a
matrix product, so it stays differentiable through the autodiff tape.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from src.ai.models import AttentionRecord, MicroDiT, ProbeConfig
from src.ai.vocab import PromptSeq
from src.core import tensor as T
from src.core.errors import ConfigError, ShapeError
from src.core.tensor import Tensor

MAX_KERNEL = 7


@dataclass(frozen=True, eq=False)
class TokenMask:
    """
    Boolean mask on the image-token grid.

    Attributes:
        grid (np.ndarray): Bool ``[g, g]``, row-major like the token order.
    """
    grid: np.ndarray

    @classmethod
    def from_pixels(cls, mask: np.ndarray, patch: int = 4) -> "TokenMask":
        """A token is marked iff at least one pixel of its patch is masked."""
        mask = np.asarray(mask, dtype=bool)
        h, w = mask.shape
        if h % patch or w % patch:
            raise ShapeError(f"mask {mask.shape} not divisible by patch {patch}")
        pooled = mask.reshape(h // patch, patch, w // patch, patch).any(axis=(1, 3))
        return cls(pooled)

    @classmethod
    def full(cls, grid: int = 8) -> "TokenMask":
        return cls(np.ones((grid, grid), dtype=bool))

    @classmethod
    def empty(cls, grid: int = 8) -> "TokenMask":
        return cls(np.zeros((grid, grid), dtype=bool))

    @property
    def count(self) -> int:
        return int(self.grid.sum())

    @property
    def is_empty(self) -> bool:
        return self.count == 0

    def flat(self) -> np.ndarray:
        return self.grid.reshape(-1)

    def dilate(self, radius: int = 1) -> "TokenMask":
        """Square (Chebyshev) dilation by ``radius`` tokens."""
        g = self.grid
        out = g.copy()
        n = g.shape[0]
        for dr in range(-radius, radius + 1):
            for dc in range(-radius, radius + 1):
                shifted = np.zeros_like(g)
                rs, re = max(dr, 0), n + min(dr, 0)
                cs, ce = max(dc, 0), n + min(dc, 0)
                shifted[rs:re, cs:ce] = g[rs - dr:re - dr, cs - dc:ce - dc]
                out |= shifted
        return TokenMask(out)

    def to_pixels(self, patch: int = 4) -> np.ndarray:
        return np.kron(self.grid, np.ones((patch, patch), dtype=bool)).astype(bool)

    def expand_to_latent(self, token_dim: int) -> np.ndarray:
        """Bool ``[n_tokens, token_dim]``: every entry of a marked token."""
        return np.repeat(self.flat()[:, None], token_dim, axis=1)


@dataclass(frozen=True)
class GaussianKernel:
    """
    Normalized 2-D Gaussian.

    Attributes:
        size (int): Odd side length, at most 7.
        sigma (float): Standard deviation in tokens.
    """
    size: int = 3
    sigma: float = 1.0

    def validate(self) -> None:
        if self.size < 1 or self.size % 2 == 0 or self.size > MAX_KERNEL:
            raise ConfigError(f"kernel size must be odd and <= {MAX_KERNEL}, got {self.size}")
        if not self.sigma > 0:
            raise ConfigError(f"kernel sigma must be positive, got {self.sigma}")

    def weights(self) -> np.ndarray:
        self.validate()
        r = self.size // 2
        ax = np.arange(-r, r + 1, dtype=np.float64)
        g = np.exp(-(ax ** 2) / (2.0 * self.sigma ** 2))
        w = np.outer(g, g)
        return w / w.sum()

    def matrix(self, grid: int) -> np.ndarray:
        return _smoothing_operator(self.size, float(self.sigma), grid)


@lru_cache(maxsize=32)
def _smoothing_operator(size: int, sigma: float, grid: int) -> np.ndarray:
    """``[g*g, g*g]`` operator of a replicate-padded 2-D convolution."""
    w = GaussianKernel(size, sigma).weights()
    r = size // 2
    n = grid * grid
    op = np.zeros((n, n), dtype=np.float64)
    for row in range(grid):
        for col in range(grid):
            out = row * grid + col
            for dr in range(-r, r + 1):
                for dc in range(-r, r + 1):
                    src_r = min(max(row + dr, 0), grid - 1)
                    src_c = min(max(col + dc, 0), grid - 1)
                    op[out, src_r * grid + src_c] += w[dr + r, dc + r]
    op.setflags(write=False)
    return op


@dataclass
class SpatialAttnMap:
    """
    Attention received by one text token, per image token.

    Attributes:
        values (Tensor): ``[g, g]`` entries in ``[0, 1]``; part of the graph
            when the record was.
        token_index (int): Text position the map belongs to.
    """
    values: Tensor
    token_index: int

    @property
    def grid(self) -> int:
        return self.values.shape[0]

    def numpy(self) -> np.ndarray:
        return np.array(self.values.data, dtype=np.float64)


def extract_map(record: AttentionRecord, token_index: int,
                probe: Optional[ProbeConfig] = None) -> SpatialAttnMap:
    """
    Mean of the image-from-text attention column for ``token_index`` over
    the probe's layers and heads, reshaped row-major to the token grid.

    Only the first batch row of the record is used.

    Raises:
        ConfigError: If the index is out of range or names a PAD/NULL token,
            or the probe selects layers/heads the record lacks.
    """
    probe = probe or ProbeConfig()
    if not record.cross:
        raise ConfigError("attention record is empty; forward without record_attention?")
    if not 0 <= token_index < record.n_text:
        raise ConfigError(f"token index {token_index} outside 0..{record.n_text - 1}")
    if record.prompt is not None and not record.prompt.is_real_token(token_index):
        raise ConfigError(f"token {token_index} is padding or null; no map to extract")
    n_heads = record.cross[0].shape[1]
    layers = sorted(set(probe.layers)) if probe.layers is not None else list(range(record.layers))
    heads = sorted(set(probe.heads)) if probe.heads is not None else list(range(n_heads))
    if not layers or not heads or layers[-1] >= record.layers or layers[0] < 0 \
            or heads[-1] >= n_heads or heads[0] < 0:
        raise ConfigError(f"probe layers {layers} / heads {heads} not in record")

    total: Optional[Tensor] = None
    for layer in layers:
        column = T.getitem(record.cross[layer], (0, slice(None), slice(None), token_index))
        part = T.sum_(T.getitem(column, heads), axis=0)
        total = part if total is None else T.add(total, part)
    mean = T.scale(total, 1.0 / (len(layers) * len(heads)))
    grid = int(round(np.sqrt(mean.shape[0])))
    return SpatialAttnMap(values=T.reshape(mean, (grid, grid)), token_index=token_index)


def gaussian_smooth(attn: SpatialAttnMap, kern: GaussianKernel) -> SpatialAttnMap:
    """
    Replicate-padded 2-D convolution with ``kern``; linear and
    differentiable.

    Raises:
        ConfigError: On an invalid kernel.
    """
    kern.validate()
    grid = attn.grid
    if kern.size == 1:
        return SpatialAttnMap(values=attn.values, token_index=attn.token_index)
    op = Tensor(kern.matrix(grid))
    flat = T.reshape(attn.values, (grid * grid, 1))
    out = T.reshape(T.matmul(op, flat), (grid, grid))
    return SpatialAttnMap(values=out, token_index=attn.token_index)


def tendency(attn: SpatialAttnMap, mask: TokenMask) -> float:
    """
    Generation tendency: mean of the map over masked tokens.

    Raises:
        ConfigError: If the mask is empty.
        ShapeError: If mask and map grids differ.
    """
    if mask.grid.shape != attn.values.shape:
        raise ShapeError(f"mask grid {mask.grid.shape} vs map {attn.values.shape}")
    if mask.is_empty:
        raise ConfigError("tendency needs a nonempty mask")
    return float(attn.numpy()[mask.grid].mean())


def masked_max(attn: SpatialAttnMap, mask: TokenMask) -> Tensor:
    """Differentiable maximum of the map over masked tokens."""
    if mask.is_empty:
        raise ConfigError("masked maximum needs a nonempty mask")
    idx = np.flatnonzero(mask.flat())
    flat = T.reshape(attn.values, (attn.values.size,))
    return T.max_(T.getitem(flat, idx))


def attention_record(model: MicroDiT, z: np.ndarray, prompt: PromptSeq, t: float = 1.0,
                     probe: Optional[ProbeConfig] = None, differentiable: bool = False):
    """Forward at ``t`` keeping attention; returns ``(record, velocity)``."""
    probe = ProbeConfig(record_attention=True, layers=probe.layers if probe else None,
                        heads=probe.heads if probe else None)
    if differentiable:
        out = model.forward_velocity(z, prompt, t, probe=probe)
    else:
        out = model.velocity(z, prompt, t, probe=probe)
    return out.record, out.velocity


def prompt_tendency(model: MicroDiT, z: np.ndarray, prompt: PromptSeq, token_index: int,
                    mask: TokenMask, probe: Optional[ProbeConfig] = None, t: float = 1.0) -> float:
    """Tendency of one prompt token at latent ``z`` (no graph)."""
    record, _ = attention_record(model, z, prompt, t, probe)
    return tendency(extract_map(record, token_index, probe), mask)
