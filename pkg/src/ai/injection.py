"""
Value cache and masked value injection.

During inversion the image-token value rows of every layer are recorded per
step and per guidance branch. During denoising those rows replace the live
rows of tokens outside the edit mask::

    v_hat <- (1 - M) * v_cached + M * v_hat

Text-token values are never touched. Selection is done with ``where`` so both
sides of the identity hold bit for bit.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.core import tensor as T
from src.core.errors import ConfigError, ScheduleMismatchError
from src.core.tensor import Tensor

COND = "cond"
NULL = "null"


@dataclass
class ValueCache:
    """
    Image-token value rows recorded during inversion.

    Attributes:
        steps (int): Schedule length T the cache was recorded with.
        layers (int): Number of transformer layers.
        rows (Dict[Tuple[int, str], List[np.ndarray]]): ``(step, branch)`` to
            one ``[n_image_tokens, d_model]`` array per layer.
    """
    steps: int
    layers: int
    rows: Dict[Tuple[int, str], List[np.ndarray]] = field(default_factory=dict)
    frozen: bool = False

    def record(self, step: int, branch: str, values: List[np.ndarray]) -> None:
        if self.frozen:
            raise ConfigError("value cache is read-only after inversion")
        if len(values) != self.layers:
            raise ConfigError(f"expected {self.layers} layers of values, got {len(values)}")
        self.rows[(step, branch)] = [np.array(v, copy=True) for v in values]

    def freeze(self) -> None:
        for arrays in self.rows.values():
            for arr in arrays:
                arr.setflags(write=False)
        self.frozen = True

    def branches(self, step: int) -> List[str]:
        return [b for (s, b) in self.rows if s == step]

    def layer_rows(self, step: int, branch: str) -> List[np.ndarray]:
        """
        Rows for one step; falls back to the other branch when only one was
        recorded.

        Raises:
            ConfigError: If the step is missing.
        """
        if (step, branch) in self.rows:
            return self.rows[(step, branch)]
        other = NULL if branch == COND else COND
        if (step, other) in self.rows:
            return self.rows[(step, other)]
        raise ConfigError(f"value cache has no entry for step {step}")

    def is_complete(self) -> bool:
        return all(self.branches(s) for s in range(self.steps))

    def check_schedule(self, steps: int) -> None:
        if steps != self.steps:
            raise ScheduleMismatchError(
                f"value cache recorded with {self.steps} steps, denoising uses {steps}")
        if not self.is_complete():
            missing = [s for s in range(self.steps) if not self.branches(s)]
            raise ConfigError(f"value cache is missing steps {missing}")


class ValueInjection:
    """
    Replaces out-of-mask image value rows with cached rows for one forward.

    Args:
        cached (List[np.ndarray]): Per-layer ``[n_image_tokens, d_model]``.
        keep (np.ndarray): Bool ``[n_image_tokens]``; True keeps the live row
            (inside the edit mask).
    """

    def __init__(self, cached: List[np.ndarray], keep: np.ndarray):
        self.cached = cached
        self.keep = np.asarray(keep, dtype=bool).reshape(-1)

    def apply(self, layer: int, v: Tensor) -> Tensor:
        if layer >= len(self.cached) or self.cached[layer] is None:
            raise ConfigError(f"value cache is missing layer {layer}")
        rows = self.cached[layer]
        n_img = rows.shape[0]
        seq, width = v.shape[-2], v.shape[-1]
        n_text = seq - n_img
        if n_text < 0 or self.keep.size != n_img or rows.shape[1] != width:
            raise ConfigError("value cache rows do not match the live sequence")
        keep_full = np.concatenate([np.ones(n_text, dtype=bool), self.keep])[:, None]
        cached_full = np.concatenate([np.zeros((n_text, width), dtype=rows.dtype), rows], axis=0)
        return T.where(keep_full, v, Tensor(cached_full))


def injection_for(cache: ValueCache, step: int, branch: str, keep: np.ndarray) -> ValueInjection:
    return ValueInjection(cache.layer_rows(step, branch), keep)


def step_in_range(step: int, start: int, end: Optional[int]) -> bool:
    return step >= start and (end is None or step < end)
