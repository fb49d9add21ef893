"""
Procedural shapes scenes.

A scene places up to three coloured shapes in the cells of a 2 x 2 grid over
a solid or checkered background. Shapes are rasterized from signed distance
functions with a one-pixel anti-aliased edge; pixels are sampled at their
centres ``(i + 0.5, j + 0.5)``. Images are quantized to the PPM byte grid so
they survive a file round trip unchanged.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.ai.vocab import BACKGROUNDS, COLORS, POSITIONS, SHAPES, ObjectClass, PromptSeq, encode
from src.core.errors import ConfigError
from src.core.image_io import to_bytes, to_float
from src.core.rng import Rng

IMAGE_SIZE = 32
CELL = 16
CHECKER = 8
MAX_OBJECTS = 3

COLOR_RGB: Dict[str, Tuple[float, float, float]] = {
    "red": (1.0, -1.0, -1.0),
    "green": (-1.0, 1.0, -1.0),
    "blue": (-1.0, -1.0, 1.0),
    "yellow": (1.0, 1.0, -1.0),
    "magenta": (1.0, -1.0, 1.0),
    "cyan": (-1.0, 1.0, 1.0),
}

BACKGROUND_RGB: Dict[str, Tuple[float, float, float]] = {
    "black": (-1.0, -1.0, -1.0),
    "white": (1.0, 1.0, 1.0),
    "gray": (0.0, 0.0, 0.0),
    "brown": (0.2, -0.4, -0.7),
}
CHECKER_TONES = ((-0.6, -0.6, -0.6), (-0.2, -0.2, -0.2))


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    cell: int

    @property
    def object_class(self) -> ObjectClass:
        return (self.shape, self.color)

    @property
    def position(self) -> str:
        return POSITIONS[self.cell]


@dataclass(frozen=True)
class SceneSpec:
    """
    Attributes:
        objects (Tuple[SceneObject, ...]): 0-3 objects in distinct cells.
        background (str): One of the background words.
        seed (int): Drives the per-object placement jitter.
    """
    objects: Tuple[SceneObject, ...] = ()
    background: str = "black"
    seed: int = 0

    def validate(self) -> None:
        if len(self.objects) > MAX_OBJECTS:
            raise ConfigError(f"a scene holds at most {MAX_OBJECTS} objects")
        cells = [o.cell for o in self.objects]
        if len(set(cells)) != len(cells):
            raise ConfigError(f"objects share a cell: {cells}")
        for obj in self.objects:
            if obj.shape not in SHAPES or obj.color not in COLORS:
                raise ConfigError(f"unknown object {obj.color} {obj.shape}")
            if not 0 <= obj.cell < len(POSITIONS):
                raise ConfigError(f"cell {obj.cell} outside the 2x2 grid")
        if self.background not in BACKGROUNDS:
            raise ConfigError(f"unknown background '{self.background}'")

    def ordered(self) -> List[SceneObject]:
        return sorted(self.objects, key=lambda o: o.cell)


@dataclass
class Scene:
    image: np.ndarray
    prompt: PromptSeq
    masks: Dict[int, np.ndarray] = field(default_factory=dict)
    spec: Optional[SceneSpec] = None

    def mask_for(self, cell: int) -> np.ndarray:
        return self.masks[cell]


def _signed_distance(shape: str, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Distance to the shape boundary in pixels, negative inside."""
    if shape == "circle":
        return np.hypot(dx, dy) - 5.5
    if shape == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) - 5.0
    if shape == "triangle":
        # apex up; edges as half-planes
        edges = []
        for (x0, y0), (x1, y1) in (((0.0, -6.0), (6.0, 5.0)), ((6.0, 5.0), (-6.0, 5.0)),
                                   ((-6.0, 5.0), (0.0, -6.0))):
            nx, ny = y1 - y0, -(x1 - x0)
            norm = np.hypot(nx, ny)
            edges.append(((dx - x0) * nx + (dy - y0) * ny) / norm)
        return np.maximum.reduce(edges)
    if shape == "cross":
        horizontal = np.maximum(np.abs(dx) - 6.0, np.abs(dy) - 2.0)
        vertical = np.maximum(np.abs(dx) - 2.0, np.abs(dy) - 6.0)
        return np.minimum(horizontal, vertical)
    if shape == "ring":
        return np.abs(np.hypot(dx, dy) - 4.5) - 1.5
    if shape == "bar":
        return np.maximum(np.abs(dx) - 7.0, np.abs(dy) - 2.5)
    raise ConfigError(f"unknown shape '{shape}'")


def _background(name: str, size: int) -> np.ndarray:
    if name == "checker":
        ys, xs = np.mgrid[0:size, 0:size]
        parity = ((ys // CHECKER) + (xs // CHECKER)) % 2
        tones = np.asarray(CHECKER_TONES, dtype=np.float64)
        return tones[parity]
    return np.broadcast_to(np.asarray(BACKGROUND_RGB[name], dtype=np.float64), (size, size, 3)).copy()


def object_alpha(obj: SceneObject, seed: int, size: int = IMAGE_SIZE) -> np.ndarray:
    """Coverage in ``[0, 1]`` of one object, ``[size, size]``."""
    jitter = Rng(seed).spawn(obj.cell).integers(-1, 2, size=2)
    row, col = divmod(obj.cell, 2)
    cy = row * CELL + CELL / 2 + float(jitter[0])
    cx = col * CELL + CELL / 2 + float(jitter[1])
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    d = _signed_distance(obj.shape, xs - cx, ys - cy)
    return np.clip(0.5 - d, 0.0, 1.0)


def scene_prompt(spec: SceneSpec, max_tokens: int = 10) -> PromptSeq:
    words: List[str] = []
    for obj in spec.ordered():
        words += [obj.color, obj.shape, obj.position]
    words.append(spec.background)
    return encode(words, max_tokens)


def gen_scene(spec: SceneSpec, max_tokens: int = 10) -> Scene:
    """
    Rasterize a scene.

    Returns:
        Scene: Image in ``[-1, 1]`` on the byte grid, prompt listing
        ``colour shape position`` per object in cell order followed by the
        background word, and the exact pixel footprint of every object keyed
        by cell.

    Raises:
        ConfigError: On an invalid spec.
    """
    spec.validate()
    image = _background(spec.background, IMAGE_SIZE)
    masks: Dict[int, np.ndarray] = {}
    for obj in spec.ordered():
        alpha = object_alpha(obj, spec.seed)[..., None]
        image = image * (1.0 - alpha) + np.asarray(COLOR_RGB[obj.color]) * alpha
        masks[obj.cell] = alpha[..., 0] > 0
    quantized = to_float(to_bytes(image))
    return Scene(image=quantized, prompt=scene_prompt(spec, max_tokens), masks=masks, spec=spec)


def random_spec(rng: Rng, min_objects: int = 1, max_objects: int = MAX_OBJECTS) -> SceneSpec:
    count = int(rng.integers(min_objects, max_objects + 1))
    cells = sorted(int(c) for c in rng.choice(len(POSITIONS), size=count))
    objects = tuple(
        SceneObject(SHAPES[int(rng.integers(0, len(SHAPES)))], COLORS[int(rng.integers(0, len(COLORS)))], cell)
        for cell in cells)
    background = BACKGROUNDS[int(rng.integers(0, len(BACKGROUNDS)))]
    return SceneSpec(objects=objects, background=background, seed=rng.next_seed())


def gen_dataset(n: int, rng: Rng, min_objects: int = 1,
                max_objects: int = MAX_OBJECTS, max_tokens: int = 10) -> Tuple[np.ndarray, List[PromptSeq], List[Scene]]:
    """``n`` random scenes: stacked images, prompts and the scenes."""
    scenes = [gen_scene(random_spec(rng.spawn(i), min_objects, max_objects), max_tokens) for i in range(n)]
    images = np.stack([s.image for s in scenes]) if scenes else np.zeros((0, IMAGE_SIZE, IMAGE_SIZE, 3), np.float32)
    return images, [s.prompt for s in scenes], scenes


def single_object_spec(cls: ObjectClass, cell: int, background: str, seed: int) -> SceneSpec:
    return SceneSpec(objects=(SceneObject(cls[0], cls[1], cell),), background=background, seed=seed)
