"""
Edit-task suites and task files.

Three suites mirror common editing benchmarks:

* ``pie``   - one object, replaced by a random other class;
* ``smart`` - two or three instances of one class, exactly one edited (its
  position word tells them apart);
* ``gap``   - one object, replaced by the class farthest from it in the
  model's own token-embedding space.

Every suite enumerates its distinct tasks and samples without replacement,
so a request for more tasks than exist fails instead of repeating.
"""

import logging
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from src.ai.vocab import (BACKGROUNDS, CLASSES, ID_TO_WORD, WORD_TO_ID, ObjectClass, PromptSeq,
                          class_index, concept_token, parse_prompt)
from src.bench.shapes import SceneObject, SceneSpec, gen_scene, scene_prompt
from src.core.errors import ConfigError, FormatError, SuiteError
from src.core.image_io import read_image, read_mask, write_image, write_mask
from src.core.rng import Rng

logger = logging.getLogger(__name__)

SUITES = ("pie", "smart", "gap")
N_CELLS = 4
TASK_FILE = "tasks.jsonl"

# (occupied cells, edited cell) for scenes of 2 or 3 same-class instances
_SMART_LAYOUTS: Tuple[Tuple[Tuple[int, ...], int], ...] = tuple(
    (cells, edited)
    for k in (2, 3)
    for cells in combinations(range(N_CELLS), k)
    for edited in cells
)


@dataclass
class EditTask:
    """
    One benchmark item.

    Attributes:
        task_id (str): Unique id within its suite file.
        suite (str): ``pie``, ``smart`` or ``gap``.
        seed (int): Scene seed; also seeds the edit's random draws.
        image (np.ndarray): Source image ``[32, 32, 3]``.
        mask (np.ndarray): Bool ``[32, 32]``, the edited object's footprint.
        src_prompt (PromptSeq): Prompt describing the source scene.
        tgt_prompt (PromptSeq): Same prompt with the edited instance's
            tokens replaced.
        source_class (ObjectClass): ``(shape, colour)`` before the edit.
        target_class (ObjectClass): ``(shape, colour)`` requested.
        source_token (int): Concept token index in ``src_prompt``.
        target_token (int): Concept token index in ``tgt_prompt``.
        edited_cell (int): Grid cell of the edited instance.
        background (str): Background word.
    """
    task_id: str
    suite: str
    seed: int
    image: np.ndarray
    mask: np.ndarray
    src_prompt: PromptSeq
    tgt_prompt: PromptSeq
    source_class: ObjectClass
    target_class: ObjectClass
    source_token: int
    target_token: int
    edited_cell: int
    background: str

    def combined_prompt(self) -> Optional[Tuple[PromptSeq, int]]:
        """
        Target prompt that also names the source concept, inserted right
        after the edited instance's words; returns the prompt and the index
        of the inserted word, or None when the prompt is full.
        """
        word = ID_TO_WORD[self.src_prompt.ids[self.source_token]]
        index = (self.target_token // 3) * 3 + 3
        prompt = self.tgt_prompt.insert(index, word)
        return None if prompt is None else (prompt, index)


def _embedding_table(model) -> np.ndarray:
    if isinstance(model, np.ndarray):
        return model
    return model.params["tok_embed"].data


def class_embedding(model, cls: ObjectClass) -> np.ndarray:
    table = _embedding_table(model).astype(np.float64)
    return table[[WORD_TO_ID[cls[0]], WORD_TO_ID[cls[1]]]].mean(axis=0)


def semantic_gap(model, class_a: ObjectClass, class_b: ObjectClass) -> float:
    """
    ``1 - cos`` between the mean token embeddings of two classes.

    Raises:
        ConfigError: On an unknown class.
    """
    class_index(class_a)
    class_index(class_b)
    if tuple(class_a) == tuple(class_b):
        return 0.0
    u, v = class_embedding(model, class_a), class_embedding(model, class_b)
    denom = float(np.linalg.norm(u) * np.linalg.norm(v))
    if denom == 0.0:
        return 1.0
    return float(1.0 - np.dot(u, v) / denom)


def gap_target(model, source: ObjectClass) -> ObjectClass:
    """The class with the largest semantic gap from ``source`` (first on ties)."""
    gaps = [semantic_gap(model, source, c) if c != tuple(source) else -np.inf for c in CLASSES]
    return CLASSES[int(np.argmax(gaps))]


def _combo_count(kind: str) -> int:
    n_cls, n_bg = len(CLASSES), len(BACKGROUNDS)
    if kind == "pie":
        return n_cls * (n_cls - 1) * N_CELLS * n_bg
    if kind == "smart":
        return n_cls * len(_SMART_LAYOUTS) * (n_cls - 1) * n_bg
    if kind == "gap":
        return n_cls * N_CELLS * n_bg
    raise SuiteError(f"unknown suite '{kind}'; expected one of {SUITES}")


def _decode(kind: str, index: int, model) -> Tuple[Tuple[int, ...], int, ObjectClass, ObjectClass, str]:
    """Map a combination index to (cells, edited cell, source, target, background)."""
    n_cls, n_bg = len(CLASSES), len(BACKGROUNDS)
    index, bg = divmod(index, n_bg)
    background = BACKGROUNDS[bg]
    if kind == "gap":
        src, cell = divmod(index, N_CELLS)
        source = CLASSES[src]
        return (cell,), cell, source, gap_target(model, source), background
    index, offset = divmod(index, n_cls - 1)
    if kind == "pie":
        src, cell = divmod(index, N_CELLS)
        cells, edited = (cell,), cell
    else:
        src, layout = divmod(index, len(_SMART_LAYOUTS))
        cells, edited = _SMART_LAYOUTS[layout]
    return cells, edited, CLASSES[src], CLASSES[(src + 1 + offset) % n_cls], background


def make_task(task_id: str, suite: str, seed: int, cells: Tuple[int, ...], edited: int,
              source: ObjectClass, target: ObjectClass, background: str) -> EditTask:
    objects = tuple(SceneObject(source[0], source[1], c) for c in cells)
    spec = SceneSpec(objects=objects, background=background, seed=seed)
    scene = gen_scene(spec)
    tgt_objects = tuple(SceneObject(target[0], target[1], c) if c == edited else o
                        for o, c in zip(objects, cells))
    tgt_prompt = scene_prompt(SceneSpec(objects=tgt_objects, background=background, seed=seed))
    token = concept_token(scene.prompt, tgt_prompt)
    return EditTask(
        task_id=task_id, suite=suite, seed=seed,
        image=scene.image, mask=scene.mask_for(edited),
        src_prompt=scene.prompt, tgt_prompt=tgt_prompt,
        source_class=tuple(source), target_class=tuple(target),
        source_token=token, target_token=token,
        edited_cell=edited, background=background,
    )


def build_suite(kind: str, n: int, rng: Rng, model=None) -> List[EditTask]:
    """
    Sample ``n`` distinct tasks of one suite.

    Args:
        kind (str): ``pie``, ``smart`` or ``gap``.
        n (int): Number of tasks.
        rng (Rng): Suite stream.
        model: Trained model (or its token-embedding table); required for
            ``gap``.

    Raises:
        SuiteError: On an unknown suite, a missing model for ``gap`` or ``n``
            larger than the number of distinct tasks.
    """
    total = _combo_count(kind)
    if kind == "gap" and model is None:
        raise SuiteError("the gap suite needs trained token embeddings")
    if n < 0 or n > total:
        raise SuiteError(f"suite '{kind}' has {total} distinct tasks, {n} requested")
    stream = rng.spawn(SUITES.index(kind))
    base = stream.next_seed()
    picks = stream.spawn(1).choice(total, size=n, replace=False)
    tasks = []
    for i, index in enumerate(int(p) for p in picks):
        cells, edited, source, target, background = _decode(kind, index, model)
        seed = (base + index) % (2 ** 63)
        tasks.append(make_task(f"{kind}-{i:04d}", kind, seed, cells, edited, source, target, background))
    logger.info("suite built", extra={"fields": {"suite": kind, "tasks": n, "distinct": total}})
    return tasks


# ---------------------------------------------------------------- task files
def write_tasks(tasks: List[EditTask], directory: Union[str, Path]) -> Path:
    """Write PPM images/masks and a JSON-lines index; returns the index path."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    (directory / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for task in tasks:
        image_rel = f"images/{task.task_id}.ppm"
        mask_rel = f"masks/{task.task_id}.ppm"
        write_image(directory / image_rel, task.image)
        write_mask(directory / mask_rel, task.mask)
        rows.append({
            "task_id": task.task_id,
            "suite": task.suite,
            "seed": int(task.seed),
            "image": image_rel,
            "mask": mask_rel,
            "src_prompt": task.src_prompt.text(),
            "tgt_prompt": task.tgt_prompt.text(),
            "source_class": list(task.source_class),
            "target_class": list(task.target_class),
            "source_token": int(task.source_token),
            "target_token": int(task.target_token),
            "edited_cell": int(task.edited_cell),
            "background": task.background,
        })
    path = directory / TASK_FILE
    pd.DataFrame(rows).to_json(path, orient="records", lines=True)
    return path


def read_tasks(path: Union[str, Path], max_tokens: int = 10) -> List[EditTask]:
    """
    Load a JSON-lines task file written by :func:`write_tasks`.

    Raises:
        FormatError: On a malformed index or image.
    """
    path = Path(path)
    try:
        frame = pd.read_json(path, orient="records", lines=True, dtype=False, convert_dates=False)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed task file") from exc
    tasks = []
    for row in frame.to_dict(orient="records"):
        try:
            tasks.append(EditTask(
                task_id=str(row["task_id"]),
                suite=str(row["suite"]),
                seed=int(row["seed"]),
                image=read_image(path.parent / row["image"]),
                mask=read_mask(path.parent / row["mask"]),
                src_prompt=parse_prompt(row["src_prompt"], max_tokens),
                tgt_prompt=parse_prompt(row["tgt_prompt"], max_tokens),
                source_class=tuple(row["source_class"]),
                target_class=tuple(row["target_class"]),
                source_token=int(row["source_token"]),
                target_token=int(row["target_token"]),
                edited_cell=int(row["edited_cell"]),
                background=str(row["background"]),
            ))
        except (KeyError, ConfigError) as exc:
            raise FormatError(f"{path}: bad task record {row.get('task_id')}: {exc}") from exc
    return tasks
