"""
Prompt vocabulary for the shapes world.

Prompts are short word sequences such as ``"red circle top-left on black"``.
Each word maps to one token id and carries a role tag; ``<pad>`` fills the
sequence up to ``max_text_tokens`` and the all-``<null>`` sequence is the
unconditional prompt used for guidance.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import ConfigError


class Role(Enum):
    """Role of a prompt token."""
    PAD = "pad"
    NULL = "null"
    SHAPE = "shape"
    COLOR = "color"
    POSITION = "position"
    BACKGROUND = "background"


SHAPES: Tuple[str, ...] = ("circle", "square", "triangle", "cross", "ring", "bar")
COLORS: Tuple[str, ...] = ("red", "green", "blue", "yellow", "magenta", "cyan")
POSITIONS: Tuple[str, ...] = ("top-left", "top-right", "bottom-left", "bottom-right")
BACKGROUNDS: Tuple[str, ...] = ("black", "white", "gray", "brown", "checker")
FILLER = frozenset({"a", "an", "the", "on", "and"})

PAD_ID = 0
NULL_ID = 1

_WORDS: List[Tuple[str, Role]] = (
    [("<pad>", Role.PAD), ("<null>", Role.NULL)]
    + [(w, Role.SHAPE) for w in SHAPES]
    + [(w, Role.COLOR) for w in COLORS]
    + [(w, Role.POSITION) for w in POSITIONS]
    + [(w, Role.BACKGROUND) for w in BACKGROUNDS]
)
WORD_TO_ID = {word: i for i, (word, _) in enumerate(_WORDS)}
ID_TO_WORD = {i: word for word, i in WORD_TO_ID.items()}
ID_TO_ROLE = {i: role for i, (_, role) in enumerate(_WORDS)}
USED_IDS = len(_WORDS)

# 6 shapes x 6 colours; class index = shape_index * 6 + colour_index
ObjectClass = Tuple[str, str]
CLASSES: Tuple[ObjectClass, ...] = tuple((s, c) for s in SHAPES for c in COLORS)


def class_index(cls: ObjectClass) -> int:
    shape, color = cls
    if shape not in SHAPES or color not in COLORS:
        raise ConfigError(f"unknown class {cls}")
    return SHAPES.index(shape) * len(COLORS) + COLORS.index(color)


def class_name(cls: ObjectClass) -> str:
    return f"{cls[1]} {cls[0]}"


@dataclass(frozen=True)
class PromptSeq:
    """
    Token ids padded to a fixed length.

    Attributes:
        ids (Tuple[int, ...]): Token ids, length ``max_text_tokens``.
    """
    ids: Tuple[int, ...]

    @property
    def roles(self) -> Tuple[Role, ...]:
        return tuple(ID_TO_ROLE.get(i, Role.PAD) for i in self.ids)

    @property
    def length(self) -> int:
        """Number of real (non-pad) tokens."""
        return sum(1 for i in self.ids if i != PAD_ID)

    @property
    def is_null(self) -> bool:
        return all(i == NULL_ID for i in self.ids)

    def words(self) -> List[str]:
        return [ID_TO_WORD.get(i, f"<{i}>") for i in self.ids if i != PAD_ID]

    def text(self) -> str:
        return " ".join(self.words())

    def as_array(self) -> np.ndarray:
        return np.asarray(self.ids, dtype=np.int64)

    def is_real_token(self, index: int) -> bool:
        return 0 <= index < len(self.ids) and self.ids[index] not in (PAD_ID, NULL_ID)

    def replace(self, index: int, word: str) -> "PromptSeq":
        ids = list(self.ids)
        ids[index] = WORD_TO_ID[word]
        return PromptSeq(tuple(ids))

    def insert(self, index: int, word: str) -> Optional["PromptSeq"]:
        """Insert a word, dropping trailing padding; ``None`` if full."""
        real = [i for i in self.ids if i != PAD_ID]
        if len(real) >= len(self.ids):
            return None
        real.insert(index, WORD_TO_ID[word])
        return PromptSeq(tuple(real + [PAD_ID] * (len(self.ids) - len(real))))


def encode(words: Sequence[str], max_tokens: int) -> PromptSeq:
    """
    Encode words into a padded prompt.

    Raises:
        ConfigError: On an unknown word or a prompt longer than ``max_tokens``.
    """
    ids = []
    for word in words:
        word = word.strip().lower()
        if not word or word in FILLER:
            continue
        if word not in WORD_TO_ID or word.startswith("<"):
            raise ConfigError(f"unknown prompt word '{word}'")
        ids.append(WORD_TO_ID[word])
    if len(ids) > max_tokens:
        raise ConfigError(f"prompt has {len(ids)} tokens, limit is {max_tokens}")
    return PromptSeq(tuple(ids + [PAD_ID] * (max_tokens - len(ids))))


def parse_prompt(text: str, max_tokens: int) -> PromptSeq:
    return encode(text.split(), max_tokens)


def null_prompt(max_tokens: int) -> PromptSeq:
    return PromptSeq((NULL_ID,) * max_tokens)


def concept_token(src: PromptSeq, tgt: PromptSeq) -> int:
    """
    Index of the edited concept: the first differing shape token, else the
    first differing colour token.

    Raises:
        ConfigError: If the prompts do not differ.
    """
    diffs = [i for i, (a, b) in enumerate(zip(src.ids, tgt.ids)) if a != b]
    if not diffs:
        raise ConfigError("source and target prompts are identical")
    for i in diffs:
        if ID_TO_ROLE.get(tgt.ids[i]) is Role.SHAPE:
            return i
    return diffs[0]


def find_word(prompt: PromptSeq, word: str, reference: Optional[PromptSeq] = None) -> int:
    """
    Locate ``word`` in ``prompt``; with a reference prompt, prefer the
    occurrence where the two prompts differ.

    Raises:
        ConfigError: If the word does not occur.
    """
    target = WORD_TO_ID.get(word.lower())
    hits = [i for i, t in enumerate(prompt.ids) if t == target]
    if target is None or not hits:
        raise ConfigError(f"word '{word}' not in prompt '{prompt.text()}'")
    if reference is not None:
        for i in hits:
            if reference.ids[i] != prompt.ids[i]:
                return i
    return hits[0]


def instance_words(prompt: PromptSeq, index: int) -> Dict[Role, str]:
    """
    Words of the ``colour shape position`` triple that holds ``index``.

    Raises:
        ConfigError: If the triple lacks a shape or a colour.
    """
    start = (index // 3) * 3
    words = {ID_TO_ROLE[t]: ID_TO_WORD[t] for t in prompt.ids[start:start + 3]
             if ID_TO_ROLE.get(t) in (Role.SHAPE, Role.COLOR, Role.POSITION)}
    if Role.SHAPE not in words or Role.COLOR not in words:
        raise ConfigError(f"token {index} of '{prompt.text()}' is not in a 'colour shape position' triple")
    return words


def background_word(prompt: PromptSeq, default: str = "black") -> str:
    found = [ID_TO_WORD[t] for t in prompt.ids if ID_TO_ROLE.get(t) is Role.BACKGROUND]
    return found[-1] if found else default
