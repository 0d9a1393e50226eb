"""
Word-level vocabulary shared by instructions, reasoning and reflections.

The token list is built deterministically from the template words, the
grid coordinates and the rule table, so the same world always yields the
same ids.
"""

import json
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from toyworld.entities import COLORS, SHAPES
from toyworld.rules import RuleTable, load_rule_table
from utils.config import WorldConfig
from utils.errors import ConfigurationError

PAD, BOS, SEP, THINK, END, UNK = '<pad>', '<bos>', '<sep>', '<think>', '<end>', '<unk>'
SPECIAL_TOKENS = (PAD, BOS, SEP, THINK, END, UNK)

TEMPLATE_WORDS = (
    ':', ';', 'a', 'at', 'and', 'the', 'of', 'is', 'to', 'on', 'for', 'that', 'has', 'into', 'each',
    'draw', 'shines', 'segments', 'after', 'solve', 'maze', 'from', 'walls', 'none', 'let', 'pass',
    'move', 'paint', 'remove', 'add', 'change', 'nothing', 'something', 'thing', 'count', 'path',
    'left', 'right', 'above', 'below', 'next', 'light', 'casts', 'shadow', 'behind', 'object', 'turns',
    'chains', 'loses', 'gains', 'check', 'no', 'issues', 'done',
    'cultural', 'natural_science', 'spatial', 'temporal', 'logical',
    'single_object', 'two_object', 'counting', 'colors', 'position', 'attribution',
    'lexicon_add', 'aging', 'identity', 'recolor'
)


class Vocabulary:
    """Bidirectional word <-> id table"""

    def __init__(self, tokens: Iterable[str]):
        self.tokens: List[str] = list(tokens)
        self.index: Dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ConfigurationError('Vocabulary tokens must be unique')
        for special in SPECIAL_TOKENS:
            if special not in self.index:
                raise ConfigurationError(f"Vocabulary lacks special token {special}")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, self.index[UNK])

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def end_id(self) -> int:
        return self.index[END]

    def encode(self, text: str) -> List[int]:
        return [self.id(w) for w in text.split()]

    def decode(self, ids: Iterable[int]) -> str:
        return ' '.join(self.tokens[i] for i in ids)

    def unknown_words(self, text: str) -> List[str]:
        return [w for w in text.split() if w not in self.index]

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps({'tokens': self.tokens}, indent=1), encoding='utf-8')

    @classmethod
    def load(cls, path: Path) -> 'Vocabulary':
        return cls(json.loads(Path(path).read_text(encoding='utf-8'))['tokens'])


def build_vocabulary(world: Optional[WorldConfig] = None, rules: Optional[RuleTable] = None,
                     max_size: Optional[int] = None) -> Vocabulary:
    """
    Deterministic vocabulary for a world

    Args:
        world: Grid size decides the coordinate tokens
        rules: Rule table contributing lexicon, physics and transition words
        max_size: Upper bound (the model's vocab_size); exceeding it is a configuration error

    Returns:
        Vocabulary with special tokens first
    """
    world = world or WorldConfig()
    rules = rules or load_rule_table()
    words: List[str] = list(SPECIAL_TOKENS)

    def extend(items: Iterable[str]) -> None:
        for w in items:
            if w not in words:
                words.append(w)

    extend(TEMPLATE_WORDS)
    extend(SHAPES)
    extend(s + 's' for s in SHAPES)
    extend(COLORS)
    extend(str(n) for n in range(max(world.grid_h, world.grid_w) + 1))
    extend(f"r{r}" for r in range(world.grid_h))
    extend(f"c{c}" for c in range(world.grid_w))
    extend(sorted(rules.words()))
    if max_size is not None and len(words) > max_size:
        raise ConfigurationError(f"Vocabulary needs {len(words)} tokens but vocab_size is {max_size}")
    return Vocabulary(words)
