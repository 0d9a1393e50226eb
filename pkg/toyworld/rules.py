"""
Versioned rule tables: the single source of world knowledge.

The cultural lexicon, light/shadow physics, viewpoint transforms, temporal
transitions and maze drawing conventions are read from a key-value text
file. Instruction sampling, constraint compilation and every oracle consult
the same parsed table.
"""

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, Optional, Tuple

from toyworld.entities import COLOR_CODE, SHAPE_CODE
from utils.errors import ConfigurationError

DEFAULT_RULES_PATH = Path(__file__).parent / 'rule_tables' / 'world_rules.txt'

Rule = Dict[str, str]

# Only free-text fields spell spaces as '_'; everything else is an identifier
TEXT_FIELDS = ('phrase', 'unit', 'adjective')
VIEW_RELATIONS = ('left_of', 'right_of', 'above', 'below')


@dataclass(frozen=True)
class Transition:
    noun: str
    shape: str
    color: str
    delta: int
    floor: int
    cap: int
    unit: str
    adjective: str
    companion: Optional[Tuple[str, str]] = None

    def apply(self, initial: int, steps: int) -> int:
        """Segment count after `steps` applications of the transition"""
        value = initial
        for _ in range(steps):
            value = max(self.floor, min(self.cap, value + self.delta))
        return value


@dataclass(frozen=True)
class Viewpoint:
    name: str
    mapping: Dict[str, str]
    phrase: str


class RuleTable:
    """Parsed rule table with typed accessors"""

    def __init__(self, version: str, sections: Dict[str, Dict[str, Rule]], source: str = '<memory>'):
        self.version = version
        self.sections = sections
        self.source = source

    def section(self, name: str) -> Dict[str, Rule]:
        if name not in self.sections:
            raise ConfigurationError(f"Rule table {self.source} has no [{name}] section")
        return self.sections[name]

    def lexicon(self) -> Dict[str, Tuple[str, str]]:
        return {phrase: (rule['shape'], rule['color']) for phrase, rule in self.section('lexicon').items()}

    def light_sources(self) -> Dict[str, Tuple[str, str]]:
        return {name: (rule['shape'], rule['color']) for name, rule in self.section('light_sources').items()}

    def shadow(self) -> Tuple[str, int]:
        rule = self.section('shadow')['cast']
        return rule['color'], int(rule['offset'])

    def viewpoints(self) -> Dict[str, Viewpoint]:
        views = {}
        for name, rule in self.section('viewpoints').items():
            mapping = {k: v for k, v in rule.items() if k != 'phrase'}
            views[name] = Viewpoint(name, mapping, rule['phrase'])
        return views

    def transitions(self) -> Dict[str, Transition]:
        result = {}
        for noun, rule in self.section('transitions').items():
            companion = None
            if 'companion_shape' in rule:
                companion = (rule['companion_shape'], rule['companion_color'])
            result[noun] = Transition(noun, rule['shape'], rule['color'], int(rule['delta']), int(rule['floor']),
                                      int(rule['cap']), rule['unit'], rule['adjective'], companion)
        return result

    def maze_markers(self) -> Dict[str, Tuple[str, str]]:
        return {role: (rule['shape'], rule['color']) for role, rule in self.section('maze').items()}

    def words(self) -> set:
        """Every word the table can contribute to instruction or reasoning text"""
        words = set()
        for name, rules in self.sections.items():
            for key, rule in rules.items():
                words.update(key.split())
                for field_name, value in rule.items():
                    if field_name in TEXT_FIELDS:
                        words.update(value.split())
        return words


def _check_viewpoint(rule: Rule, source: str, lineno: int) -> None:
    if 'phrase' not in rule:
        raise ConfigurationError(f"{source}:{lineno}: viewpoint needs a phrase")
    for relation, mapped in rule.items():
        if relation == 'phrase':
            continue
        for name in (relation, mapped):
            if name not in VIEW_RELATIONS:
                raise ConfigurationError(f"{source}:{lineno}: unknown relation '{name}'")


def parse_rule_table(text: str, source: str = '<memory>') -> RuleTable:
    """
    Parse the rule-table grammar

    Args:
        text: File contents
        source: Name used in error messages

    Returns:
        Parsed table
    """
    version: Optional[str] = None
    sections: Dict[str, Dict[str, Rule]] = {}
    current: Optional[str] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        if line.startswith('[') and line.endswith(']'):
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if '=' not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split('=', 1))
        if current is None:
            if key != 'version':
                raise ConfigurationError(f"{source}:{lineno}: only 'version' may precede the first section")
            version = value
            continue
        rule: Rule = {}
        for token in value.split():
            if ':' not in token:
                raise ConfigurationError(f"{source}:{lineno}: malformed field '{token}'")
            field_name, field_value = token.split(':', 1)
            rule[field_name] = field_value.replace('_', ' ') if field_name in TEXT_FIELDS else field_value
        if current == 'viewpoints':
            _check_viewpoint(rule, source, lineno)
        for field_name in ('shape', 'companion_shape'):
            if field_name in rule and rule[field_name] not in SHAPE_CODE:
                raise ConfigurationError(f"{source}:{lineno}: unknown shape '{rule[field_name]}'")
        for field_name in ('color', 'companion_color'):
            if field_name in rule and rule[field_name] not in COLOR_CODE:
                raise ConfigurationError(f"{source}:{lineno}: unknown color '{rule[field_name]}'")
        sections[current][key] = rule
    if version is None:
        raise ConfigurationError(f"{source}: missing version line")
    return RuleTable(version, sections, source)


@lru_cache(maxsize=4)
def load_rule_table(path: Optional[str] = None) -> RuleTable:
    """Load (and cache) a rule table, the shipped one by default"""
    file_path = Path(path) if path else DEFAULT_RULES_PATH
    try:
        text = file_path.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigurationError(f"Cannot read rule table {file_path}: {e}") from e
    return parse_rule_table(text, str(file_path))
