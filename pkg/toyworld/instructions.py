"""
Instruction sampling for the five world-knowledge categories and the six
compositional categories, constraint compilation, and the reasoning text
that spells out the hidden derivation.

Hidden constraints come only from the rule table: the text names a lexicon
phrase, a light source, a viewpoint, a transition or a maze, and the
constraints it implies are never written into the instruction itself.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from toyworld.constraints import (RELATION_WORDS, Constraint, ConstraintKind, ConstraintSet, Desc,
                                  attribute_equals, cell_words, count_equals, entity_present, path_valid,
                                  relation, state_after_steps)
from toyworld.entities import COLORS, SHAPES, GridImage, KnowledgeCategory
from toyworld.maze import generate_maze
from toyworld.rules import RuleTable, load_rule_table
from utils.config import WorldConfig
from utils.errors import RejectedInputError

Cell = Tuple[int, int]

COMPOSITIONAL_CATEGORIES: Tuple[str, ...] = ('single_object', 'two_object', 'counting', 'colors',
                                             'position', 'attribution')
PLURALS: Dict[str, str] = {s: s + 's' for s in SHAPES}
DIRECTIONAL = ('left_of', 'right_of', 'above', 'below')


@dataclass(frozen=True)
class InstructionSpec:
    """An instruction, its constraints, and which of them the text leaves unstated"""

    text: str
    category: str
    constraints: Tuple[Constraint, ...]
    hidden: Tuple[bool, ...]
    family: str = ''
    premises: Tuple[str, ...] = ()
    source: Optional[GridImage] = None
    target: Optional[GridImage] = None
    edit_cells: Tuple[Cell, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, 'constraints', tuple(self.constraints))
        object.__setattr__(self, 'hidden', tuple(bool(h) for h in self.hidden))
        object.__setattr__(self, 'premises', tuple(self.premises))
        object.__setattr__(self, 'edit_cells', tuple(tuple(c) for c in self.edit_cells))
        if len(self.hidden) != len(self.constraints):
            raise RejectedInputError('One hidden flag per constraint is required')

    @property
    def is_edit(self) -> bool:
        return self.source is not None

    def explicit_constraints(self) -> List[Constraint]:
        return [c for c, h in zip(self.constraints, self.hidden) if not h]

    def hidden_constraints(self) -> List[Constraint]:
        return [c for c, h in zip(self.constraints, self.hidden) if h]

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            'text': self.text,
            'category': self.category,
            'family': self.family,
            'constraints': [c.to_dict() for c in self.constraints],
            'hidden': list(self.hidden),
            'premises': list(self.premises)
        }
        if self.source is not None:
            data['source'] = self.source.to_codes()
        if self.target is not None:
            data['target'] = self.target.to_codes()
        if self.edit_cells:
            data['edit_cells'] = [list(c) for c in self.edit_cells]
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'InstructionSpec':
        return cls(
            text=data['text'],
            category=data['category'],
            constraints=tuple(Constraint.from_dict(c) for c in data['constraints']),
            hidden=tuple(data['hidden']),
            family=data.get('family', ''),
            premises=tuple(data.get('premises', ())),
            source=GridImage.from_codes(data['source']) if 'source' in data else None,
            target=GridImage.from_codes(data['target']) if 'target' in data else None,
            edit_cells=tuple(tuple(c) for c in data.get('edit_cells', ()))
        )


def compile_constraints(spec: Union[InstructionSpec, ConstraintSet],
                        rules: Optional[RuleTable] = None) -> ConstraintSet:
    """
    Union of explicit and hidden constraints with premises resolved

    Args:
        spec: Instruction spec, or an already compiled set
        rules: Rule table for temporal transitions

    Returns:
        Deterministic constraint set; recompiling it returns an equal set
    """
    rules = rules or load_rule_table()
    compiled = []
    for c in spec.constraints:
        if c.kind == ConstraintKind.STATE_AFTER_STEPS:
            transition = rules.transitions()[c.noun]
            c = count_equals(Desc(transition.shape, transition.color), transition.apply(c.initial, c.steps))
        compiled.append(c)
    return ConstraintSet(tuple(compiled))


def reasoning_text(spec: InstructionSpec, rules: Optional[RuleTable] = None) -> str:
    """Reasoning segment: category, rule premises, then every compiled constraint"""
    rules = rules or load_rule_table()
    lines = list(spec.premises)
    lines += [c.describe(rules) for c in spec.hidden_constraints() if c.kind == ConstraintKind.STATE_AFTER_STEPS]
    lines += [c.describe(rules) for c in compile_constraints(spec, rules)]
    head = spec.family if spec.is_edit else spec.category
    return f"{head} : " + ' ; '.join(lines)


def _pick(rng: np.random.Generator, items: Sequence[Any]) -> Any:
    return items[int(rng.integers(0, len(items)))]


def _cells(rng: np.random.Generator, world: WorldConfig, n: int) -> List[Cell]:
    flat = rng.choice(world.grid_h * world.grid_w, size=n, replace=False)
    return [(int(i) // world.grid_w, int(i) % world.grid_w) for i in flat]


def _pairs(rng: np.random.Generator, n: int, distinct_colors: bool = False) -> List[Tuple[str, str]]:
    """n distinct (shape, color) pairs"""
    combos = [(s, c) for s in SHAPES for c in COLORS]
    while True:
        picked = [combos[int(i)] for i in rng.choice(len(combos), size=n, replace=False)]
        if not distinct_colors or len({c for _, c in picked}) == n:
            return picked


def _cultural(rng, world, rules) -> InstructionSpec:
    lexicon = rules.lexicon()
    phrases = sorted(lexicon)
    first, second = (phrases[int(i)] for i in rng.choice(len(phrases), size=2, replace=False))
    cells = _cells(rng, world, 2)
    constraints, hidden, premises = [], [], []
    for phrase, (r, c) in zip((first, second), cells):
        shape, color = lexicon[phrase]
        constraints.append(entity_present(row=r, col=c))
        hidden.append(False)
        constraints += [attribute_equals(r, c, 'shape', shape), attribute_equals(r, c, 'color', color)]
        hidden += [True, True]
        premises.append(f"{phrase} is {color} {shape}")
    text = f"draw a {first} at {cell_words(*cells[0])} and a {second} at {cell_words(*cells[1])}"
    return InstructionSpec(text, KnowledgeCategory.CULTURAL.value, tuple(constraints), tuple(hidden),
                           family='lexicon', premises=tuple(premises))


def _natural_science(rng, world, rules) -> InstructionSpec:
    lights = rules.light_sources()
    light = _pick(rng, sorted(lights))
    light_shape, light_color = lights[light]
    shadow_color, offset = rules.shadow()
    choices = [(s, c) for s in SHAPES for c in COLORS if c != shadow_color and (s, c) != (light_shape, light_color)]
    shape, color = _pick(rng, choices)
    while True:
        dr, dc = _pick(rng, [(-1, 0), (0, 1), (1, 0), (0, -1)])
        gap = int(rng.integers(2, 5))
        lr, lc = int(rng.integers(0, world.grid_h)), int(rng.integers(0, world.grid_w))
        obj = (lr + dr * gap, lc + dc * gap)
        shadow = (obj[0] + dr * offset, obj[1] + dc * offset)
        if 0 <= shadow[0] < world.grid_h and 0 <= shadow[1] < world.grid_w:
            break
    text = f"a {light} at {cell_words(lr, lc)} shines on a {color} {shape} at {cell_words(*obj)}"
    constraints = (
        entity_present(row=lr, col=lc),
        entity_present(shape, color, *obj),
        attribute_equals(lr, lc, 'shape', light_shape),
        attribute_equals(lr, lc, 'color', light_color),
        entity_present(shape, shadow_color, *shadow)
    )
    premises = (f"{light} is {light_color} {light_shape}", f"light casts {shadow_color} shadow behind object")
    return InstructionSpec(text, KnowledgeCategory.NATURAL_SCIENCE.value, constraints,
                           (False, False, True, True, True), family='shadow', premises=premises)


def _spatial(rng, world, rules) -> InstructionSpec:
    if rng.random() < 0.5:
        views = rules.viewpoints()
        view = views[_pick(rng, sorted(views))]
        rel = _pick(rng, [r for r in DIRECTIONAL if view.mapping.get(r, r) != r])
        (s1, c1), (s2, c2) = _pairs(rng, 2)
        text = f"a {c1} {s1} {RELATION_WORDS[rel]} a {c2} {s2} {view.phrase}"
        mapped = view.mapping[rel]
        constraints = (entity_present(s1, c1), entity_present(s2, c2),
                       relation(mapped, Desc(s1, c1), Desc(s2, c2)))
        premises = (f"{view.phrase} turns {RELATION_WORDS[rel]} into {RELATION_WORDS[mapped]}",)
        return InstructionSpec(text, KnowledgeCategory.SPATIAL.value, constraints, (False, False, True),
                               family='viewpoint', premises=premises)
    rel = _pick(rng, DIRECTIONAL)
    a, b, c = (Desc(s, col) for s, col in _pairs(rng, 3))
    words = RELATION_WORDS[rel]
    text = f"a {a.noun()} {words} a {b.noun()} and a {b.noun()} {words} a {c.noun()}"
    constraints = (relation(rel, a, b), relation(rel, b, c), relation(rel, a, c))
    return InstructionSpec(text, KnowledgeCategory.SPATIAL.value, constraints, (False, False, True),
                           family='chain', premises=(f"{words} chains",))


def _temporal(rng, world, rules) -> InstructionSpec:
    transitions = rules.transitions()
    noun = _pick(rng, sorted(transitions))
    t = transitions[noun]
    while True:
        initial = int(rng.integers(1, t.cap + 1))
        steps = int(rng.integers(1, 5))
        if 1 <= t.apply(initial, steps) <= 6:
            break
    text = f"a {t.adjective} {noun} of {initial} segments after {steps} {t.unit}"
    constraints = [state_after_steps(noun, initial, steps)]
    verb = 'loses' if t.delta < 0 else 'gains'
    premises = [f"{noun} is {t.color} {t.shape} segments", f"{noun} {verb} {abs(t.delta)} each {t.unit}"]
    if t.companion:
        shape, color = t.companion
        constraints += [entity_present(shape, color), relation('above', Desc(shape, color), Desc(t.shape, t.color))]
        premises.append(f"{t.adjective} {noun} has {color} {shape} above")
    return InstructionSpec(text, KnowledgeCategory.TEMPORAL.value, tuple(constraints),
                           tuple(True for _ in constraints), family='transition', premises=tuple(premises))


def _logical(rng, world, rules) -> InstructionSpec:
    maze = generate_maze(rng, world.grid_h, world.grid_w, world.maze_size, world.maze_wall_density,
                         world.max_scene_attempts)
    walls = ' '.join(cell_words(*w) for w in maze.sorted_walls()) or 'none'
    text = f"solve the maze from {cell_words(*maze.start)} to {cell_words(*maze.goal)} walls {walls}"
    constraints = (entity_present(row=maze.start[0], col=maze.start[1]),
                   entity_present(row=maze.goal[0], col=maze.goal[1]),
                   path_valid(maze))
    premises = tuple(f"{role} is {color} {shape}" for role, (shape, color) in rules.maze_markers().items())
    return InstructionSpec(text, KnowledgeCategory.LOGICAL.value, constraints, (False, False, True),
                           family='maze', premises=premises)


_SAMPLERS = {
    KnowledgeCategory.CULTURAL: _cultural,
    KnowledgeCategory.NATURAL_SCIENCE: _natural_science,
    KnowledgeCategory.SPATIAL: _spatial,
    KnowledgeCategory.TEMPORAL: _temporal,
    KnowledgeCategory.LOGICAL: _logical
}


def sample_instruction(category: Union[str, KnowledgeCategory], rng: np.random.Generator,
                       world: Optional[WorldConfig] = None, rules: Optional[RuleTable] = None) -> InstructionSpec:
    """
    Sample a world-knowledge instruction

    Args:
        category: One of the five knowledge categories
        rng: Seeded random source
        world: Grid configuration
        rules: Rule table, the shipped one by default

    Returns:
        Spec with at least one hidden constraint
    """
    if not isinstance(category, KnowledgeCategory):
        category = KnowledgeCategory.parse(category)
    return _SAMPLERS[category](rng, world or WorldConfig(), rules or load_rule_table())


def sample_compositional(category: str, rng: np.random.Generator,
                         world: Optional[WorldConfig] = None) -> InstructionSpec:
    """Explicit-only prompt for one of the compositional categories"""
    if category not in COMPOSITIONAL_CATEGORIES:
        raise RejectedInputError(f"Unknown compositional category '{category}'")
    if category == 'single_object':
        shape = _pick(rng, SHAPES)
        text, constraints = f"a {shape}", (entity_present(shape),)
    elif category == 'two_object':
        first, second = (SHAPES[int(i)] for i in rng.choice(len(SHAPES), size=2, replace=False))
        text, constraints = f"a {first} and a {second}", (entity_present(first), entity_present(second))
    elif category == 'counting':
        shape, n = _pick(rng, SHAPES), int(rng.integers(2, 5))
        text, constraints = f"{n} {PLURALS[shape]}", (count_equals(Desc(shape), n),)
    elif category == 'colors':
        shape, color = _pick(rng, SHAPES), _pick(rng, COLORS)
        text, constraints = f"a {shape} that is {color}", (entity_present(shape, color),)
    elif category == 'position':
        rel = _pick(rng, DIRECTIONAL)
        a, b = (Desc(s, c) for s, c in _pairs(rng, 2))
        text, constraints = f"a {a.noun()} {RELATION_WORDS[rel]} a {b.noun()}", (relation(rel, a, b),)
    else:
        (s1, c1), (s2, c2) = _pairs(rng, 2, distinct_colors=True)
        text = f"a {c1} {s1} and a {c2} {s2}"
        constraints = (entity_present(s1, c1), entity_present(s2, c2))
    return InstructionSpec(text, category, constraints, tuple(False for _ in constraints), family=category)
