"""
Machine-checkable constraints: the semantics of an instruction.

Every constraint is decided against a Scene in at most O(entities^2) work.
`describe` gives the one-line text form used in reasoning segments and
edit directives.
"""

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterator, List, Optional, Sequence, Set, Tuple

from toyworld.entities import COLORS, SHAPES, Entity, Scene
from toyworld.maze import Maze, bfs_distances, shortest_path
from toyworld.rules import RuleTable, load_rule_table
from utils.errors import RejectedInputError

Cell = Tuple[int, int]

RELATIONS: Tuple[str, ...] = ('left_of', 'right_of', 'above', 'below', 'adjacent')
RELATION_WORDS: Dict[str, str] = {
    'left_of': 'left of',
    'right_of': 'right of',
    'above': 'above',
    'below': 'below',
    'adjacent': 'next to'
}


class ConstraintKind(str, Enum):
    ENTITY_PRESENT = 'entity_present'
    ATTRIBUTE_EQUALS = 'attribute_equals'
    RELATION = 'relation'
    COUNT_EQUALS = 'count_equals'
    PATH_VALID = 'path_valid'
    STATE_AFTER_STEPS = 'state_after_steps'


def cell_words(row: int, col: int) -> str:
    return f"r{row} c{col}"


@dataclass(frozen=True)
class Desc:
    """Partial entity description; None fields match anything"""

    shape: Optional[str] = None
    color: Optional[str] = None
    row: Optional[int] = None
    col: Optional[int] = None

    def __post_init__(self):
        if self.shape is not None and self.shape not in SHAPES:
            raise RejectedInputError(f"Unknown shape '{self.shape}'")
        if self.color is not None and self.color not in COLORS:
            raise RejectedInputError(f"Unknown color '{self.color}'")
        if (self.row is None) != (self.col is None):
            raise RejectedInputError('A description pins both row and col or neither')

    @property
    def cell(self) -> Optional[Cell]:
        return None if self.row is None else (self.row, self.col)

    def matches(self, entity: Entity) -> bool:
        return ((self.shape is None or entity.shape == self.shape)
                and (self.color is None or entity.color == self.color)
                and (self.row is None or (entity.row == self.row and entity.col == self.col)))

    def noun(self) -> str:
        words = [w for w in (self.color, self.shape) if w]
        if not words:
            return 'something'
        if self.shape is None:
            words.append('thing')
        return ' '.join(words)

    def describe(self) -> str:
        if self.row is None:
            return self.noun()
        return f"{self.noun()} at {cell_words(self.row, self.col)}"

    def to_dict(self) -> Dict[str, Any]:
        return {k: v for k, v in (('shape', self.shape), ('color', self.color),
                                  ('row', self.row), ('col', self.col)) if v is not None}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Desc':
        return cls(data.get('shape'), data.get('color'), data.get('row'), data.get('col'))


@dataclass(frozen=True)
class Constraint:
    """One constraint; the fields used depend on `kind`"""

    kind: ConstraintKind
    desc: Optional[Desc] = None
    cell: Optional[Cell] = None
    attribute: Optional[str] = None
    value: Optional[str] = None
    relation: Optional[str] = None
    a: Optional[Desc] = None
    b: Optional[Desc] = None
    count: Optional[int] = None
    maze: Optional[Maze] = None
    noun: Optional[str] = None
    initial: Optional[int] = None
    steps: Optional[int] = None

    def colors(self, rules: Optional[RuleTable] = None) -> Set[str]:
        """Colors this constraint names or implies"""
        found = set()
        for d in (self.desc, self.a, self.b):
            if d is not None and d.color:
                found.add(d.color)
        if self.kind == ConstraintKind.ATTRIBUTE_EQUALS and self.attribute == 'color':
            found.add(self.value)
        if self.kind == ConstraintKind.PATH_VALID:
            found.update(color for _, color in (rules or load_rule_table()).maze_markers().values())
        if self.kind == ConstraintKind.STATE_AFTER_STEPS:
            found.add((rules or load_rule_table()).transitions()[self.noun].color)
        return found

    def cells(self) -> Set[Cell]:
        """Cells this constraint pins down"""
        found = set()
        for d in (self.desc, self.a, self.b):
            if d is not None and d.cell is not None:
                found.add(d.cell)
        if self.cell is not None:
            found.add(self.cell)
        if self.maze is not None:
            found.update([self.maze.start, self.maze.goal])
            found.update(self.maze.walls)
            found.update((shortest_path(self.maze) or [])[1:-1])
        return found

    def describe(self, rules: Optional[RuleTable] = None) -> str:
        if self.kind == ConstraintKind.ENTITY_PRESENT:
            return self.desc.describe()
        if self.kind == ConstraintKind.ATTRIBUTE_EQUALS:
            return f"{cell_words(*self.cell)} is {self.value}"
        if self.kind == ConstraintKind.RELATION:
            return f"{self.a.describe()} {RELATION_WORDS[self.relation]} {self.b.describe()}"
        if self.kind == ConstraintKind.COUNT_EQUALS:
            return f"count {self.desc.describe()} is {self.count}"
        if self.kind == ConstraintKind.PATH_VALID:
            route = shortest_path(self.maze) or []
            return 'path ' + ' '.join(cell_words(r, c) for r, c in route)
        unit = (rules or load_rule_table()).transitions()[self.noun].unit
        return f"{self.noun} {self.initial} segments after {self.steps} {unit}"

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {'kind': self.kind.value}
        for name in ('desc', 'a', 'b'):
            value = getattr(self, name)
            if value is not None:
                data[name] = value.to_dict()
        if self.cell is not None:
            data['cell'] = list(self.cell)
        if self.maze is not None:
            data['maze'] = self.maze.to_dict()
        for name in ('attribute', 'value', 'relation', 'count', 'noun', 'initial', 'steps'):
            value = getattr(self, name)
            if value is not None:
                data[name] = value
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Constraint':
        try:
            kind = ConstraintKind(data['kind'])
        except (KeyError, ValueError):
            raise RejectedInputError(f"Unknown constraint kind in {data}") from None
        descs = {name: Desc.from_dict(data[name]) for name in ('desc', 'a', 'b') if name in data}
        return cls(kind=kind, cell=tuple(data['cell']) if 'cell' in data else None,
                   maze=Maze.from_dict(data['maze']) if 'maze' in data else None,
                   **descs, **{name: data[name] for name in ('attribute', 'value', 'relation', 'count',
                                                              'noun', 'initial', 'steps') if name in data})


def entity_present(shape: Optional[str] = None, color: Optional[str] = None,
                   row: Optional[int] = None, col: Optional[int] = None) -> Constraint:
    return Constraint(ConstraintKind.ENTITY_PRESENT, desc=Desc(shape, color, row, col))


def attribute_equals(row: int, col: int, attribute: str, value: str) -> Constraint:
    if attribute not in ('shape', 'color'):
        raise RejectedInputError(f"Unknown attribute '{attribute}'")
    if value not in (SHAPES if attribute == 'shape' else COLORS):
        raise RejectedInputError(f"'{value}' is not a valid {attribute}")
    return Constraint(ConstraintKind.ATTRIBUTE_EQUALS, cell=(row, col), attribute=attribute, value=value)


def relation(rel: str, a: Desc, b: Desc) -> Constraint:
    if rel not in RELATIONS:
        raise RejectedInputError(f"Unknown relation '{rel}'")
    return Constraint(ConstraintKind.RELATION, relation=rel, a=a, b=b)


def count_equals(desc: Desc, n: int) -> Constraint:
    if n < 0:
        raise RejectedInputError('Counts are non-negative')
    return Constraint(ConstraintKind.COUNT_EQUALS, desc=desc, count=n)


def path_valid(maze: Maze) -> Constraint:
    return Constraint(ConstraintKind.PATH_VALID, maze=maze)


def state_after_steps(noun: str, initial: int, steps: int) -> Constraint:
    return Constraint(ConstraintKind.STATE_AFTER_STEPS, noun=noun, initial=initial, steps=steps)


def relation_holds(rel: str, a: Entity, b: Entity) -> bool:
    if rel == 'left_of':
        return a.col < b.col
    if rel == 'right_of':
        return a.col > b.col
    if rel == 'above':
        return a.row < b.row
    if rel == 'below':
        return a.row > b.row
    return abs(a.row - b.row) + abs(a.col - b.col) == 1


def _path_holds(maze: Maze, scene: Scene, rules: RuleTable) -> bool:
    markers = rules.maze_markers()

    def holds(cell: Cell, role: str) -> bool:
        entity = scene.at(*cell)
        return entity is not None and (entity.shape, entity.color) == markers[role]

    if not all(holds(w, 'wall') for w in maze.walls):
        return False
    if not (holds(maze.start, 'start') and holds(maze.goal, 'goal')):
        return False
    steps = {e.cell for e in scene if (e.shape, e.color) == markers['step']}
    if any(not maze.inside(c) or c in maze.walls for c in steps):
        return False
    target = bfs_distances(maze, maze.start).get(maze.goal)
    if target is None:
        return False
    # Walk only over marked cells; the marks must form a shortest route
    allowed = steps | {maze.goal}
    dist = {maze.start: 0}
    queue = deque([maze.start])
    while queue:
        cell = queue.popleft()
        for nxt in maze.open_neighbours(cell):
            if nxt in allowed and nxt not in dist:
                dist[nxt] = dist[cell] + 1
                queue.append(nxt)
    return dist.get(maze.goal) == target and len(steps) == target - 1


def check_constraint(constraint: Constraint, scene: Scene, rules: Optional[RuleTable] = None) -> bool:
    """
    Decide one constraint against a scene

    Args:
        constraint: Constraint to check
        scene: Symbolic scene (decode a GridImage with to_scene first)
        rules: Rule table for maze markers and transitions

    Returns:
        True when the scene satisfies the constraint
    """
    kind = constraint.kind
    if kind == ConstraintKind.ENTITY_PRESENT:
        return any(constraint.desc.matches(e) for e in scene)
    if kind == ConstraintKind.ATTRIBUTE_EQUALS:
        entity = scene.at(*constraint.cell)
        return entity is not None and getattr(entity, constraint.attribute) == constraint.value
    if kind == ConstraintKind.RELATION:
        group_a = [e for e in scene if constraint.a.matches(e)]
        group_b = [e for e in scene if constraint.b.matches(e)]
        if not group_a or not group_b:
            return False
        return all(relation_holds(constraint.relation, x, y) for x in group_a for y in group_b if x != y)
    if kind == ConstraintKind.COUNT_EQUALS:
        return sum(1 for e in scene if constraint.desc.matches(e)) == constraint.count
    rules = rules or load_rule_table()
    if kind == ConstraintKind.PATH_VALID:
        return _path_holds(constraint.maze, scene, rules)
    transition = rules.transitions()[constraint.noun]
    expected = transition.apply(constraint.initial, constraint.steps)
    desc = Desc(transition.shape, transition.color)
    return sum(1 for e in scene if desc.matches(e)) == expected


@dataclass(frozen=True)
class ConstraintSet:
    """Ordered, duplicate-free collection of constraints"""

    constraints: Tuple[Constraint, ...] = field(default_factory=tuple)

    def __post_init__(self):
        unique: List[Constraint] = []
        for c in self.constraints:
            if c not in unique:
                unique.append(c)
        object.__setattr__(self, 'constraints', tuple(unique))

    def __iter__(self) -> Iterator[Constraint]:
        return iter(self.constraints)

    def __len__(self) -> int:
        return len(self.constraints)

    def __getitem__(self, index: int) -> Constraint:
        return self.constraints[index]

    def palette(self, rules: Optional[RuleTable] = None) -> Set[str]:
        colors: Set[str] = set()
        for c in self.constraints:
            colors |= c.colors(rules)
        return colors

    def satisfied(self, scene: Scene, rules: Optional[RuleTable] = None) -> List[bool]:
        return [check_constraint(c, scene, rules) for c in self.constraints]

    def to_list(self) -> List[Dict[str, Any]]:
        return [c.to_dict() for c in self.constraints]

    @classmethod
    def from_list(cls, items: Sequence[Dict[str, Any]]) -> 'ConstraintSet':
        return cls(tuple(Constraint.from_dict(item) for item in items))
