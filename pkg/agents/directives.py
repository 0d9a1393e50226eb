"""
Edit directives: the verifier's structured, actionable feedback.

A directive names one of five quality dimensions, the cells it acts on and
one action. Payloads are validated against the toy-world schema on
construction, so a directive that parses can always be applied to a scene
that still holds its targets.
"""

from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from toyworld.constraints import cell_words
from toyworld.entities import COLORS, SHAPES, Entity, Scene
from utils.errors import DirectiveApplicationError

Cell = Tuple[int, int]


class Dimension(str, Enum):
    OBJECT_PRESENCE = 'object_presence'
    ATTRIBUTE_ACCURACY = 'attribute_accuracy'
    STYLE_CONSISTENCY = 'style_consistency'
    REALISM = 'realism'
    AESTHETIC_QUALITY = 'aesthetic_quality'


class Action(str, Enum):
    ADD = 'add'
    REMOVE = 'remove'
    CHANGE_ATTRIBUTE = 'change_attribute'
    MOVE = 'move'


# Which dimension a violated check maps to
DIMENSION_TABLE: Dict[str, Dimension] = {
    'entity_present': Dimension.OBJECT_PRESENCE,
    'count_equals': Dimension.OBJECT_PRESENCE,
    'attribute_equals': Dimension.ATTRIBUTE_ACCURACY,
    'relation': Dimension.ATTRIBUTE_ACCURACY,
    'path_valid': Dimension.OBJECT_PRESENCE,
    'palette_consistency': Dimension.STYLE_CONSISTENCY,
    'no_overlap': Dimension.REALISM,
    'non_empty': Dimension.AESTHETIC_QUALITY
}


class EditDirective(BaseModel):
    """
    One edit

    Payloads by action:
        add: {'entities': [[shape, color], ...]} one per target (targets empty)
        change_attribute: {'entities': [[shape, color], ...]} one per target (targets occupied)
        move: {'to': [[row, col], ...]} one per target
        remove: {}

    A change_attribute payload with 'redraw': true sets each target cell to its
    entity, or clears it for a null entry, whatever the cell held before.
    """

    model_config = ConfigDict(frozen=True)

    dimension: Dimension
    target: Tuple[Cell, ...]
    action: Action
    payload: Dict[str, Any] = Field(default_factory=dict)
    rationale: str = ''
    addresses: Optional[str] = None

    @model_validator(mode='after')
    def _check_payload(self):
        if not self.target:
            raise ValueError('A directive needs at least one target cell')
        if len(set(self.target)) != len(self.target):
            raise ValueError('Directive targets must be distinct')
        if self.redraw and self.action != Action.CHANGE_ATTRIBUTE:
            raise ValueError('Only change_attribute can redraw')
        if self.action in (Action.ADD, Action.CHANGE_ATTRIBUTE):
            entities = self.payload.get('entities')
            if not entities or len(entities) != len(self.target):
                raise ValueError(f"{self.action.value} needs one [shape, color] per target")
            for entry in entities:
                if entry is None and self.redraw:
                    continue
                if entry is None or len(entry) != 2:
                    raise ValueError(f"Malformed entity {entry}")
                shape, color = entry
                if shape not in SHAPES or color not in COLORS:
                    raise ValueError(f"Unknown entity [{shape}, {color}]")
        elif self.action == Action.MOVE:
            dests = self.payload.get('to')
            if not dests or len(dests) != len(self.target):
                raise ValueError('move needs one destination per target')
        return self

    @property
    def redraw(self) -> bool:
        return bool(self.payload.get('redraw', False))

    def destinations(self) -> List[Cell]:
        return [tuple(d) for d in self.payload.get('to', [])]

    def entities(self) -> List[Optional[Tuple[str, str]]]:
        return [tuple(e) if e is not None else None for e in self.payload.get('entities', [])]

    def describe(self) -> str:
        """Reflection text for this directive"""
        if self.redraw:
            parts = [f"change {cell_words(*cell)} to {e[1]} {e[0]}" if e else f"remove {cell_words(*cell)}"
                     for cell, e in zip(self.target, self.entities())]
        elif self.action == Action.ADD:
            parts = [f"add {c} {s} at {cell_words(*cell)}" for cell, (s, c) in zip(self.target, self.entities())]
        elif self.action == Action.CHANGE_ATTRIBUTE:
            parts = [f"change {cell_words(*cell)} to {c} {s}" for cell, (s, c) in zip(self.target, self.entities())]
        elif self.action == Action.MOVE:
            parts = [f"move {cell_words(*cell)} to {cell_words(*dst)}"
                     for cell, dst in zip(self.target, self.destinations())]
        else:
            parts = [f"remove {cell_words(*cell)}" for cell in self.target]
        return ' ; '.join(parts)


def apply_directive(scene: Scene, directive: EditDirective) -> Scene:
    """
    Apply one directive to a scene

    Raises:
        DirectiveApplicationError: a target or destination does not fit the action
    """
    grid = (scene.grid_h, scene.grid_w)

    def check_bounds(cell: Cell) -> None:
        if not (0 <= cell[0] < grid[0] and 0 <= cell[1] < grid[1]):
            raise DirectiveApplicationError(f"Cell {cell} is outside the grid")

    if directive.redraw:
        for cell, entity in zip(directive.target, directive.entities()):
            check_bounds(cell)
            scene = scene.without(*cell) if entity is None else scene.with_entity(Entity(cell[0], cell[1], *entity))
        return scene
    for cell in directive.target:
        check_bounds(cell)
        occupied = scene.at(*cell) is not None
        if directive.action == Action.ADD and occupied:
            raise DirectiveApplicationError(f"Cannot add at occupied cell {cell}")
        if directive.action != Action.ADD and not occupied:
            raise DirectiveApplicationError(f"No entity at {cell} to {directive.action.value}")
    if directive.action == Action.REMOVE:
        for cell in directive.target:
            scene = scene.without(*cell)
        return scene
    if directive.action in (Action.ADD, Action.CHANGE_ATTRIBUTE):
        for cell, (shape, color) in zip(directive.target, directive.entities()):
            scene = scene.with_entity(Entity(cell[0], cell[1], shape, color))
        return scene
    movers = [scene.at(*cell) for cell in directive.target]
    for cell in directive.target:
        scene = scene.without(*cell)
    for mover, dst in zip(movers, directive.destinations()):
        check_bounds(dst)
        if scene.at(*dst) is not None:
            raise DirectiveApplicationError(f"Move destination {dst} is occupied")
        scene = scene.with_entity(mover.moved(*dst))
    return scene


def directive_holds(scene: Scene, directive: EditDirective, before: Optional[Scene] = None) -> bool:
    """Whether a scene shows the directive's effect"""
    if directive.action == Action.REMOVE:
        return all(scene.at(*cell) is None for cell in directive.target)
    if directive.action in (Action.ADD, Action.CHANGE_ATTRIBUTE):
        for cell, wanted in zip(directive.target, directive.entities()):
            e = scene.at(*cell)
            if (None if e is None else (e.shape, e.color)) != wanted:
                return False
        return True
    for cell, dst in zip(directive.target, directive.destinations()):
        e = scene.at(*dst)
        if e is None:
            return False
        if before is not None:
            original = before.at(*cell)
            if original is None or (original.shape, original.color) != (e.shape, e.color):
                return False
    return True


def reflection_text(directives: List[EditDirective]) -> str:
    """Reflection segment T2 for a directive list"""
    if not directives:
        return 'check : no issues'
    return 'check : ' + ' ; '.join(d.describe() for d in directives) + ' ; done'
