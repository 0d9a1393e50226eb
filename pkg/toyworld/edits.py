"""
Editing instructions: a source grid, an instruction, the goal constraints
and the intended target grid.

Plain edits (move, recolor, remove, add) state everything in the text.
Knowledge edits hide part of the goal: `lexicon_add` names an object by its
lexicon phrase and `aging` lets time pass on a transition object shown in
the source. `identity` asks for no change at all.
"""

from typing import List, Optional, Tuple

import numpy as np

from toyworld.constraints import (Desc, attribute_equals, cell_words, count_equals, entity_present, relation,
                                  state_after_steps)
from toyworld.entities import COLORS, SHAPES, Entity, Scene
from toyworld.instructions import InstructionSpec, compile_constraints
from toyworld.oracle import oracle_score
from toyworld.rules import RuleTable, load_rule_table
from toyworld.scenes import random_scene, render
from utils.config import WorldConfig
from utils.errors import RejectedInputError, UnsatisfiableConstraintsError

EDIT_FAMILIES: Tuple[str, ...] = ('move', 'recolor', 'remove', 'add', 'lexicon_add', 'aging', 'identity')


def _free_cell(rng: np.random.Generator, scene: Scene) -> Tuple[int, int]:
    free = scene.free_cells()
    return free[int(rng.integers(0, len(free)))]


def _pick_entity(rng: np.random.Generator, scene: Scene) -> Entity:
    return scene.entities[int(rng.integers(0, len(scene)))]


def _aging_source(rng: np.random.Generator, world: WorldConfig, rules: RuleTable) -> Tuple[Scene, str, int, int]:
    """Stacked segments of a transition object, plus its companion and distractors"""
    transitions = rules.transitions()
    noun = sorted(transitions)[int(rng.integers(0, len(transitions)))]
    t = transitions[noun]
    while True:
        initial = int(rng.integers(2, min(t.cap, world.grid_h - 2) + 1))
        steps = int(rng.integers(1, 4))
        result = t.apply(initial, steps)
        if 1 <= result <= world.grid_h - 2 and result != initial:
            break
    col = int(rng.integers(0, world.grid_w))
    bottom = int(rng.integers(initial + 1, world.grid_h)) if t.delta < 0 else world.grid_h - 1
    entities = [Entity(bottom - i, col, t.shape, t.color) for i in range(initial)]
    if t.companion:
        entities.append(Entity(bottom - initial, col, *t.companion))
    exclude = [(t.shape, t.color)] + ([t.companion] if t.companion else [])
    distractors = random_scene(rng, world, 0, 2, exclude=exclude)
    taken = {e.cell for e in entities} | {(r, col) for r in range(world.grid_h)}
    entities += [e for e in distractors if e.cell not in taken]
    return Scene(tuple(entities), world.grid_h, world.grid_w), noun, initial, steps


def _aged(scene: Scene, noun: str, initial: int, steps: int, rules: RuleTable) -> Scene:
    t = rules.transitions()[noun]
    segments = sorted((e for e in scene if (e.shape, e.color) == (t.shape, t.color)), key=lambda e: e.row)
    result = t.apply(initial, steps)
    aged = scene
    if result < initial:
        # burns or melts from the top
        for e in segments[:initial - result]:
            aged = aged.without(*e.cell)
        if t.companion:
            flame = next(e for e in scene if (e.shape, e.color) == t.companion)
            top = segments[initial - result]
            aged = aged.without(*flame.cell).with_entity(flame.moved(top.row - 1, top.col))
    else:
        # grows upward from the top segment
        top = segments[0]
        for i in range(1, result - initial + 1):
            aged = aged.with_entity(Entity(top.row - i, top.col, t.shape, t.color))
    return aged


def sample_edit(rng: np.random.Generator, world: Optional[WorldConfig] = None,
                rules: Optional[RuleTable] = None, family: Optional[str] = None) -> InstructionSpec:
    """
    Sample an editing instruction with its source and target grids

    Args:
        rng: Seeded random source
        world: Grid configuration
        rules: Rule table
        family: Edit family, drawn uniformly when None

    Returns:
        Spec with `source`, `target` and `edit_cells` set
    """
    world = world or WorldConfig()
    rules = rules or load_rule_table()
    if family is None:
        family = EDIT_FAMILIES[int(rng.integers(0, len(EDIT_FAMILIES)))]
    if family not in EDIT_FAMILIES:
        raise RejectedInputError(f"Unknown edit family '{family}'")
    premises: List[str] = []
    hidden: List[bool] = []
    if family == 'aging':
        source, noun, initial, steps = _aging_source(rng, world, rules)
        t = rules.transitions()[noun]
        text = f"let {steps} {t.unit} pass for the {noun}"
        constraints = [state_after_steps(noun, initial, steps)]
        if t.companion:
            shape, color = t.companion
            constraints += [entity_present(shape, color), relation('above', Desc(shape, color), Desc(t.shape, t.color))]
        hidden = [True] * len(constraints)
        verb = 'loses' if t.delta < 0 else 'gains'
        premises = [f"{noun} is {t.color} {t.shape} segments", f"{noun} {verb} {abs(t.delta)} each {t.unit}"]
        target = _aged(source, noun, initial, steps, rules)
    else:
        source = random_scene(rng, world)
        if family == 'move':
            e = _pick_entity(rng, source)
            dst = _free_cell(rng, source)
            text = f"move the {e.color} {e.shape} at {cell_words(*e.cell)} to {cell_words(*dst)}"
            constraints = [entity_present(e.shape, e.color, *dst), count_equals(Desc(row=e.row, col=e.col), 0)]
            target = source.without(*e.cell).with_entity(e.moved(*dst))
        elif family == 'recolor':
            e = _pick_entity(rng, source)
            new = [c for c in COLORS if c != e.color][int(rng.integers(0, len(COLORS) - 1))]
            text = f"paint the {e.color} {e.shape} at {cell_words(*e.cell)} {new}"
            constraints = [attribute_equals(e.row, e.col, 'color', new), attribute_equals(e.row, e.col, 'shape', e.shape)]
            target = source.with_entity(e.with_attrs(color=new))
        elif family == 'remove':
            e = _pick_entity(rng, source)
            text = f"remove the {e.color} {e.shape} at {cell_words(*e.cell)}"
            constraints = [count_equals(Desc(row=e.row, col=e.col), 0)]
            target = source.without(*e.cell)
        elif family == 'add':
            r, c = _free_cell(rng, source)
            shape = SHAPES[int(rng.integers(0, len(SHAPES)))]
            color = COLORS[int(rng.integers(0, len(COLORS)))]
            text = f"add a {color} {shape} at {cell_words(r, c)}"
            constraints = [entity_present(shape, color, r, c)]
            target = source.with_entity(Entity(r, c, shape, color))
        elif family == 'lexicon_add':
            lexicon = rules.lexicon()
            phrase = sorted(lexicon)[int(rng.integers(0, len(lexicon)))]
            shape, color = lexicon[phrase]
            r, c = _free_cell(rng, source)
            text = f"add a {phrase} at {cell_words(r, c)}"
            constraints = [entity_present(row=r, col=c), attribute_equals(r, c, 'shape', shape),
                           attribute_equals(r, c, 'color', color)]
            hidden = [False, True, True]
            premises = [f"{phrase} is {color} {shape}"]
            target = source.with_entity(Entity(r, c, shape, color))
        else:
            text = 'change nothing'
            constraints = [entity_present(e.shape, e.color, e.row, e.col) for e in source]
            target = source
        hidden = hidden or [False] * len(constraints)
    source_img, target_img = render(source), render(target)
    changed = np.argwhere((source_img.shapes != target_img.shapes) | (source_img.colors != target_img.colors))
    spec = InstructionSpec(text, 'edit', tuple(constraints), tuple(hidden), family=family,
                           premises=tuple(premises), source=source_img, target=target_img,
                           edit_cells=tuple((int(r), int(c)) for r, c in changed))
    if oracle_score(target_img, compile_constraints(spec, rules), rules) != 1.0:
        raise UnsatisfiableConstraintsError(f"Edit target misses its own goal: {text}")
    return spec
