"""
Generator Agent for the interleaved refinement pipeline

The Generator Agent is responsible for:
- Producing a draft image with its textual reasoning for an instruction
- Scripted drafting: ground-truth reasoning plus a ground-truth image with
  a controlled number of injected violations
- Model drafting: a reasoning rollout of a trained checkpoint
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

from toyworld.constraints import ConstraintSet
from toyworld.entities import COLORS, SHAPES, Entity, GridImage, Scene
from toyworld.instructions import InstructionSpec, compile_constraints, reasoning_text
from toyworld.oracle import proxy_results
from toyworld.rules import RuleTable, load_rule_table
from toyworld.scenes import ground_truth_for, render
from utils.config import WorldConfig

ROLE_PROFILE = {
    'role': 'Initial Generator',
    'goal': 'Produce a draft image and the reasoning behind it for a knowledge-intensive instruction',
    'backstory': 'The base model of the pipeline. Its drafts are what the other roles inspect and improve.'
}


@dataclass
class Draft:
    reasoning: str
    image: GridImage
    broken: List[int] = field(default_factory=list)


def _corruption_candidates(scene: Scene, palette: List[str], rng: np.random.Generator):
    """Single-step edits in random order: remove, recolor, reshape, move, add"""
    entities = list(scene.entities)
    order = rng.permutation(len(entities)) if entities else []
    free = scene.free_cells()
    for i in order:
        e = entities[int(i)]
        yield scene.without(*e.cell)
        for color in rng.permutation(palette):
            if color != e.color:
                yield scene.with_entity(e.with_attrs(color=str(color)))
        for shape in rng.permutation(SHAPES):
            if shape != e.shape:
                yield scene.with_entity(e.with_attrs(shape=str(shape)))
        for j in rng.choice(len(free), size=min(5, len(free)), replace=False) if free else []:
            yield scene.without(*e.cell).with_entity(e.moved(*free[int(j)]))
    for j in rng.choice(len(free), size=min(10, len(free)), replace=False) if free else []:
        shape = SHAPES[int(rng.integers(0, len(SHAPES)))]
        color = palette[int(rng.integers(0, len(palette)))]
        yield scene.with_entity(Entity(free[int(j)][0], free[int(j)][1], shape, color))


def _corruption_step(scene: Scene, flags: List[bool], cs: ConstraintSet, palette: List[str],
                     rng: np.random.Generator, rules: RuleTable, exact: bool) -> Optional[Tuple[Scene, List[int]]]:
    """First candidate that breaks one new constraint (or, unless exact, any new ones) and repairs none"""
    for candidate in _corruption_candidates(scene, palette, rng):
        new_flags = cs.satisfied(candidate, rules)
        newly = [i for i, (old, new) in enumerate(zip(flags, new_flags)) if old and not new]
        repaired = [i for i, (old, new) in enumerate(zip(flags, new_flags)) if new and not old]
        if not newly or repaired or (exact and len(newly) != 1):
            continue
        if all(proxy_results(candidate, cs, rules).values()):
            return candidate, newly
    return None


def corrupt(scene: Scene, cs: ConstraintSet, level: int, rng: np.random.Generator,
            rules: Optional[RuleTable] = None) -> Tuple[Scene, List[int]]:
    """
    Inject violations, each breaking exactly one new constraint

    When no single-constraint edit exists, the first violation may break
    several constraints at once.

    Args:
        scene: Scene satisfying cs
        cs: Compiled constraints
        level: Number of violations wanted
        rng: Random source
        rules: Rule table

    Returns:
        The corrupted scene and the indices of the constraints it breaks
    """
    rules = rules or load_rule_table()
    palette = sorted(cs.palette(rules)) or list(COLORS)
    broken: List[int] = []
    flags = cs.satisfied(scene, rules)
    for _ in range(level):
        step = _corruption_step(scene, flags, cs, palette, rng, rules, exact=True)
        if step is None and not broken:
            step = _corruption_step(scene, flags, cs, palette, rng, rules, exact=False)
        if step is None:
            logger.debug(f"No further corruption after {len(broken)} of {level}")
            break
        scene, newly = step
        flags = cs.satisfied(scene, rules)
        broken.extend(newly)
    return scene, broken


class ScriptedBackend:
    """Ground truth with controlled corruption"""

    name = 'scripted'

    def __init__(self, level: int = 1, world: Optional[WorldConfig] = None, rules: Optional[RuleTable] = None):
        self.level = level
        self.world = world or WorldConfig()
        self.rules = rules or load_rule_table()

    def draft(self, spec: InstructionSpec, rng: np.random.Generator) -> Draft:
        cs = compile_constraints(spec, self.rules)
        truth = ground_truth_for(spec, rng, self.world, self.rules)
        scene, broken = corrupt(truth, cs, self.level, rng, self.rules)
        return Draft(reasoning_text(spec, self.rules), render(scene), broken)


class ModelBackend:
    """Drafts from a trained checkpoint through the interleave engine"""

    name = 'model'

    def __init__(self, engine, sampler=None):
        self.engine = engine
        self.sampler = sampler

    def draft(self, spec: InstructionSpec, rng: np.random.Generator) -> Draft:
        if spec.is_edit:
            rollout = self.engine.edit(spec.source, spec.text, 'reason', self.sampler, rng)
        else:
            rollout = self.engine.run(spec.text, 'reason', self.sampler, rng)
        return Draft(rollout.t1, rollout.i1)


class GeneratorAgent:
    """
    Generator Agent that drafts (reasoning, image) pairs
    """

    def __init__(self, backend: Any):
        self.backend = backend
        self.profile: Dict[str, str] = dict(ROLE_PROFILE)

    def generate_draft(self, spec: InstructionSpec, rng: np.random.Generator) -> Draft:
        """
        Draft reasoning and an image for a spec

        Args:
            spec: Instruction to draft for
            rng: Per-sample random source

        Returns:
            Draft with reasoning T1 and image I1
        """
        return self.backend.draft(spec, rng)
