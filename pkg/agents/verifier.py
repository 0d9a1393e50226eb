"""
Verifier Agent for the interleaved refinement pipeline

The Verifier Agent is responsible for:
- Checking a draft image against the compiled constraints and the proxies
- Emitting one edit directive per violated constraint or failing proxy
- Making sure each directive, applied in order, repairs what it addresses
  without breaking anything that already held
"""

from itertools import combinations, islice
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from loguru import logger

from agents.directives import DIMENSION_TABLE, Action, Dimension, EditDirective, apply_directive
from toyworld.constraints import Constraint, ConstraintKind, ConstraintSet, Desc, relation_holds
from toyworld.entities import COLORS, SHAPES, Entity, GridImage, Scene
from toyworld.instructions import InstructionSpec, compile_constraints
from toyworld.maze import path_interior
from toyworld.oracle import proxy_results
from toyworld.rules import RuleTable, load_rule_table
from toyworld.scenes import ground_truth_scene
from utils.config import WorldConfig
from utils.errors import DirectiveApplicationError, UnsatisfiableConstraintsError
from utils.seeding import derive_rng

Cell = Tuple[int, int]

ROLE_PROFILE = {
    'role': 'Reflective Verifier',
    'goal': 'Find every way a draft image misses its instruction and say exactly how to fix it',
    'backstory': 'A meticulous critic who checks objects, attributes, relations and style, '
                 'and only ever asks for edits that can be carried out.'
}


def _content(scene: Scene, cell: Cell) -> Optional[Tuple[str, str]]:
    entity = scene.at(*cell)
    return None if entity is None else (entity.shape, entity.color)


class VerifierAgent:
    """
    Verifier Agent that turns oracle failures into edit directives
    """

    def __init__(self, rules: Optional[RuleTable] = None, max_candidates: int = 6000):
        """
        Initialize the Verifier Agent

        Args:
            rules: Rule table, the shipped one by default
            max_candidates: Search bound per violated constraint
        """
        self.rules = rules or load_rule_table()
        self.max_candidates = max_candidates
        self.profile: Dict[str, str] = dict(ROLE_PROFILE)

    def verify(self, image: GridImage, spec: Union[InstructionSpec, ConstraintSet],
               rng: Optional[np.random.Generator] = None) -> List[EditDirective]:
        """
        Inspect a draft and produce directives

        Args:
            image: Draft image I1
            spec: Instruction spec or compiled constraint set
            rng: Orders free-cell and fill choices; derived from the
                 instruction text when omitted

        Returns:
            One directive per violated constraint, then proxy directives. A
            repair that also closes other violated constraints covers them.
            Constraints go in order, except that one whose repair would also
            satisfy another violated constraint waits until it no longer does.
        """
        cs = compile_constraints(spec, self.rules)
        if rng is None:
            rng = derive_rng(0, spec.text if isinstance(spec, InstructionSpec) else 'constraints')
        scene = image.to_scene()
        rank = {divmod(int(k), scene.grid_w): i
                for i, k in enumerate(rng.permutation(scene.grid_h * scene.grid_w))}
        palette = sorted(cs.palette(self.rules))
        directives: List[EditDirective] = []

        pending = [i for i, ok in enumerate(cs.satisfied(scene, self.rules)) if not ok]
        while pending:
            index, directive = None, None
            for candidate in pending:
                others = set(pending) - {candidate}
                directive = self._repair(cs[candidate], candidate, scene, cs, rank, palette, rng, others)
                if directive is not None:
                    index = candidate
                    break
            if directive is None:
                index = pending[0]
                directive = self._repair(cs[index], index, scene, cs, rank, palette, rng, None)
            pending.remove(index)
            if directive is None:
                logger.warning(f"No directive repairs '{cs[index].describe(self.rules)}'")
                continue
            scene = apply_directive(scene, directive)
            directives.append(directive)
            flags = cs.satisfied(scene, self.rules)
            fixed = [j for j in pending if flags[j]]
            if fixed:
                logger.debug(f"Directive for constraint {index} also repaired {fixed}")
                pending = [j for j in pending if not flags[j]]

        # Proxies are judged on the scene after constraint repairs
        for name, passed in proxy_results(scene, cs, self.rules).items():
            if passed:
                continue
            directive = self._repair_proxy(name, scene, cs, rank, palette, rng)
            if directive is not None:
                scene = apply_directive(scene, directive)
                directives.append(directive)

        logger.debug(f"Verifier emitted {len(directives)} directive(s)")
        return directives

    # Candidate search

    def _safe(self, before: Scene, after: Scene, cs: ConstraintSet, index: Optional[int],
              others: Optional[Set[int]] = None) -> bool:
        """The addressed check holds, nothing that held before breaks, and no other open check closes"""
        old = cs.satisfied(before, self.rules)
        new = cs.satisfied(after, self.rules)
        if index is not None and not new[index]:
            return False
        if any(o and not n for o, n in zip(old, new)):
            return False
        if others and any(new[j] for j in others):
            return False
        old_proxies = proxy_results(before, cs, self.rules)
        new_proxies = proxy_results(after, cs, self.rules)
        return all(new_proxies[k] or not old_proxies[k] for k in old_proxies)

    def _search(self, scene: Scene, cs: ConstraintSet, index: Optional[int], candidates: Iterable[EditDirective],
                others: Optional[Set[int]] = None) -> Tuple[Optional[EditDirective], Optional[EditDirective]]:
        """First safe candidate, plus the first candidate that at least fixes the check"""
        fallback = None
        for directive in islice(candidates, self.max_candidates):
            try:
                after = apply_directive(scene, directive)
            except DirectiveApplicationError:
                continue
            if self._safe(scene, after, cs, index, others):
                return directive, fallback
            if fallback is None and index is not None and cs.satisfied(after, self.rules)[index]:
                fallback = directive
        return None, fallback

    def _fills(self, desc: Desc, palette: Sequence[str], rng: np.random.Generator,
               prefer: Optional[Entity] = None) -> List[Tuple[str, str]]:
        shapes = [desc.shape] if desc.shape else [str(s) for s in rng.permutation(SHAPES)]
        colors = [desc.color] if desc.color else [str(c) for c in rng.permutation(list(palette) or COLORS)]
        if prefer is not None:
            shapes.sort(key=lambda s: s != prefer.shape)
            colors.sort(key=lambda c: c != prefer.color)
        return [(s, c) for s in shapes for c in colors]

    @staticmethod
    def _free(scene: Scene, rank: Dict[Cell, int]) -> List[Cell]:
        return sorted(scene.free_cells(), key=rank.__getitem__)

    def _adds(self, desc: Desc, scene: Scene, rank, palette, rng, dimension: Dimension,
              addresses: str, count: int = 1) -> Iterator[EditDirective]:
        free = [desc.cell] if desc.cell is not None else self._free(scene, rank)
        for fill in self._fills(desc, palette, rng):
            for start in range(len(free) - count + 1):
                yield EditDirective(dimension=dimension, target=tuple(free[start:start + count]),
                                    action=Action.ADD, payload={'entities': [list(fill)] * count},
                                    rationale=f"{addresses} is not satisfied", addresses=addresses)

    def _repair(self, constraint: Constraint, index: int, scene: Scene, cs: ConstraintSet,
                rank: Dict[Cell, int], palette: List[str], rng: np.random.Generator,
                others: Optional[Set[int]]) -> Optional[EditDirective]:
        """
        One directive for one violated constraint

        With `others`, only a directive that leaves those constraints open is
        returned, or None. Without, the search widens to a directive that
        breaks another check and finally to a redraw toward a reference scene.
        """
        addresses = constraint.describe(self.rules)
        rationale = f"{addresses} is not satisfied"
        kind = constraint.kind

        if kind == ConstraintKind.PATH_VALID:
            directive = self._repair_path(constraint, scene, addresses)
            if directive is None or others is None:
                return directive
            if self._safe(scene, apply_directive(scene, directive), cs, index, others):
                return directive
            return None

        candidates: Iterable[EditDirective] = ()
        if kind == ConstraintKind.ENTITY_PRESENT:
            desc = constraint.desc
            occupant = scene.at(*desc.cell) if desc.cell is not None else None
            if occupant is not None:
                candidates = (EditDirective(dimension=Dimension.ATTRIBUTE_ACCURACY, target=(desc.cell,),
                                            action=Action.CHANGE_ATTRIBUTE, payload={'entities': [list(fill)]},
                                            rationale=rationale, addresses=addresses)
                              for fill in self._fills(desc, palette, rng, prefer=occupant))
            else:
                candidates = self._adds(desc, scene, rank, palette, rng, Dimension.OBJECT_PRESENCE, addresses)
        elif kind == ConstraintKind.ATTRIBUTE_EQUALS:
            occupant = scene.at(*constraint.cell)
            desc = Desc(**{constraint.attribute: constraint.value, 'row': constraint.cell[0],
                           'col': constraint.cell[1]})
            if occupant is not None:
                candidates = (EditDirective(dimension=Dimension.ATTRIBUTE_ACCURACY, target=(constraint.cell,),
                                            action=Action.CHANGE_ATTRIBUTE, payload={'entities': [list(fill)]},
                                            rationale=rationale, addresses=addresses)
                              for fill in self._fills(desc, palette, rng, prefer=occupant))
            else:
                candidates = self._adds(desc, scene, rank, palette, rng, Dimension.OBJECT_PRESENCE, addresses)
        elif kind == ConstraintKind.RELATION:
            candidates = self._relation_candidates(constraint, scene, rank, palette, rng, addresses)
        elif kind == ConstraintKind.COUNT_EQUALS:
            candidates = self._count_candidates(constraint, scene, rank, palette, rng, addresses)

        directive, fallback = self._search(scene, cs, index, candidates, others)
        if directive is None and kind == ConstraintKind.RELATION:
            directive = self._greedy_moves(constraint, index, scene, cs, rank, addresses, others)
        if directive is not None or others is not None:
            return directive
        if fallback is not None:
            logger.warning(f"Repair of '{addresses}' breaks another check; emitting it anyway")
            return fallback
        return self._redraw_toward_reference(scene, cs, rng, addresses)

    def _relation_candidates(self, constraint: Constraint, scene: Scene, rank, palette, rng,
                             addresses: str) -> Iterator[EditDirective]:
        group_a = [e for e in scene if constraint.a.matches(e)]
        group_b = [e for e in scene if constraint.b.matches(e)]
        if not group_a:
            yield from self._adds(constraint.a, scene, rank, palette, rng, Dimension.OBJECT_PRESENCE, addresses)
            return
        if not group_b:
            yield from self._adds(constraint.b, scene, rank, palette, rng, Dimension.OBJECT_PRESENCE, addresses)
            return
        violators = sorted({e for x in group_a for y in group_b
                            if x != y and not relation_holds(constraint.relation, x, y) for e in (x, y)})
        free = self._free(scene, rank)
        for mover in violators:
            for dst in free:
                yield EditDirective(dimension=DIMENSION_TABLE['relation'], target=(mover.cell,),
                                    action=Action.MOVE, payload={'to': [list(dst)]},
                                    rationale=f"{addresses} is not satisfied", addresses=addresses)

    def _greedy_moves(self, constraint: Constraint, index: int, scene: Scene, cs: ConstraintSet,
                      rank: Dict[Cell, int], addresses: str, others: Optional[Set[int]] = None) -> Optional[EditDirective]:
        """Several movers at once, each step cutting the number of violating pairs"""

        def violations(s: Scene) -> int:
            group_a = [e for e in s if constraint.a.matches(e)]
            group_b = [e for e in s if constraint.b.matches(e)]
            return sum(1 for x in group_a for y in group_b
                       if x != y and not relation_holds(constraint.relation, x, y))

        held = [i for i, ok in enumerate(cs.satisfied(scene, self.rules)) if ok]
        working = scene
        moves: Dict[Cell, Cell] = {}
        for _ in range(len(scene)):
            current = violations(working)
            if current == 0:
                break
            best = None
            for mover in sorted(working):
                if not (constraint.a.matches(mover) or constraint.b.matches(mover)):
                    continue
                for dst in self._free(working, rank):
                    trial = working.without(*mover.cell).with_entity(mover.moved(*dst))
                    flags = cs.satisfied(trial, self.rules)
                    if any(not flags[i] for i in held):
                        continue
                    score = violations(trial)
                    if score < current and (best is None or score < best[0]):
                        best = (score, mover, dst, trial)
            if best is None:
                return None
            _, mover, dst, working = best
            origin = next((src for src, d in moves.items() if d == mover.cell), mover.cell)
            moves.pop(origin, None)
            moves[origin] = dst
        moves = {src: dst for src, dst in moves.items() if src != dst}
        if not moves:
            return None
        directive = EditDirective(dimension=DIMENSION_TABLE['relation'], target=tuple(moves),
                                  action=Action.MOVE, payload={'to': [list(d) for d in moves.values()]},
                                  rationale=f"{addresses} is not satisfied", addresses=addresses)
        try:
            after = apply_directive(scene, directive)
        except DirectiveApplicationError:
            return None
        return directive if self._safe(scene, after, cs, index, others) else None

    def _count_candidates(self, constraint: Constraint, scene: Scene, rank, palette, rng,
                          addresses: str) -> Iterator[EditDirective]:
        matching = sorted(e for e in scene if constraint.desc.matches(e))
        surplus = len(matching) - constraint.count
        if surplus > 0:
            for group in combinations(reversed(matching), surplus):
                yield EditDirective(dimension=DIMENSION_TABLE['count_equals'],
                                    target=tuple(e.cell for e in group), action=Action.REMOVE,
                                    rationale=f"{addresses} is not satisfied", addresses=addresses)
        elif surplus < 0:
            yield from self._adds(constraint.desc, scene, rank, palette, rng, DIMENSION_TABLE['count_equals'],
                                  addresses, count=-surplus)

    def _repair_path(self, constraint: Constraint, scene: Scene, addresses: str) -> Optional[EditDirective]:
        """Marker-level fix of a maze as one redraw"""
        maze = constraint.maze
        markers = self.rules.maze_markers()
        wanted: Dict[Cell, Optional[Tuple[str, str]]] = {wall: markers['wall'] for wall in maze.walls}
        wanted.update({cell: markers['step'] for cell in path_interior(maze)})
        wanted[maze.start] = markers['start']
        wanted[maze.goal] = markers['goal']
        for e in scene:
            if (e.shape, e.color) == markers['step'] and e.cell not in wanted:
                wanted[e.cell] = None
        return self._redraw(scene, wanted, Dimension.OBJECT_PRESENCE, addresses)

    def _redraw(self, scene: Scene, wanted: Dict[Cell, Optional[Tuple[str, str]]], dimension: Dimension,
                addresses: str) -> Optional[EditDirective]:
        changed = sorted(cell for cell, fill in wanted.items() if _content(scene, cell) != fill)
        if not changed:
            return None
        return EditDirective(dimension=dimension, target=tuple(changed), action=Action.CHANGE_ATTRIBUTE,
                             payload={'entities': [list(wanted[c]) if wanted[c] else None for c in changed],
                                      'redraw': True},
                             rationale=f"{addresses} is not satisfied", addresses=addresses)

    def _redraw_toward_reference(self, scene: Scene, cs: ConstraintSet, rng: np.random.Generator,
                                 addresses: str) -> Optional[EditDirective]:
        """Last resort: redraw every cell that differs from a scene satisfying all constraints"""
        world = WorldConfig(grid_h=scene.grid_h, grid_w=scene.grid_w)
        try:
            reference = ground_truth_scene(cs, rng, world, self.rules)
        except UnsatisfiableConstraintsError:
            logger.warning(f"No directive repairs '{addresses}'")
            return None
        wanted = {(r, c): None for r in range(scene.grid_h) for c in range(scene.grid_w)}
        wanted.update({e.cell: (e.shape, e.color) for e in reference})
        logger.warning(f"Repairing '{addresses}' by redrawing toward a reference scene")
        return self._redraw(scene, wanted, Dimension.OBJECT_PRESENCE, addresses)

    def _repair_proxy(self, name: str, scene: Scene, cs: ConstraintSet, rank: Dict[Cell, int],
                      palette: List[str], rng: np.random.Generator) -> Optional[EditDirective]:
        dimension = DIMENSION_TABLE[name]
        rationale = f"{name.replace('_', ' ')} fails"
        if name == 'palette_consistency':
            off = sorted(e for e in scene if e.color not in palette)
            working = scene
            colors = []
            for entity in off:
                for color in rng.permutation(palette):
                    trial = working.with_entity(entity.with_attrs(color=str(color)))
                    if all(n or not o for o, n in zip(cs.satisfied(working, self.rules),
                                                      cs.satisfied(trial, self.rules))):
                        working = trial
                        colors.append([entity.shape, str(color)])
                        break
                else:
                    break
            candidates = []
            if len(colors) == len(off):
                candidates.append(EditDirective(dimension=dimension, target=tuple(e.cell for e in off),
                                                action=Action.CHANGE_ATTRIBUTE, payload={'entities': colors},
                                                rationale=rationale))
            candidates.append(EditDirective(dimension=dimension, target=tuple(e.cell for e in off),
                                            action=Action.REMOVE, rationale=rationale))
            directive, _ = self._search(scene, cs, None, candidates)
            return directive or candidates[0]
        if name == 'non_empty':
            directive, _ = self._search(scene, cs, None, (
                EditDirective(dimension=dimension, target=(cell,), action=Action.ADD,
                              payload={'entities': [list(fill)]}, rationale=rationale)
                for fill in self._fills(Desc(), palette, rng) for cell in self._free(scene, rank)))
            return directive
        # Grids hold one entity per cell, so overlap has nothing to repair
        return None
