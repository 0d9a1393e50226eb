"""
Scene construction and rendering.

`ground_truth_scene` stands in for the image renderer of the data pipeline:
given a constraint set it returns a scene that satisfies all of it, or
raises. It first tries randomized construction a bounded number of times,
then falls back to deterministic constructive placement that orders
related entities into bands.
"""

from graphlib import CycleError, TopologicalSorter
from typing import Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from loguru import logger

from toyworld.constraints import ConstraintKind, ConstraintSet, Desc
from toyworld.entities import COLOR_CODE, COLORS, SHAPE_CODE, SHAPES, Entity, GridImage, Scene
from toyworld.instructions import InstructionSpec, compile_constraints
from toyworld.maze import path_interior
from toyworld.rules import RuleTable, load_rule_table
from utils.config import WorldConfig
from utils.errors import UnsatisfiableConstraintsError
from utils.seeding import derive_rng

Cell = Tuple[int, int]
Pin = Dict[str, Optional[str]]


def render(scene: Scene) -> GridImage:
    """Rasterize a scene into shape and color planes"""
    shapes = np.zeros((scene.grid_h, scene.grid_w), dtype=np.int8)
    colors = np.zeros((scene.grid_h, scene.grid_w), dtype=np.int8)
    for e in scene:
        shapes[e.row, e.col] = SHAPE_CODE[e.shape]
        colors[e.row, e.col] = COLOR_CODE[e.color]
    return GridImage(shapes, colors)


def random_scene(rng: np.random.Generator, world: Optional[WorldConfig] = None,
                 min_entities: int = 3, max_entities: int = 5,
                 exclude: Sequence[Tuple[str, str]] = ()) -> Scene:
    """Scene of randomly placed entities avoiding the excluded (shape, color) pairs"""
    world = world or WorldConfig()
    n = int(rng.integers(min_entities, max_entities + 1))
    combos = [(s, c) for s in SHAPES for c in COLORS if (s, c) not in set(exclude)]
    flat = rng.choice(world.grid_h * world.grid_w, size=n, replace=False)
    entities = []
    for i in flat:
        shape, color = combos[int(rng.integers(0, len(combos)))]
        entities.append(Entity(int(i) // world.grid_w, int(i) % world.grid_w, shape, color))
    return Scene(tuple(entities), world.grid_h, world.grid_w)


def random_grid(rng: np.random.Generator, world: Optional[WorldConfig] = None, density: float = 0.15) -> GridImage:
    """Grid whose cells are independently occupied with probability `density`"""
    world = world or WorldConfig()
    occupied = rng.random((world.grid_h, world.grid_w)) < density
    shapes = np.where(occupied, rng.integers(1, len(SHAPES) + 1, size=occupied.shape), 0)
    colors = np.where(occupied, rng.integers(1, len(COLORS) + 1, size=occupied.shape), 0)
    return GridImage(shapes, colors)


def fresh_grids(count: int, seed: int, world: Optional[WorldConfig] = None,
                max_entities: int = 8) -> List[GridImage]:
    """`count` rendered random scenes, one derived stream per grid"""
    world = world or WorldConfig()
    top = min(max_entities, world.grid_h * world.grid_w)
    return [render(random_scene(derive_rng(seed, 'fresh-grid', i), world, 1, top)) for i in range(count)]


def _merge_pin(pins: Dict[Cell, Pin], cell: Cell, shape: Optional[str], color: Optional[str]) -> None:
    pin = pins.setdefault(cell, {'shape': None, 'color': None})
    for key, value in (('shape', shape), ('color', color)):
        if value is None:
            continue
        if pin[key] is not None and pin[key] != value:
            raise UnsatisfiableConstraintsError(f"Cell {cell} must be both {pin[key]} and {value}")
        pin[key] = value


def _pinned_cells(cs: ConstraintSet, world: WorldConfig, rules: RuleTable) -> Tuple[Dict[Cell, Pin], Set[Cell]]:
    pins: Dict[Cell, Pin] = {}
    forbidden: Set[Cell] = set()
    for c in cs:
        if c.kind in (ConstraintKind.ENTITY_PRESENT, ConstraintKind.COUNT_EQUALS) and c.desc.cell is not None:
            if c.kind == ConstraintKind.COUNT_EQUALS and c.count == 0:
                forbidden.add(c.desc.cell)
            elif c.kind == ConstraintKind.COUNT_EQUALS and c.count > 1:
                raise UnsatisfiableConstraintsError(f"One cell cannot hold {c.count} entities")
            else:
                _merge_pin(pins, c.desc.cell, c.desc.shape, c.desc.color)
        elif c.kind == ConstraintKind.ATTRIBUTE_EQUALS:
            _merge_pin(pins, c.cell, *((c.value, None) if c.attribute == 'shape' else (None, c.value)))
        elif c.kind == ConstraintKind.PATH_VALID:
            markers = rules.maze_markers()
            for wall in c.maze.walls:
                _merge_pin(pins, wall, *markers['wall'])
            _merge_pin(pins, c.maze.start, *markers['start'])
            _merge_pin(pins, c.maze.goal, *markers['goal'])
            for cell in path_interior(c.maze):
                _merge_pin(pins, cell, *markers['step'])
    for cell in pins:
        if not (0 <= cell[0] < world.grid_h and 0 <= cell[1] < world.grid_w):
            raise UnsatisfiableConstraintsError(f"Cell {cell} lies outside the grid")
        if cell in forbidden:
            raise UnsatisfiableConstraintsError(f"Cell {cell} must be both empty and occupied")
    return pins, forbidden


class _Planner:
    """Turns a constraint set into concrete entities, randomly or deterministically"""

    def __init__(self, cs: ConstraintSet, world: WorldConfig, rules: RuleTable):
        self.cs = cs
        self.world = world
        self.rules = rules
        self.pins, self.forbidden = _pinned_cells(cs, world, rules)
        self.palette = sorted(cs.palette(rules)) or list(COLORS)
        self.avoid: List[Desc] = []
        for c in cs:
            for d in (c.desc, c.a, c.b):
                if d is not None and d.cell is None and d not in self.avoid:
                    self.avoid.append(d)
        if any(c.kind == ConstraintKind.PATH_VALID for c in cs):
            self.avoid.append(Desc(*rules.maze_markers()['step']))

    def _fill(self, shape: Optional[str], color: Optional[str], own: Optional[Desc],
              rng: Optional[np.random.Generator]) -> Tuple[str, str]:
        candidates = [(s, c) for s in ([shape] if shape else SHAPES) for c in ([color] if color else self.palette)]
        preferred = [(s, c) for s, c in candidates
                     if not any(d != own and d.matches(Entity(0, 0, s, c)) for d in self.avoid)]
        pool = preferred or candidates
        if rng is None:
            return pool[0]
        return pool[int(rng.integers(0, len(pool)))]

    def plan(self, rng: Optional[np.random.Generator]) -> Optional[Tuple[Dict[Cell, Entity], List[Tuple[Desc, Tuple[str, str]]]]]:
        placed = {}
        for cell, pin in sorted(self.pins.items()):
            shape, color = pin['shape'], pin['color']
            if shape is None or color is None:
                shape, color = self._fill(shape, color, None, rng)
            placed[cell] = Entity(cell[0], cell[1], shape, color)
        floating: List[Tuple[Desc, Tuple[str, str]]] = []

        def matching(desc: Desc) -> int:
            pinned = sum(1 for e in placed.values() if desc.matches(e))
            return pinned + sum(1 for _, (s, c) in floating if desc.matches(Entity(0, 0, s, c)))

        for c in self.cs:
            if c.kind == ConstraintKind.COUNT_EQUALS and c.desc.cell is None:
                have = matching(c.desc)
                if have > c.count:
                    return None
                floating += [(c.desc, self._fill(c.desc.shape, c.desc.color, c.desc, rng))
                             for _ in range(c.count - have)]
        for c in self.cs:
            needs = []
            if c.kind == ConstraintKind.ENTITY_PRESENT and c.desc.cell is None:
                needs = [c.desc]
            elif c.kind == ConstraintKind.RELATION:
                needs = [c.a, c.b]
            for desc in needs:
                if matching(desc) == 0:
                    floating.append((desc, self._fill(desc.shape, desc.color, desc, rng)))
        if not placed and not floating:
            floating.append((Desc(), self._fill(None, None, None, rng)))
        return placed, floating

    def free_cells(self, placed: Dict[Cell, Entity]) -> List[Cell]:
        return [(r, c) for r in range(self.world.grid_h) for c in range(self.world.grid_w)
                if (r, c) not in placed and (r, c) not in self.forbidden]

    def scene(self, placed: Dict[Cell, Entity]) -> Scene:
        return Scene(tuple(placed[c] for c in sorted(placed)), self.world.grid_h, self.world.grid_w)

    def randomized(self, rng: np.random.Generator) -> Optional[Scene]:
        planned = self.plan(rng)
        if planned is None:
            return None
        placed, floating = planned
        free = self.free_cells(placed)
        if len(free) < len(floating):
            return None
        order = rng.permutation(len(free))
        for (_, (shape, color)), idx in zip(floating, order):
            r, c = free[int(idx)]
            placed[(r, c)] = Entity(r, c, shape, color)
        return self.scene(placed)

    def _axis_order(self, nodes: List[Desc], axis: Tuple[str, str]) -> List[Desc]:
        before, after = axis
        graph: Dict[int, Set[int]] = {i: set() for i in range(len(nodes))}
        for c in self.cs:
            if c.kind != ConstraintKind.RELATION or c.a not in nodes or c.b not in nodes or c.a == c.b:
                continue
            a, b = nodes.index(c.a), nodes.index(c.b)
            if c.relation == before:
                graph[b].add(a)
            elif c.relation == after:
                graph[a].add(b)
        try:
            return [nodes[i] for i in TopologicalSorter(graph).static_order()]
        except CycleError as e:
            raise UnsatisfiableConstraintsError(f"Relations form a cycle: {e.args[1]}") from None

    def constructive(self) -> Optional[Scene]:
        planned = self.plan(None)
        if planned is None:
            return None
        placed, floating = planned
        nodes: List[Desc] = []
        for desc, _ in floating:
            if desc not in nodes:
                nodes.append(desc)
        cols = self._axis_order(nodes, ('left_of', 'right_of'))
        rows = self._axis_order(nodes, ('above', 'below'))
        band_w = max(1, self.world.grid_w // max(1, len(nodes)))
        band_h = max(1, self.world.grid_h // max(1, len(nodes)))
        for desc in nodes:
            ci, ri = cols.index(desc), rows.index(desc)
            band = [(r, c) for r in range(ri * band_h, (ri + 1) * band_h) for c in range(ci * band_w, (ci + 1) * band_w)
                    if (r, c) not in placed and (r, c) not in self.forbidden]
            members = [attrs for d, attrs in floating if d == desc]
            if len(band) < len(members):
                return None
            for (r, c), (shape, color) in zip(band, members):
                placed[(r, c)] = Entity(r, c, shape, color)
        for c in self.cs:
            if c.kind == ConstraintKind.RELATION and c.relation == 'adjacent':
                self._make_adjacent(placed, c.a, c.b)
        return self.scene(placed)

    def _make_adjacent(self, placed: Dict[Cell, Entity], a: Desc, b: Desc) -> None:
        anchors = [e for e in placed.values() if a.matches(e)]
        movers = [e for e in placed.values() if b.matches(e) and not a.matches(e)]
        if len(anchors) != 1 or len(movers) != 1 or movers[0].cell in self.pins:
            return
        anchor, mover = anchors[0], movers[0]
        for dr, dc in ((0, 1), (1, 0), (0, -1), (-1, 0)):
            cell = (anchor.row + dr, anchor.col + dc)
            if (0 <= cell[0] < self.world.grid_h and 0 <= cell[1] < self.world.grid_w
                    and cell not in placed and cell not in self.forbidden):
                del placed[mover.cell]
                placed[cell] = mover.moved(*cell)
                return


def ground_truth_scene(cs: Union[ConstraintSet, InstructionSpec], rng: np.random.Generator,
                       world: Optional[WorldConfig] = None, rules: Optional[RuleTable] = None) -> Scene:
    """
    Build a scene satisfying every constraint

    Args:
        cs: Constraint set (compiled here if needed)
        rng: Seeded random source
        world: Grid configuration and attempt bound
        rules: Rule table

    Returns:
        Scene with oracle score 1.0 and passing proxies

    Raises:
        UnsatisfiableConstraintsError: no scene was found
    """
    world = world or WorldConfig()
    rules = rules or load_rule_table()
    cs = compile_constraints(cs, rules)
    planner = _Planner(cs, world, rules)
    for _ in range(world.max_scene_attempts):
        scene = planner.randomized(rng)
        if scene is not None and all(cs.satisfied(scene, rules)):
            return scene
    logger.debug(f"Randomized construction failed {world.max_scene_attempts} times; placing constructively")
    scene = planner.constructive()
    if scene is not None and all(cs.satisfied(scene, rules)):
        return scene
    raise UnsatisfiableConstraintsError(f"No scene satisfies {len(cs)} constraints")


def ground_truth_for(spec: InstructionSpec, rng: np.random.Generator, world: Optional[WorldConfig] = None,
                     rules: Optional[RuleTable] = None) -> Scene:
    """Reference scene for a spec: the stored edit target, or a constructed scene"""
    if spec.target is not None:
        return spec.target.to_scene()
    return ground_truth_scene(spec, rng, world, rules)
