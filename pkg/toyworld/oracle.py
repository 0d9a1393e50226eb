"""
Exact oracles that score rendered grids against constraint sets.

`oracle_score` is the primary scorer. `independent_score` re-decides every
constraint straight from the grid arrays with separate code (the maze check
compares against the reconstructed BFS route instead of walking marked
cells); the judge uses it to recheck retained samples.
"""

from typing import Dict, List, Optional, Union

import numpy as np

from toyworld.constraints import ConstraintKind, ConstraintSet, Constraint, Desc, check_constraint
from toyworld.entities import COLOR_CODE, SHAPE_CODE, GridImage, Scene
from toyworld.maze import shortest_path
from toyworld.rules import RuleTable, load_rule_table
from utils.errors import RejectedInputError

PROXIES = ('palette_consistency', 'no_overlap', 'non_empty')


def _as_scene(img: Union[GridImage, Scene]) -> Scene:
    return img.to_scene() if isinstance(img, GridImage) else img


def oracle_flags(img: Union[GridImage, Scene], cs: ConstraintSet,
                 rules: Optional[RuleTable] = None) -> List[bool]:
    """Per-constraint satisfaction, in constraint order"""
    return cs.satisfied(_as_scene(img), rules)


def oracle_score(img: Union[GridImage, Scene], cs: ConstraintSet, rules: Optional[RuleTable] = None,
                 grid_shape: Optional[tuple] = None) -> float:
    """
    Fraction of constraints the image satisfies

    Args:
        img: Rendered grid (a Scene is accepted too)
        cs: Compiled constraint set
        rules: Rule table, the shipped one by default
        grid_shape: Expected (H, W); checked when given

    Returns:
        Score in [0, 1]; 1.0 for an empty constraint set
    """
    scene = _as_scene(img)
    if grid_shape is not None and (scene.grid_h, scene.grid_w) != tuple(grid_shape):
        raise RejectedInputError(f"Image is {scene.grid_h}x{scene.grid_w}, expected {grid_shape}")
    if len(cs) == 0:
        return 1.0
    flags = cs.satisfied(scene, rules)
    return sum(flags) / len(flags)


def proxy_results(img: Union[GridImage, Scene], cs: ConstraintSet,
                  rules: Optional[RuleTable] = None) -> Dict[str, bool]:
    """Style, realism and aesthetic proxies evaluated beside the constraints"""
    scene = _as_scene(img)
    palette = cs.palette(rules)
    cells = [e.cell for e in scene]
    return {
        'palette_consistency': not palette or all(e.color in palette for e in scene),
        'no_overlap': len(cells) == len(set(cells)),
        'non_empty': len(scene) > 0
    }


def _desc_mask(img: GridImage, desc: Desc) -> np.ndarray:
    mask = img.shapes != 0
    if desc.shape is not None:
        mask &= img.shapes == SHAPE_CODE[desc.shape]
    if desc.color is not None:
        mask &= img.colors == COLOR_CODE[desc.color]
    if desc.row is not None:
        pinned = np.zeros_like(mask)
        if 0 <= desc.row < img.grid_h and 0 <= desc.col < img.grid_w:
            pinned[desc.row, desc.col] = True
        mask &= pinned
    return mask


def _has(img: GridImage, cell, shape: str, color: str) -> bool:
    r, c = cell
    return bool(img.shapes[r, c] == SHAPE_CODE[shape] and img.colors[r, c] == COLOR_CODE[color])


def independent_check(img: GridImage, constraint: Constraint, rules: Optional[RuleTable] = None) -> bool:
    """Second implementation of the constraint semantics over raw arrays"""
    kind = constraint.kind
    if kind == ConstraintKind.ENTITY_PRESENT:
        return bool(_desc_mask(img, constraint.desc).any())
    if kind == ConstraintKind.ATTRIBUTE_EQUALS:
        r, c = constraint.cell
        plane, codes = (img.shapes, SHAPE_CODE) if constraint.attribute == 'shape' else (img.colors, COLOR_CODE)
        return bool(img.shapes[r, c] != 0 and plane[r, c] == codes[constraint.value])
    if kind == ConstraintKind.COUNT_EQUALS:
        return int(_desc_mask(img, constraint.desc).sum()) == constraint.count
    if kind == ConstraintKind.RELATION:
        ar, ac = np.nonzero(_desc_mask(img, constraint.a))
        br, bc = np.nonzero(_desc_mask(img, constraint.b))
        if ar.size == 0 or br.size == 0:
            return False
        dr = ar[:, None] - br[None, :]
        dc = ac[:, None] - bc[None, :]
        distinct = (dr != 0) | (dc != 0)
        holds = {
            'left_of': dc < 0,
            'right_of': dc > 0,
            'above': dr < 0,
            'below': dr > 0,
            'adjacent': (np.abs(dr) + np.abs(dc)) == 1
        }[constraint.relation]
        return bool(np.all(holds | ~distinct))
    rules = rules or load_rule_table()
    if kind == ConstraintKind.PATH_VALID:
        maze = constraint.maze
        markers = rules.maze_markers()
        route = shortest_path(maze)
        if route is None:
            return False
        if not all(_has(img, w, *markers['wall']) for w in maze.walls):
            return False
        if not (_has(img, maze.start, *markers['start']) and _has(img, maze.goal, *markers['goal'])):
            return False
        step_shape, step_color = markers['step']
        rows, cols = np.nonzero((img.shapes == SHAPE_CODE[step_shape]) & (img.colors == COLOR_CODE[step_color]))
        return set(zip(rows.tolist(), cols.tolist())) == set(route[1:-1])
    transition = rules.transitions()[constraint.noun]
    mask = _desc_mask(img, Desc(transition.shape, transition.color))
    return int(mask.sum()) == transition.apply(constraint.initial, constraint.steps)


def independent_score(img: GridImage, cs: ConstraintSet, rules: Optional[RuleTable] = None) -> float:
    if len(cs) == 0:
        return 1.0
    return sum(independent_check(img, c, rules) for c in cs) / len(cs)


def agrees_with_primary(img: GridImage, cs: ConstraintSet, rules: Optional[RuleTable] = None) -> bool:
    """True when both oracle implementations give identical per-constraint verdicts"""
    scene = img.to_scene()
    return all(check_constraint(c, scene, rules) == independent_check(img, c, rules) for c in cs)
