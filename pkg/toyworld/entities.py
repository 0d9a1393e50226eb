"""
Visual vocabulary of the toy world: entities, scenes and rendered grids.

A GridImage is the toy stand-in for an image. Each cell holds a shape code
(0 = empty, 1..5) and a color code (0 = empty, 1..8); both are zero or both
are non-zero.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from utils.errors import RejectedInputError

SHAPES: Tuple[str, ...] = ('circle', 'square', 'triangle', 'diamond', 'star')
COLORS: Tuple[str, ...] = ('red', 'orange', 'yellow', 'green', 'blue', 'purple', 'black', 'white')
EMPTY = 0
DEFAULT_GRID = 12

SHAPE_CODE: Dict[str, int] = {s: i + 1 for i, s in enumerate(SHAPES)}
COLOR_CODE: Dict[str, int] = {c: i + 1 for i, c in enumerate(COLORS)}

# One glyph per shape for ASCII rendering
SHAPE_GLYPH: Dict[str, str] = {'circle': 'o', 'square': '#', 'triangle': '^', 'diamond': '<', 'star': '*'}
COLOR_GLYPH: Dict[str, str] = {'red': 'R', 'orange': 'O', 'yellow': 'Y', 'green': 'G', 'blue': 'B',
                               'purple': 'P', 'black': 'K', 'white': 'W'}
COLOR_RGB: Dict[str, Tuple[int, int, int]] = {
    'red': (220, 40, 40), 'orange': (245, 140, 30), 'yellow': (240, 220, 40), 'green': (40, 170, 70),
    'blue': (40, 90, 220), 'purple': (140, 60, 190), 'black': (20, 20, 20), 'white': (250, 250, 250)
}


class KnowledgeCategory(str, Enum):
    CULTURAL = 'cultural'
    NATURAL_SCIENCE = 'natural_science'
    SPATIAL = 'spatial'
    TEMPORAL = 'temporal'
    LOGICAL = 'logical'

    @classmethod
    def parse(cls, value: str) -> 'KnowledgeCategory':
        try:
            return cls(value)
        except ValueError:
            raise RejectedInputError(f"Unknown knowledge category '{value}'") from None


@dataclass(frozen=True, order=True)
class Entity:
    """One shape of one color in one cell"""

    row: int
    col: int
    shape: str
    color: str

    def __post_init__(self):
        if self.shape not in SHAPE_CODE:
            raise RejectedInputError(f"Unknown shape '{self.shape}'")
        if self.color not in COLOR_CODE:
            raise RejectedInputError(f"Unknown color '{self.color}'")

    @property
    def cell(self) -> Tuple[int, int]:
        return (self.row, self.col)

    def moved(self, row: int, col: int) -> 'Entity':
        return Entity(row, col, self.shape, self.color)

    def with_attrs(self, shape: Optional[str] = None, color: Optional[str] = None) -> 'Entity':
        return Entity(self.row, self.col, shape or self.shape, color or self.color)


@dataclass(frozen=True)
class Scene:
    """Symbolic ground truth: entities on an H x W grid"""

    entities: Tuple[Entity, ...] = ()
    grid_h: int = DEFAULT_GRID
    grid_w: int = DEFAULT_GRID

    def __post_init__(self):
        object.__setattr__(self, 'entities', tuple(self.entities))
        seen = set()
        for e in self.entities:
            if not (0 <= e.row < self.grid_h and 0 <= e.col < self.grid_w):
                raise RejectedInputError(f"Entity {e} lies outside the {self.grid_h}x{self.grid_w} grid")
            if e.cell in seen:
                raise RejectedInputError(f"Two entities share cell {e.cell}")
            seen.add(e.cell)

    def __iter__(self) -> Iterator[Entity]:
        return iter(self.entities)

    def __len__(self) -> int:
        return len(self.entities)

    def at(self, row: int, col: int) -> Optional[Entity]:
        for e in self.entities:
            if e.row == row and e.col == col:
                return e
        return None

    def occupied(self) -> set:
        return {e.cell for e in self.entities}

    def free_cells(self) -> List[Tuple[int, int]]:
        taken = self.occupied()
        return [(r, c) for r in range(self.grid_h) for c in range(self.grid_w) if (r, c) not in taken]

    def without(self, row: int, col: int) -> 'Scene':
        return Scene(tuple(e for e in self.entities if e.cell != (row, col)), self.grid_h, self.grid_w)

    def with_entity(self, entity: Entity) -> 'Scene':
        """Scene with the entity placed, replacing whatever sat in its cell"""
        kept = tuple(e for e in self.entities if e.cell != entity.cell)
        return Scene(kept + (entity,), self.grid_h, self.grid_w)

    def canonical(self) -> 'Scene':
        return Scene(tuple(sorted(self.entities)), self.grid_h, self.grid_w)


@dataclass(frozen=True)
class GridImage:
    """Rendered raster: per-cell shape and color codes"""

    shapes: np.ndarray = field(repr=False)
    colors: np.ndarray = field(repr=False)

    def __post_init__(self):
        shapes = np.asarray(self.shapes, dtype=np.int8)
        colors = np.asarray(self.colors, dtype=np.int8)
        if shapes.shape != colors.shape or shapes.ndim != 2:
            raise RejectedInputError('Shape and color planes must be equal 2-D arrays')
        if shapes.min(initial=0) < 0 or shapes.max(initial=0) > len(SHAPES):
            raise RejectedInputError('Shape code outside the palette')
        if colors.min(initial=0) < 0 or colors.max(initial=0) > len(COLORS):
            raise RejectedInputError('Color code outside the palette')
        if not np.array_equal(shapes == EMPTY, colors == EMPTY):
            raise RejectedInputError('Empty cells must carry the empty code in both planes')
        shapes.setflags(write=False)
        colors.setflags(write=False)
        object.__setattr__(self, 'shapes', shapes)
        object.__setattr__(self, 'colors', colors)

    @classmethod
    def empty(cls, grid_h: int = DEFAULT_GRID, grid_w: int = DEFAULT_GRID) -> 'GridImage':
        zeros = np.zeros((grid_h, grid_w), dtype=np.int8)
        return cls(zeros, zeros.copy())

    @property
    def grid_h(self) -> int:
        return int(self.shapes.shape[0])

    @property
    def grid_w(self) -> int:
        return int(self.shapes.shape[1])

    def entities(self) -> List[Entity]:
        rows, cols = np.nonzero(self.shapes)
        return [Entity(int(r), int(c), SHAPES[self.shapes[r, c] - 1], COLORS[self.colors[r, c] - 1])
                for r, c in zip(rows, cols)]

    def to_scene(self) -> Scene:
        return Scene(tuple(self.entities()), self.grid_h, self.grid_w)

    def to_codes(self) -> List[List[int]]:
        """Dense integer array: 0 empty, else 1 + shape_index * 8 + color_index"""
        codes = np.where(self.shapes == EMPTY, 0,
                         1 + (self.shapes.astype(np.int32) - 1) * len(COLORS) + (self.colors.astype(np.int32) - 1))
        return codes.tolist()

    @classmethod
    def from_codes(cls, codes: Sequence[Sequence[int]]) -> 'GridImage':
        arr = np.asarray(codes, dtype=np.int32)
        if arr.ndim != 2 or arr.min(initial=0) < 0 or arr.max(initial=0) > len(SHAPES) * len(COLORS):
            raise RejectedInputError('Grid codes outside the palette')
        occupied = arr > 0
        shapes = np.where(occupied, (arr - 1) // len(COLORS) + 1, 0)
        colors = np.where(occupied, (arr - 1) % len(COLORS) + 1, 0)
        return cls(shapes, colors)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GridImage):
            return NotImplemented
        return np.array_equal(self.shapes, other.shapes) and np.array_equal(self.colors, other.colors)

    def __hash__(self) -> int:
        return hash((self.shapes.tobytes(), self.colors.tobytes(), self.shapes.shape))

    def cell_agreement(self, other: 'GridImage', cells: Optional[Sequence[Tuple[int, int]]] = None) -> float:
        """Fraction of cells (all, or the given ones) holding identical codes"""
        same = (self.shapes == other.shapes) & (self.colors == other.colors)
        if cells is None:
            return float(same.mean())
        if not cells:
            return 1.0
        return float(np.mean([same[r, c] for r, c in cells]))

    def to_ascii(self) -> str:
        lines = []
        for r in range(self.grid_h):
            row = []
            for c in range(self.grid_w):
                if self.shapes[r, c] == EMPTY:
                    row.append(' . ')
                else:
                    shape = SHAPES[self.shapes[r, c] - 1]
                    color = COLORS[self.colors[r, c] - 1]
                    row.append(f"{COLOR_GLYPH[color]}{SHAPE_GLYPH[shape]} ")
            lines.append(''.join(row).rstrip())
        return '\n'.join(lines)
