"""
Maze generation and shortest-path solving for logical-reasoning prompts.

A maze lives in a square box inside the grid. Walls block cells, moves are
4-connected, and generated mazes always have exactly one shortest route
from start to goal.
"""

from collections import deque
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, Iterator, List, Optional, Tuple

import numpy as np

from utils.errors import UnsatisfiableConstraintsError

Cell = Tuple[int, int]

# Neighbour order is fixed so BFS parents are deterministic
_STEPS: Tuple[Cell, ...] = ((-1, 0), (0, 1), (1, 0), (0, -1))


@dataclass(frozen=True)
class Maze:
    """Start, goal and walls inside the box (top, left, size)"""

    box: Tuple[int, int, int]
    start: Cell
    goal: Cell
    walls: FrozenSet[Cell]

    def __post_init__(self):
        object.__setattr__(self, 'walls', frozenset(tuple(w) for w in self.walls))
        object.__setattr__(self, 'start', tuple(self.start))
        object.__setattr__(self, 'goal', tuple(self.goal))
        object.__setattr__(self, 'box', tuple(self.box))

    def inside(self, cell: Cell) -> bool:
        top, left, size = self.box
        return top <= cell[0] < top + size and left <= cell[1] < left + size

    def open_neighbours(self, cell: Cell) -> Iterator[Cell]:
        for dr, dc in _STEPS:
            nxt = (cell[0] + dr, cell[1] + dc)
            if self.inside(nxt) and nxt not in self.walls:
                yield nxt

    def sorted_walls(self) -> List[Cell]:
        return sorted(self.walls)

    def to_dict(self) -> Dict[str, Any]:
        return {'box': list(self.box), 'start': list(self.start), 'goal': list(self.goal),
                'walls': [list(w) for w in self.sorted_walls()]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Maze':
        return cls(tuple(data['box']), tuple(data['start']), tuple(data['goal']),
                   frozenset(tuple(w) for w in data['walls']))


def bfs_distances(maze: Maze, source: Cell) -> Dict[Cell, int]:
    """Shortest 4-connected distance from source to every reachable open cell"""
    dist = {source: 0}
    queue = deque([source])
    while queue:
        cell = queue.popleft()
        for nxt in maze.open_neighbours(cell):
            if nxt not in dist:
                dist[nxt] = dist[cell] + 1
                queue.append(nxt)
    return dist


def shortest_path(maze: Maze) -> Optional[List[Cell]]:
    """One shortest start->goal route (start and goal included), or None"""
    parents: Dict[Cell, Optional[Cell]] = {maze.start: None}
    queue = deque([maze.start])
    while queue:
        cell = queue.popleft()
        if cell == maze.goal:
            break
        for nxt in maze.open_neighbours(cell):
            if nxt not in parents:
                parents[nxt] = cell
                queue.append(nxt)
    if maze.goal not in parents:
        return None
    path = [maze.goal]
    while parents[path[-1]] is not None:
        path.append(parents[path[-1]])
    return path[::-1]


def count_shortest_paths(maze: Maze) -> int:
    """Number of distinct shortest start->goal routes"""
    dist = bfs_distances(maze, maze.start)
    if maze.goal not in dist:
        return 0
    ways = {maze.start: 1}
    for cell in sorted(dist, key=dist.get):
        if cell == maze.start:
            continue
        ways[cell] = sum(ways.get(prev, 0) for prev in maze.open_neighbours(cell)
                         if dist.get(prev) == dist[cell] - 1)
    return ways[maze.goal]


def path_interior(maze: Maze) -> List[Cell]:
    path = shortest_path(maze)
    return path[1:-1] if path else []


def generate_maze(rng: np.random.Generator, grid_h: int, grid_w: int, size: int = 6,
                  density: float = 0.3, max_attempts: int = 256) -> Maze:
    """
    Sample a maze with a unique shortest route

    Args:
        rng: Random source
        grid_h, grid_w: Grid dimensions the box must fit in
        size: Side of the square box
        density: Probability that a free box cell becomes a wall
        max_attempts: Rejection-sampling bound

    Returns:
        Maze whose start and goal are at least three steps apart
    """
    if size > min(grid_h, grid_w):
        raise UnsatisfiableConstraintsError(f"Maze box {size} does not fit a {grid_h}x{grid_w} grid")
    for _ in range(max_attempts):
        top = int(rng.integers(0, grid_h - size + 1))
        left = int(rng.integers(0, grid_w - size + 1))
        cells = [(top + r, left + c) for r in range(size) for c in range(size)]
        i, j = rng.choice(len(cells), size=2, replace=False)
        start, goal = cells[int(i)], cells[int(j)]
        if abs(start[0] - goal[0]) + abs(start[1] - goal[1]) < 3:
            continue
        walls = frozenset(c for c in cells if c not in (start, goal) and rng.random() < density)
        maze = Maze((top, left, size), start, goal, walls)
        if count_shortest_paths(maze) == 1:
            return maze
    raise UnsatisfiableConstraintsError(f"No unique-path maze found in {max_attempts} attempts")
