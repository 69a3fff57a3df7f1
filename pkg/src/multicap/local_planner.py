"""Per-robot coverage inside a target subarea.

Partially observed subareas get a back-and-forth sweep driven by a fixed
direction priority; fully observed ones get a shortest open coverage path
from a small TSP whose endpoints are pinned through a dummy node.
"""

import heapq
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .adjacency_graph import AdjacencyGraph
from .global_planner import CostMatrix, two_opt_path
from .grid_map import (
    SQRT2,
    Cell,
    CellLabel,
    SymbolicMap,
    grid_distances,
    shortest_cell_path,
)

# Neighbor scan order for the sweep: the four cardinals as Left, Up, Down,
# Right in the global frame (rows grow downward), then the diagonals
# Up-Left, Down-Left, Up-Right, Down-Right. Scanning left-side directions
# first is what produces the left-to-right lawnmower progression.
SWEEP_PRIORITY = (
    (0, -1),
    (-1, 0),
    (1, 0),
    (0, 1),
    (-1, -1),
    (1, -1),
    (-1, 1),
    (1, 1),
)


class PlanningError(RuntimeError):
    """A coverage plan cannot be built (connectivity contract violated)."""


@dataclass(frozen=True)
class LocalStep:
    """One sweep decision: cover a neighbor cell, move a step, or finish."""

    kind: str  # "cover" | "move" | "done"
    cell: Optional[Cell] = None

    @staticmethod
    def cover(cell: Cell) -> "LocalStep":
        return LocalStep("cover", cell)

    @staticmethod
    def move(cell: Cell) -> "LocalStep":
        return LocalStep("move", cell)

    @staticmethod
    def done() -> "LocalStep":
        return LocalStep("done")


def _step_legal(labels: np.ndarray, src: Cell, dst: Cell) -> bool:
    dr, dc = dst[0] - src[0], dst[1] - src[1]
    if dr != 0 and dc != 0:
        if labels[src[0] + dr, src[1]] == CellLabel.OBSTACLE:
            return False
        if labels[src[0], src[1] + dc] == CellLabel.OBSTACLE:
            return False
    return labels[dst[0], dst[1]] != CellLabel.OBSTACLE


def sweep_cover_target(smap: SymbolicMap, subarea: Set[Cell], robot: Cell) -> Optional[Cell]:
    """Highest-priority uncovered neighbor of the robot inside the subarea."""
    labels = smap.labels
    h, w = labels.shape
    for dr, dc in SWEEP_PRIORITY:
        nr, nc = robot[0] + dr, robot[1] + dc
        if not (0 <= nr < h and 0 <= nc < w):
            continue
        cell = (nr, nc)
        if cell not in subarea or labels[nr, nc] != CellLabel.UNCOVERED_FREE:
            continue
        if _step_legal(labels, robot, cell):
            return cell
    return None


def nearest_cell_path(
    smap: SymbolicMap,
    start: Cell,
    goals: Set[Cell],
    blocked: FrozenSet[Cell] = frozenset(),
) -> Optional[List[Cell]]:
    """Shortest legal path from start to the nearest goal cell.

    Dijkstra over non-obstacle cells; distance ties between goals resolve by
    visiting order (distance, row, col), so the result is deterministic.
    Returns None when no goal is reachable.
    """
    if not goals:
        return None
    if start in goals:
        return [start]
    labels = smap.labels
    h, w = labels.shape
    dist: Dict[Cell, float] = {start: 0.0}
    parent: Dict[Cell, Cell] = {}
    heap: List[Tuple[float, int, int]] = [(0.0, start[0], start[1])]
    closed: Set[Cell] = set()
    while heap:
        g, r, c = heapq.heappop(heap)
        cur = (r, c)
        if cur in closed:
            continue
        closed.add(cur)
        if cur in goals:
            path = [cur]
            while cur in parent:
                cur = parent[cur]
                path.append(cur)
            path.reverse()
            return path
        for dr, dc in SWEEP_PRIORITY:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h and 0 <= nc < w):
                continue
            nb = (nr, nc)
            if nb in closed or nb in blocked:
                continue
            if labels[nr, nc] == CellLabel.OBSTACLE:
                continue
            if dr != 0 and dc != 0:
                if labels[r + dr, c] == CellLabel.OBSTACLE:
                    continue
                if labels[r, c + dc] == CellLabel.OBSTACLE:
                    continue
            ng = g + (SQRT2 if dr != 0 and dc != 0 else 1.0)
            if ng < dist.get(nb, float("inf")):
                dist[nb] = ng
                parent[nb] = cur
                heapq.heappush(heap, (ng, nr, nc))
    return None


def sweep_step(smap: SymbolicMap, subarea: Set[Cell], robot: Cell) -> LocalStep:
    """One back-and-forth sweep decision for an exploring subarea.

    Covers the best uncovered 3x3 neighbor if one exists, otherwise moves
    one step toward the nearest uncovered cell of the subarea, otherwise
    reports done. Pure and deterministic in its inputs.
    """
    cover = sweep_cover_target(smap, subarea, robot)
    if cover is not None:
        return LocalStep.cover(cover)
    labels = smap.labels
    goals = {c for c in subarea if labels[c[0], c[1]] == CellLabel.UNCOVERED_FREE}
    path = nearest_cell_path(smap, robot, goals)
    if path is None or len(path) < 2:
        return LocalStep.done()
    return LocalStep.move(path[1])


@dataclass
class TspInstance:
    """Coverage TSP over the uncovered cells of a subarea.

    Index layout in `costs`: start first, then interior visit cells, then
    the exit (when given), then the dummy node last. The dummy has zero cost
    to the start and exit and infinite cost elsewhere, which pins the open
    path's endpoints; with no exit it has zero cost to every cell so the
    endpoint is free.
    """

    cells: List[Cell]  # all visit cells in index order (start first)
    start: Cell
    exit: Optional[Cell]
    costs: np.ndarray  # (n+1, n+1) including the dummy row/column

    @property
    def dummy_index(self) -> int:
        return len(self.cells)


def build_tsp_instance(
    smap: SymbolicMap,
    subarea: Set[Cell],
    start: Cell,
    exit_cell: Optional[Cell] = None,
) -> TspInstance:
    labels = smap.labels
    uncovered = sorted(c for c in subarea if labels[c[0], c[1]] == CellLabel.UNCOVERED_FREE)
    interior = [c for c in uncovered if c != start and c != exit_cell]
    nodes: List[Cell] = [start] + interior
    if exit_cell is not None:
        nodes.append(exit_cell)
    dist = grid_distances(smap, nodes) * smap.tiling.cell_size
    tiling = smap.tiling
    col = [tiling.index(c) for c in nodes]
    w = dist[:, col]
    w = np.minimum(w, w.T)
    np.fill_diagonal(w, 0.0)
    if not np.isfinite(w).all():
        raise PlanningError(
            "uncovered cell unreachable from %s inside subarea plan" % (start,)
        )
    n = len(nodes)
    full = np.full((n + 1, n + 1), float("inf"))
    full[:n, :n] = w
    full[n, n] = 0.0
    if exit_cell is not None:
        full[n, 0] = full[0, n] = 0.0
        full[n, n - 1] = full[n - 1, n] = 0.0
    else:
        full[n, :n] = 0.0
        full[:n, n] = 0.0
    return TspInstance(cells=nodes, start=start, exit=exit_cell, costs=full)


def plan_tsp_coverage(
    smap: SymbolicMap,
    subarea: Set[Cell],
    start: Cell,
    exit_cell: Optional[Cell] = None,
) -> List[Cell]:
    """Cell-by-cell coverage path over all uncovered cells of the subarea.

    The visit order starts at the robot cell, ends at the exit when one is
    given, and is built by nearest-neighbor construction plus 2-opt on
    shortest-path costs. Consecutive visits are expanded through the grid,
    so the result is directly executable one cell per tick.
    """
    inst = build_tsp_instance(smap, subarea, start, exit_cell)
    n = len(inst.cells)
    w = inst.costs
    fixed_tail = inst.exit is not None
    last = n - 1 if fixed_tail else None

    # nearest-neighbor order over the interior; the dummy closes the loop at
    # zero cost so it never influences construction
    pool = list(range(1, n - 1 if fixed_tail else n))
    order = [0]
    cur = 0
    while pool:
        best = min(pool, key=lambda j: (w[cur, j], j))
        order.append(best)
        pool.remove(best)
        cur = best
    if fixed_tail:
        order.append(last)
    order, _ = two_opt_path(order, w, fixed_tail=fixed_tail)

    visits = [inst.cells[i] for i in order]
    path: List[Cell] = [visits[0]]
    for a, b in zip(visits, visits[1:]):
        leg = shortest_cell_path(smap, a, b)
        if leg is None:
            raise PlanningError("no path between planned visits %s and %s" % (a, b))
        path.extend(leg[1:])
    return path


def select_exit_cell(
    graph: AdjacencyGraph,
    smap: SymbolicMap,
    current_id: int,
    next_id: Optional[int],
    cost_matrix: Optional[CostMatrix] = None,
) -> Optional[Cell]:
    """Border cell of the current subarea where the transition path leaves it.

    Walks the shortest center-to-center path toward the next tour node and
    returns the last path cell inside the current subarea that touches the
    next subarea (8-adjacency). None when the tour has no next node or the
    subareas do not border each other.
    """
    if next_id is None or next_id not in graph.nodes or current_id not in graph.nodes:
        return None
    cur = graph.nodes[current_id]
    nxt = graph.nodes[next_id]
    path = shortest_cell_path(smap, cur.center, nxt.center)
    if path is None:
        return None
    next_cells = nxt.cells
    best: Optional[Cell] = None
    for cell in path:
        if cell not in cur.cells:
            continue
        r, c = cell
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                if (r + dr, c + dc) in next_cells:
                    best = cell
                    break
            else:
                continue
            break
    return best
