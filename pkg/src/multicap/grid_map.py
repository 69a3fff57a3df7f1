"""Uniform grid tiling, symbolic coverage map, and grid search primitives.

The symbolic map carries the per-cell classification that all planners
consume (unknown / obstacle / uncovered / covered) alongside a hidden
ground-truth occupancy layer that only the simulator may read.
"""

import heapq
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _sparse_dijkstra

Cell = Tuple[int, int]  # (row, col)

SQRT2 = math.sqrt(2.0)

# Move set for 8-connected motion, cardinals first. The order is part of the
# deterministic tie-breaking of every search in this module.
CARDINAL_OFFSETS = ((-1, 0), (1, 0), (0, -1), (0, 1))
DIAGONAL_OFFSETS = ((-1, -1), (-1, 1), (1, -1), (1, 1))


class MapFormatError(ValueError):
    """Malformed scenario map text."""


class CellLabel(IntEnum):
    """Per-cell classification of the symbolic map.

    Transitions are monotone: UNKNOWN -> OBSTACLE is terminal, and
    UNKNOWN -> UNCOVERED_FREE -> COVERED_FREE with COVERED_FREE terminal.
    No other transition ever occurs.
    """

    UNKNOWN = 0
    OBSTACLE = 1
    UNCOVERED_FREE = 2
    COVERED_FREE = 3


@dataclass(frozen=True)
class Tiling:
    """Uniform square tiling of the workspace, indexed row-major.

    World coordinates put cell (r, c)'s center at
    ((c + 0.5) * cell_size, (r + 0.5) * cell_size), x right, y down.
    """

    width: int
    height: int
    cell_size: float = 1.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("tiling must be at least 1x1 cells")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")

    @property
    def cell_count(self) -> int:
        return self.width * self.height

    def index(self, cell: Cell) -> int:
        return cell[0] * self.width + cell[1]

    def cell_at(self, index: int) -> Cell:
        return divmod(index, self.width)

    def in_bounds(self, cell: Cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    def world_xy(self, cell: Cell) -> Tuple[float, float]:
        r, c = cell
        return ((c + 0.5) * self.cell_size, (r + 0.5) * self.cell_size)


@dataclass
class ComponentLabeling:
    """Result of 4-connected component analysis over a cell region."""

    region: Set[Cell]
    components: List[Set[Cell]]

    @property
    def count(self) -> int:
        return len(self.components)


class SymbolicMap:
    """Evolving symbolic map over a tiling plus hidden ground truth.

    Attributes:
        tiling: grid geometry.
        labels: (H, W) int8 array of CellLabel values.
        ground_truth: (H, W) bool array, True where the real cell is an
            obstacle. Planners must never read this; the simulator feeds it
            back through observations only.
        occupancy_threshold: probability above which probabilistic evidence
            classifies a cell as an obstacle.
        obstacle_version: bumped whenever a cell becomes OBSTACLE; used to
            invalidate cached traversability structures.
    """

    def __init__(self, tiling: Tiling, ground_truth, occupancy_threshold: float = 0.2):
        gt = np.asarray(ground_truth, dtype=bool)
        if gt.size != tiling.cell_count:
            raise ValueError(
                "ground truth has %d entries, tiling needs %d" % (gt.size, tiling.cell_count)
            )
        self.tiling = tiling
        self.ground_truth = gt.reshape(tiling.height, tiling.width)
        self.labels = np.full((tiling.height, tiling.width), int(CellLabel.UNKNOWN), dtype=np.int8)
        self.occupancy_threshold = float(occupancy_threshold)
        self.obstacle_version = 0
        self._csr_cache: Optional[Tuple[int, csr_matrix]] = None

    # -- label access -----------------------------------------------------

    def label(self, cell: Cell) -> CellLabel:
        return CellLabel(self.labels[cell[0], cell[1]])

    def is_obstacle(self, cell: Cell) -> bool:
        return self.labels[cell[0], cell[1]] == CellLabel.OBSTACLE

    def covered_count(self) -> int:
        return int(np.count_nonzero(self.labels == CellLabel.COVERED_FREE))

    def uncovered_cells(self, cells: Iterable[Cell]) -> List[Cell]:
        lab = self.labels
        return [c for c in cells if lab[c[0], c[1]] == CellLabel.UNCOVERED_FREE]

    # -- mutation ---------------------------------------------------------

    def apply_observation(self, observed: Iterable[Tuple[Cell, object]]) -> Set[Cell]:
        """Classify unknown cells from sensor evidence.

        `observed` pairs each cell with either a bool (occupied yes/no) or a
        float occupancy probability compared against the threshold. Cells
        that already left UNKNOWN are untouched, which makes repeated
        observation a no-op. Returns exactly the cells whose label changed.
        """
        labels = self.labels
        h, w = labels.shape
        changed: Set[Cell] = set()
        new_obstacle = False
        for cell, evidence in observed:
            r, c = cell
            if not (0 <= r < h and 0 <= c < w):
                raise ValueError("observed cell %s out of bounds" % (cell,))
            if labels[r, c] != CellLabel.UNKNOWN:
                continue
            if isinstance(evidence, bool):
                occupied = evidence
            else:
                occupied = float(evidence) > self.occupancy_threshold
            if occupied:
                labels[r, c] = CellLabel.OBSTACLE
                new_obstacle = True
            else:
                labels[r, c] = CellLabel.UNCOVERED_FREE
            changed.add((r, c))
        if new_obstacle:
            self.obstacle_version += 1
        return changed

    def mark_covered(self, cell: Cell) -> None:
        """Record coverage of an uncovered free cell.

        Covering anything else breaks the planner/simulator contract and
        raises immediately.
        """
        r, c = cell
        current = CellLabel(self.labels[r, c])
        if current != CellLabel.UNCOVERED_FREE:
            raise ValueError("cannot cover cell %s labeled %s" % (cell, current.name))
        self.labels[r, c] = CellLabel.COVERED_FREE

    # -- traversability ---------------------------------------------------

    def traversal_csr(self) -> csr_matrix:
        """Sparse 8-connected motion graph over non-obstacle cells.

        Cached per obstacle_version; only new obstacles change it, since
        unknown cells are optimistically traversable.
        """
        if self._csr_cache is not None and self._csr_cache[0] == self.obstacle_version:
            return self._csr_cache[1]
        mask = self.labels != CellLabel.OBSTACLE
        graph = legal_move_csr(mask)
        self._csr_cache = (self.obstacle_version, graph)
        return graph


def default_traversable(label: CellLabel) -> bool:
    return label != CellLabel.OBSTACLE


def legal_move_csr(mask: np.ndarray) -> csr_matrix:
    """Build the legal-move graph for a boolean traversability mask.

    Cardinal steps cost 1, diagonal steps cost sqrt(2). A diagonal move is
    only legal when both flanking cardinal cells are traversable, so corners
    are never cut. Node ids are row-major cell indices.
    """
    h, w = mask.shape
    idx = np.arange(h * w, dtype=np.int32).reshape(h, w)
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    data: List[np.ndarray] = []

    def add(a: np.ndarray, b: np.ndarray, weight: float) -> None:
        rows.append(a)
        cols.append(b)
        data.append(np.full(a.shape, weight))
        rows.append(b)
        cols.append(a)
        data.append(np.full(a.shape, weight))

    if w > 1:
        m = mask[:, :-1] & mask[:, 1:]
        add(idx[:, :-1][m], idx[:, 1:][m], 1.0)
    if h > 1:
        m = mask[:-1, :] & mask[1:, :]
        add(idx[:-1, :][m], idx[1:, :][m], 1.0)
    if h > 1 and w > 1:
        # Both diagonals of a 2x2 square are legal iff all four cells are
        # traversable (the flanks of one diagonal are the other's endpoints).
        m = mask[:-1, :-1] & mask[1:, 1:] & mask[:-1, 1:] & mask[1:, :-1]
        add(idx[:-1, :-1][m], idx[1:, 1:][m], SQRT2)
        add(idx[:-1, 1:][m], idx[1:, :-1][m], SQRT2)

    n = h * w
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        d = np.concatenate(data)
    else:
        r = np.empty(0, dtype=np.int32)
        c = np.empty(0, dtype=np.int32)
        d = np.empty(0)
    return csr_matrix((d, (r, c)), shape=(n, n))


def grid_distances(smap: SymbolicMap, sources: Sequence[Cell]) -> np.ndarray:
    """Shortest-path distance (in cell units) from each source to every cell.

    Unknown and free cells are traversable, obstacles are not. Unreachable
    cells get inf. Returns an array of shape (len(sources), W*H).
    """
    graph = smap.traversal_csr()
    if not sources:
        return np.empty((0, smap.tiling.cell_count))
    indices = [smap.tiling.index(c) for c in sources]
    dist = _sparse_dijkstra(graph, directed=True, indices=indices)
    return np.atleast_2d(dist)


def gt_reachable_free(smap: SymbolicMap, starts: Sequence[Cell]) -> np.ndarray:
    """Ground-truth free cells reachable from the start cells.

    Uses the same legal-move model as the planners but on the real obstacle
    layer. Simulator-side utility for termination and metric denominators.
    """
    mask = ~smap.ground_truth
    graph = legal_move_csr(mask)
    indices = [smap.tiling.index(c) for c in starts]
    dist = np.atleast_2d(_sparse_dijkstra(graph, directed=True, indices=indices))
    reachable = np.isfinite(dist).any(axis=0).reshape(mask.shape)
    return reachable & mask


def connected_components(smap: SymbolicMap, region: Iterable[Cell]) -> ComponentLabeling:
    """Partition a region into maximal 4-connected non-obstacle components.

    Unknown cells count as non-obstacle; only cells labeled OBSTACLE are
    excluded. An empty region yields zero components.
    """
    labels = smap.labels
    region_set = set(region)
    remaining = {c for c in region_set if labels[c[0], c[1]] != CellLabel.OBSTACLE}
    components: List[Set[Cell]] = []
    for seed in sorted(region_set):
        if seed not in remaining:
            continue
        comp: Set[Cell] = set()
        stack = [seed]
        remaining.discard(seed)
        while stack:
            r, c = stack.pop()
            comp.add((r, c))
            for dr, dc in CARDINAL_OFFSETS:
                nb = (r + dr, c + dc)
                if nb in remaining:
                    remaining.discard(nb)
                    stack.append(nb)
        components.append(comp)
    return ComponentLabeling(region=region_set, components=components)


def move_allowed(
    smap: SymbolicMap,
    src: Cell,
    dst: Cell,
    traversable: Callable[[CellLabel], bool] = default_traversable,
) -> bool:
    """Whether a single 8-connected step from src to dst is legal."""
    dr = dst[0] - src[0]
    dc = dst[1] - src[1]
    if max(abs(dr), abs(dc)) != 1:
        return False
    if not smap.tiling.in_bounds(dst) or not traversable(smap.label(dst)):
        return False
    if dr != 0 and dc != 0:
        if not traversable(smap.label((src[0] + dr, src[1]))):
            return False
        if not traversable(smap.label((src[0], src[1] + dc))):
            return False
    return True


def shortest_cell_path(
    smap: SymbolicMap,
    start: Cell,
    goal: Cell,
    traversable: Callable[[CellLabel], bool] = default_traversable,
    blocked: FrozenSet[Cell] = frozenset(),
) -> Optional[List[Cell]]:
    """A* path between two cells under 8-connected legal motion.

    Cardinal steps cost 1, diagonals sqrt(2), and diagonal moves are refused
    when either flanking cardinal cell fails the traversable predicate.
    `blocked` adds temporary forbidden cells on top of the predicate.
    Returns the cell sequence including both endpoints, or None when
    unreachable.
    """
    tiling = smap.tiling
    if not tiling.in_bounds(start) or not tiling.in_bounds(goal):
        raise ValueError("path endpoints must be in bounds")
    if start == goal:
        return [start]
    labels = smap.labels
    if not traversable(CellLabel(labels[goal[0], goal[1]])) or goal in blocked:
        return None
    if not traversable(CellLabel(labels[start[0], start[1]])):
        return None

    def heuristic(cell: Cell) -> float:
        dr = abs(cell[0] - goal[0])
        dc = abs(cell[1] - goal[1])
        return max(dr, dc) + (SQRT2 - 1.0) * min(dr, dc)

    h, w = labels.shape
    g_score: Dict[Cell, float] = {start: 0.0}
    parent: Dict[Cell, Cell] = {}
    open_heap: List[Tuple[float, float, int, int]] = [(heuristic(start), 0.0, start[0], start[1])]
    closed: Set[Cell] = set()
    while open_heap:
        f, g, r, c = heapq.heappop(open_heap)
        cur = (r, c)
        if cur in closed:
            continue
        closed.add(cur)
        if cur == goal:
            path = [cur]
            while cur in parent:
                cur = parent[cur]
                path.append(cur)
            path.reverse()
            return path
        for dr, dc in CARDINAL_OFFSETS:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h and 0 <= nc < w):
                continue
            nb = (nr, nc)
            if nb in closed or nb in blocked:
                continue
            if not traversable(CellLabel(labels[nr, nc])):
                continue
            ng = g + 1.0
            if ng < g_score.get(nb, math.inf):
                g_score[nb] = ng
                parent[nb] = cur
                heapq.heappush(open_heap, (ng + heuristic(nb), ng, nr, nc))
        for dr, dc in DIAGONAL_OFFSETS:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h and 0 <= nc < w):
                continue
            nb = (nr, nc)
            if nb in closed or nb in blocked:
                continue
            if not traversable(CellLabel(labels[nr, nc])):
                continue
            # corner rule: both flanking cardinal cells must be traversable
            if not traversable(CellLabel(labels[r + dr, c])):
                continue
            if not traversable(CellLabel(labels[r, c + dc])):
                continue
            ng = g + SQRT2
            if ng < g_score.get(nb, math.inf):
                g_score[nb] = ng
                parent[nb] = cur
                heapq.heappush(open_heap, (ng + heuristic(nb), ng, nr, nc))
    return None


def path_cost(path: Sequence[Cell], cell_size: float = 1.0) -> float:
    """Metric length of a cell path (1 per cardinal step, sqrt(2) diagonal)."""
    total = 0.0
    for a, b in zip(path, path[1:]):
        if a[0] != b[0] and a[1] != b[1]:
            total += SQRT2
        else:
            total += 1.0
    return total * cell_size


# -- scenario map text format ---------------------------------------------


def parse_map_text(text: str) -> Tuple[Tiling, np.ndarray]:
    """Parse scenario map text into a tiling and ground-truth obstacle array.

    Format: first line `W H CELL_SIZE_M`, then H rows of W characters where
    `#` is an obstacle and `.` is free. A trailing newline is optional.
    """
    lines = text.splitlines()
    if not lines:
        raise MapFormatError("empty map text")
    head = lines[0].split()
    if len(head) != 3:
        raise MapFormatError("header must be 'W H CELL_SIZE_M'")
    try:
        width, height = int(head[0]), int(head[1])
        cell_size = float(head[2])
    except ValueError as exc:
        raise MapFormatError("bad header values: %s" % lines[0]) from exc
    rows = lines[1:]
    if len(rows) != height:
        raise MapFormatError("expected %d rows, found %d" % (height, len(rows)))
    gt = np.zeros((height, width), dtype=bool)
    for r, row in enumerate(rows):
        if len(row) != width:
            raise MapFormatError("row %d has %d cells, expected %d" % (r, len(row), width))
        for c, ch in enumerate(row):
            if ch == "#":
                gt[r, c] = True
            elif ch != ".":
                raise MapFormatError("bad character %r at row %d col %d" % (ch, r, c))
    tiling = Tiling(width=width, height=height, cell_size=cell_size)
    return tiling, gt


def format_map_text(tiling: Tiling, ground_truth: np.ndarray) -> str:
    gt = np.asarray(ground_truth, dtype=bool).reshape(tiling.height, tiling.width)
    lines = ["%d %d %g" % (tiling.width, tiling.height, tiling.cell_size)]
    for r in range(tiling.height):
        lines.append("".join("#" if gt[r, c] else "." for c in range(tiling.width)))
    return "\n".join(lines) + "\n"


def load_map_file(path: str) -> Tuple[Tiling, np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_map_text(fh.read())


def new_symbolic_map(tiling: Tiling, ground_truth, occupancy_threshold: float = 0.2) -> SymbolicMap:
    """Fresh fully-unknown symbolic map over the given ground truth."""
    return SymbolicMap(tiling, ground_truth, occupancy_threshold=occupancy_threshold)
