"""Open multi-depot tour assignment over uncovered graph nodes.

Robot positions act as depots through a zero-cost virtual depot node, which
turns the open multi-start routing problem into a standard single-depot
form. Tours are built greedily by nearest neighbor and then improved with
per-tour 2-opt segment reversals. Everything here is a pure function of the
graph, map, and robot positions.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .adjacency_graph import AdjacencyGraph, NodeState
from .grid_map import Cell, SymbolicMap, grid_distances

INF = float("inf")

TWO_OPT_MAX_PASSES = 50
# A full best-improvement pass evaluates at most K*(K+1)/2 reversals, well
# under the 10*K^2 per-pass budget.


@dataclass
class AugmentedNodeSet:
    """Index layout of the routing problem: robots, then candidates, then depot."""

    robot_entries: List[Tuple[int, Cell]]  # (robot id, current cell)
    candidate_ids: List[int]  # graph node ids, ascending

    @property
    def robot_count(self) -> int:
        return len(self.robot_entries)

    @property
    def size(self) -> int:
        return len(self.robot_entries) + len(self.candidate_ids)

    @property
    def virtual_depot_index(self) -> int:
        return self.size


@dataclass
class CostMatrix:
    """Symmetric travel costs in meters, plus the virtual depot row/column.

    costs[i][i] = 0 everywhere; depot to robots is 0, depot to candidates is
    inf, and every other finite entry is a shortest collision-free path
    length between the two positions.
    """

    costs: np.ndarray  # (size+1, size+1)

    @property
    def size(self) -> int:
        return self.costs.shape[0] - 1


@dataclass
class Solution:
    robot_ids: List[int]
    tours: List[List[int]]  # per robot, graph node ids, depot and start stripped
    total_cost: float
    unassigned: List[int] = field(default_factory=list)


class CostMatrixCache:
    """Memoizes per-source distance fields across replans.

    Rows are keyed by source cell and stay valid while no new obstacle has
    been observed, so steady-state replans only recompute the moving robot
    rows. Results are identical to the uncached build.
    """

    def __init__(self):
        self._version = -1
        self._rows: Dict[Cell, np.ndarray] = {}

    def distance_rows(self, smap: SymbolicMap, cells: Sequence[Cell]) -> np.ndarray:
        if smap.obstacle_version != self._version:
            self._rows.clear()
            self._version = smap.obstacle_version
        missing = [c for c in dict.fromkeys(cells) if c not in self._rows]
        if missing:
            dist = grid_distances(smap, missing)
            for i, cell in enumerate(missing):
                self._rows[cell] = dist[i]
        return np.stack([self._rows[c] for c in cells]) if cells else np.empty((0, 0))


def candidate_nodes(graph: AdjacencyGraph) -> List[int]:
    """Uncovered, assignable node ids in ascending order."""
    return sorted(
        nid
        for nid, node in graph.nodes.items()
        if node.state != NodeState.COVERED and not node.dead
    )


def build_cost_matrix(
    graph: AdjacencyGraph,
    smap: SymbolicMap,
    robots: Sequence[Tuple[int, Cell]],
    candidates: Optional[Sequence[int]] = None,
    cache: Optional[CostMatrixCache] = None,
) -> Tuple[AugmentedNodeSet, CostMatrix]:
    """Pairwise shortest-path costs between robots and candidate centers.

    Unknown cells are optimistically traversable; unreachable pairs cost
    inf. The depot row and column implement the open-route reduction.
    """
    if not robots:
        raise ValueError("at least one robot required")
    cand = sorted(candidates) if candidates is not None else candidate_nodes(graph)
    aug = AugmentedNodeSet(robot_entries=list(robots), candidate_ids=cand)
    positions = [cell for _, cell in robots] + [graph.nodes[n].center for n in cand]

    if cache is not None:
        rows = cache.distance_rows(smap, positions)
    else:
        rows = grid_distances(smap, positions)
    tiling = smap.tiling
    col_idx = [tiling.index(p) for p in positions]
    w = rows[:, col_idx] * tiling.cell_size
    w = np.minimum(w, w.T)  # the metric is symmetric; guard float ordering
    np.fill_diagonal(w, 0.0)

    n = aug.size
    full = np.full((n + 1, n + 1), INF)
    full[:n, :n] = w
    full[n, n] = 0.0
    m = aug.robot_count
    full[n, :m] = 0.0
    full[:m, n] = 0.0
    return aug, CostMatrix(costs=full)


def format_cost_matrix(cm: CostMatrix) -> str:
    """Whitespace dump with `inf` sentinels, for debugging fixtures."""
    lines = []
    for row in cm.costs:
        lines.append(" ".join("inf" if not np.isfinite(v) else "%.6f" % v for v in row))
    return "\n".join(lines) + "\n"


def _nearest_neighbor_tours(
    w: np.ndarray, robot_count: int, candidate_count: int
) -> Tuple[List[List[int]], List[int]]:
    """Greedy global-minimum assignment of candidates to tour tails.

    Ties prefer the lower candidate index, then the lower robot index.
    Candidates unreachable from every tail are left unassigned.
    """
    tours: List[List[int]] = [[] for _ in range(robot_count)]
    tails = list(range(robot_count))
    cand = np.arange(robot_count, robot_count + candidate_count)
    while cand.size:
        sub = w[np.ix_(tails, cand)]
        flat = sub.T.ravel()  # candidate-major so argmin ties break as specified
        k = int(np.argmin(flat))
        if not np.isfinite(flat[k]):
            break
        ci, ri = divmod(k, robot_count)
        node = int(cand[ci])
        tours[ri].append(node)
        tails[ri] = node
        cand = np.delete(cand, ci)
    return tours, [int(x) for x in cand]


def path_sequence_cost(seq: Sequence[int], w: np.ndarray) -> float:
    total = 0.0
    for a, b in zip(seq, seq[1:]):
        total += w[a, b]
    return total


def two_opt_path(
    seq: Sequence[int],
    w: np.ndarray,
    fixed_tail: bool = False,
    max_passes: int = TWO_OPT_MAX_PASSES,
) -> Tuple[List[int], List[float]]:
    """Improve an open path by 2-opt segment reversals.

    seq[0] is pinned (the start). With fixed_tail the last element is pinned
    too; otherwise the path may end anywhere, which matches the zero-cost
    return leg of the open-route reduction. Each pass applies the best
    improving reversal; returns the path and its cost history, which is
    non-increasing.
    """
    order = list(seq)
    n = len(order)
    history = [path_sequence_cost(order, w)]
    last = n - 2 if fixed_tail else n - 1
    if n < 3 or last < 1:
        return order, history
    span = np.arange(1, last + 1)
    for _ in range(max_passes):
        arr = np.asarray(order)
        d = w[np.ix_(arr, arr)]
        head_leg = d[np.arange(n - 1), np.arange(1, n)]  # leg after position k
        # reversal of order[i..j] replaces legs (i-1, i) and (j, j+1); at the
        # open end (j == n-1) the trailing leg does not exist
        after = np.zeros(n)
        after[: n - 1] = head_leg
        gain = head_leg[span - 1][:, None] + after[span][None, :]
        gain = gain - d[np.ix_(span - 1, span)]
        nxt = np.minimum(span + 1, n - 1)
        gain = gain - np.where((span == n - 1)[None, :], 0.0, d[np.ix_(span, nxt)])
        gain = np.where(span[None, :] > span[:, None], gain, -np.inf)
        k = int(np.argmax(gain))
        i, j = divmod(k, len(span))
        if gain[i, j] <= 1e-9:
            break
        i, j = span[i], span[j]
        order[i : j + 1] = reversed(order[i : j + 1])
        history.append(path_sequence_cost(order, w))
    return order, history


def solve_open_mdvrp(aug: AugmentedNodeSet, cm: CostMatrix) -> Solution:
    """Two-stage heuristic: nearest-neighbor construction, then 2-opt.

    Returned tours are open (no return leg) and stripped of the depot and
    the robot's own position. Together they cover every reachable candidate
    exactly once; unreachable candidates are reported in `unassigned`.
    """
    w = cm.costs
    m = aug.robot_count
    tours_idx, unassigned_idx = _nearest_neighbor_tours(w, m, len(aug.candidate_ids))
    total = 0.0
    final: List[List[int]] = []
    for ri, tour in enumerate(tours_idx):
        seq, history = two_opt_path([ri] + tour, w, fixed_tail=False)
        final.append(seq[1:])
        total += history[-1]
    tours_ids = [[aug.candidate_ids[i - m] for i in tour] for tour in final]
    unassigned_ids = sorted(aug.candidate_ids[i - m] for i in unassigned_idx)
    return Solution(
        robot_ids=[rid for rid, _ in aug.robot_entries],
        tours=tours_ids,
        total_cost=total,
        unassigned=unassigned_ids,
    )


def next_target(solution: Solution, robot_id: int) -> Optional[int]:
    """Head of the robot's tour, or None when the tour is empty."""
    try:
        idx = solution.robot_ids.index(robot_id)
    except ValueError:
        raise ValueError("unknown robot id %r" % (robot_id,)) from None
    tour = solution.tours[idx]
    return tour[0] if tour else None
