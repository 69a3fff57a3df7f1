"""Deterministic discrete-time multi-robot coverage simulator.

Each tick runs: sense, update the symbolic map, refine the graph, replan
tours when events demand it, step every robot one cell through its local
plan, resolve motion conflicts by robot-id priority, and record metrics.
The loop ends at complete coverage of the reachable free space, when no
assignable work remains, or at the step budget.
"""

import json
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .adjacency_graph import (
    AdjacencyGraph,
    NodeState,
    initialize_graph,
    refine_graph,
    refresh_states,
)
from .global_planner import (
    CostMatrixCache,
    build_cost_matrix,
    candidate_nodes,
    solve_open_mdvrp,
)
from .grid_map import (
    SQRT2,
    Cell,
    CellLabel,
    SymbolicMap,
    Tiling,
    grid_distances,
    gt_reachable_free,
    parse_map_text,
    shortest_cell_path,
)
from .local_planner import (
    PlanningError,
    nearest_cell_path,
    plan_tsp_coverage,
    select_exit_cell,
    sweep_cover_target,
)


class PlannerVariant(Enum):
    FULL = "full"
    NO_CA = "no_ca"  # static uniform subareas, proximity-only adjacency
    NO_GT = "no_gt"  # nearest uncovered subarea instead of global tours

    @staticmethod
    def parse(value: str) -> "PlannerVariant":
        for variant in PlannerVariant:
            if variant.value == value:
                return variant
        raise ValueError("unknown variant %r (full | no_ca | no_gt)" % value)


# -- sensing ----------------------------------------------------------------


def _supercover_between(dr: int, dc: int) -> Tuple[Cell, ...]:
    """Cells strictly between (0,0) and (dr,dc) touched by the center ray.

    Exact integer supercover walk; when the ray crosses a cell corner both
    side cells are included, so diagonal cracks never leak visibility.
    """
    cells: List[Cell] = []
    nr, nc = abs(dr), abs(dc)
    sr = 1 if dr > 0 else -1
    sc = 1 if dc > 0 else -1
    r = c = 0
    ir = ic = 0
    while ir < nr or ic < nc:
        d = (1 + 2 * ic) * nr - (1 + 2 * ir) * nc
        if d == 0:
            cells.append((r + sr, c))
            cells.append((r, c + sc))
            r += sr
            c += sc
            ir += 1
            ic += 1
        elif d < 0:
            c += sc
            ic += 1
        else:
            r += sr
            ir += 1
        cells.append((r, c))
    return tuple(cells[:-1]) if cells else ()


_RAY_CACHE: Dict[float, Tuple[Tuple[Cell, Tuple[Cell, ...]], ...]] = {}


def _ray_pattern(radius_cells: float) -> Tuple[Tuple[Cell, Tuple[Cell, ...]], ...]:
    key = round(radius_cells, 9)
    cached = _RAY_CACHE.get(key)
    if cached is not None:
        return cached
    reach = int(math.floor(radius_cells + 1e-9))
    entries = []
    limit = radius_cells * radius_cells + 1e-9
    for dr in range(-reach, reach + 1):
        for dc in range(-reach, reach + 1):
            if dr * dr + dc * dc <= limit:
                entries.append(((dr, dc), _supercover_between(dr, dc)))
    pattern = tuple(entries)
    _RAY_CACHE[key] = pattern
    return pattern


@dataclass
class SensorModel:
    """Line-of-sight range sensor over the ground truth.

    Reveals every cell whose center lies within range of the robot's cell
    center and whose connecting ray crosses no ground-truth obstacle cell.
    """

    range_m: float = 12.0

    def visible_cells(self, smap: SymbolicMap, origin: Cell) -> List[Tuple[Cell, bool]]:
        gt = smap.ground_truth
        labels = smap.labels
        h, w = gt.shape
        r0, c0 = origin
        out: List[Tuple[Cell, bool]] = []
        for (dr, dc), between in _ray_pattern(self.range_m / smap.tiling.cell_size):
            r, c = r0 + dr, c0 + dc
            if not (0 <= r < h and 0 <= c < w):
                continue
            if labels[r, c] != CellLabel.UNKNOWN:
                continue  # observation of classified cells is a no-op anyway
            blocked = False
            for br, bc in between:
                if gt[r0 + br, c0 + bc]:
                    blocked = True
                    break
            if not blocked:
                out.append(((r, c), bool(gt[r, c])))
        return out


# -- configuration and state -------------------------------------------------


@dataclass
class SimConfig:
    robots: int = 1
    start_cells: Optional[List[Cell]] = None  # seeded-random free cells when None
    sensor_range_m: float = 12.0
    subarea_size_m: float = 6.0
    cell_size_m: Optional[float] = None  # overrides the map header when set
    variant: PlannerVariant = PlannerVariant.FULL
    seed: int = 0
    step_budget: Optional[int] = None  # default 50 * |cells|
    occupancy_threshold: float = 0.2
    noise_flip_prob: float = 0.0
    record_trace: bool = True

    @staticmethod
    def from_text(text: str) -> "SimConfig":
        """Parse a `key = value` config file."""
        cfg = SimConfig()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError("config line %d is not 'key = value': %r" % (lineno, raw))
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "robots":
                cfg.robots = int(value)
            elif key == "start_cells":
                cfg.start_cells = parse_start_cells(value)
            elif key == "sensor_range_m":
                cfg.sensor_range_m = float(value)
            elif key == "subarea_size_m":
                cfg.subarea_size_m = float(value)
            elif key == "cell_size_m":
                cfg.cell_size_m = float(value)
            elif key == "variant":
                cfg.variant = PlannerVariant.parse(value)
            elif key == "seed":
                cfg.seed = int(value)
            elif key == "step_budget":
                cfg.step_budget = int(value)
            elif key == "occupancy_threshold":
                cfg.occupancy_threshold = float(value)
            elif key == "noise_flip_prob":
                cfg.noise_flip_prob = float(value)
            else:
                raise ValueError("unknown config key %r" % key)
        return cfg


def parse_start_cells(text: str) -> List[Cell]:
    """Parse `r,c;r,c;...` into cells."""
    cells = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        r, c = part.split(",")
        cells.append((int(r), int(c)))
    if not cells:
        raise ValueError("no start cells in %r" % text)
    return cells


@dataclass
class RobotState:
    id: int
    cell: Cell
    target: Optional[int] = None
    tour: List[int] = field(default_factory=list)
    local_plan: List[Cell] = field(default_factory=list)
    plan_kind: Optional[str] = None  # "sweep" | "tsp"
    odometer: float = 0.0
    done: bool = False
    wait_count: int = 0
    blocked_cell: Optional[Cell] = None
    prev_cell: Optional[Cell] = None
    cells_covered: int = 0
    case2_record: Optional[dict] = None


@dataclass
class RunMetrics:
    complete: bool
    covered_fraction: float
    coverage_time_ticks: int
    total_path_length_m: float
    overlap_ratio: float
    ticks: int
    robots: int
    unreachable_free_cells: int
    per_robot: List[dict]

    def to_dict(self) -> dict:
        return {
            "complete": self.complete,
            "covered_fraction": self.covered_fraction,
            "coverage_time_ticks": self.coverage_time_ticks,
            "total_path_length_m": self.total_path_length_m,
            "overlap_ratio": self.overlap_ratio,
            "ticks": self.ticks,
            "robots": self.robots,
            "unreachable_free_cells": self.unreachable_free_cells,
            "per_robot": self.per_robot,
        }


@dataclass
class TickEvents:
    initial: bool = False
    completed_targets: List[int] = field(default_factory=list)
    lost_targets: List[int] = field(default_factory=list)
    tour_splits: bool = False
    reachability_gained: bool = False


def replan_policy(events: TickEvents) -> bool:
    """Global replan trigger: any release, loss, split, or reachability event."""
    return bool(
        events.initial
        or events.completed_targets
        or events.lost_targets
        or events.tour_splits
        or events.reachability_gained
    )


def resolve_conflicts(
    current: Dict[int, Cell], proposals: Dict[int, Optional[Cell]]
) -> Dict[int, Cell]:
    """Approve proposed moves so no cell is shared and nobody swaps through.

    Robots are processed in ascending id (priority). A move is approved only
    if its target is neither claimed by a stationary or already-approved
    robot nor currently occupied by a robot that has not moved yet; denied
    robots wait in place. Head-on swap proposals therefore leave both robots
    waiting, which keeps the no-pass-through guarantee.
    """
    final: Dict[int, Cell] = {}
    movers: List[int] = []
    for rid in sorted(current):
        tgt = proposals.get(rid)
        if tgt is None or tgt == current[rid]:
            final[rid] = current[rid]
        else:
            movers.append(rid)
    occupied_end = set(final.values())
    undecided = {current[rid] for rid in movers}
    for rid in movers:
        src = current[rid]
        tgt = proposals[rid]
        undecided.discard(src)
        if tgt in occupied_end or tgt in undecided:
            final[rid] = src
            occupied_end.add(src)
        else:
            final[rid] = tgt
            occupied_end.add(tgt)
    return final


# -- simulator ----------------------------------------------------------------


class Simulator:
    """Closed sense-plan-act loop over one scenario.

    Deterministic for a fixed (map, config): all randomness flows through
    the config seed, robots are always processed in id order, and the
    planners are pure functions of the shared state snapshots.
    """

    def __init__(self, tiling: Tiling, ground_truth, config: SimConfig):
        if config.robots < 1:
            raise ValueError("need at least one robot")
        if config.cell_size_m is not None:
            tiling = Tiling(tiling.width, tiling.height, config.cell_size_m)
        if config.sensor_range_m < tiling.cell_size * SQRT2:
            raise ValueError("sensor range must cover adjacent cells")
        self.config = config
        self.map = SymbolicMap(tiling, ground_truth, occupancy_threshold=config.occupancy_threshold)
        self.rng = random.Random(config.seed)

        starts = config.start_cells
        if starts is None:
            free = [
                (r, c)
                for r in range(tiling.height)
                for c in range(tiling.width)
                if not self.map.ground_truth[r, c]
            ]
            if len(free) < config.robots:
                raise ValueError("not enough free cells for %d robots" % config.robots)
            starts = self.rng.sample(free, config.robots)
        if len(starts) != config.robots:
            raise ValueError("expected %d start cells, got %d" % (config.robots, len(starts)))
        if len(set(starts)) != len(starts):
            raise ValueError("start cells must be distinct")
        for cell in starts:
            if not tiling.in_bounds(cell):
                raise ValueError("start cell %s out of bounds" % (cell,))
            if self.map.ground_truth[cell[0], cell[1]]:
                raise ValueError("start cell %s is an obstacle" % (cell,))
        self.robots = [RobotState(id=i, cell=cell) for i, cell in enumerate(starts)]

        subarea_cells = max(1, round(config.subarea_size_m / tiling.cell_size))
        subarea_cells = min(subarea_cells, max(tiling.width, tiling.height))
        self.graph = initialize_graph(self.map, subarea_cells)
        self.sensor = SensorModel(range_m=config.sensor_range_m)
        self.cache = CostMatrixCache()

        reachable = gt_reachable_free(self.map, starts)
        self.reachable = reachable
        self.reachable_count = int(reachable.sum())
        self.total_free = int((~self.map.ground_truth).sum())
        self.visits = np.zeros((tiling.height, tiling.width), dtype=np.int32)

        self.events = TickEvents(initial=True)
        self.trace: List[dict] = []
        self.case2_records: List[dict] = []
        self.covered_reachable = 0
        self.covered_total = 0
        self.last_cover_tick = 0
        self.tick = 0
        self.replan_count = 0
        self.collision_events = 0
        self.obstacle_entries = 0
        self._idle_stop = False

    @staticmethod
    def from_map_text(text: str, config: SimConfig) -> "Simulator":
        tiling, gt = parse_map_text(text)
        return Simulator(tiling, gt, config)

    # -- phases ---------------------------------------------------------------

    def _sense_all(self) -> Set[Cell]:
        merged: Dict[Cell, bool] = {}
        flip = self.config.noise_flip_prob
        for robot in self.robots:
            for cell, occupied in self.sensor.visible_cells(self.map, robot.cell):
                if flip > 0.0 and self.rng.random() < flip:
                    occupied = not occupied
                if cell not in merged:
                    merged[cell] = occupied
        return self.map.apply_observation(merged.items())

    def _cover_standing(self) -> List[Cell]:
        covered = []
        labels = self.map.labels
        for robot in self.robots:
            r, c = robot.cell
            if labels[r, c] == CellLabel.UNCOVERED_FREE:
                self.map.mark_covered(robot.cell)
                self.visits[r, c] += 1
                robot.cells_covered += 1
                self._count_cover(robot.cell)
                covered.append(robot.cell)
        return covered

    def _count_cover(self, cell: Cell) -> None:
        self.covered_total += 1
        if self.reachable[cell[0], cell[1]]:
            self.covered_reachable += 1
        self.last_cover_tick = self.tick

    def _refine(self, changed: Set[Cell]):
        if self.config.variant == PlannerVariant.NO_CA:
            # static decomposition: states refresh, structure never changes
            refresh_states(self.graph, self.map, changed)
            return None
        return refine_graph(self.graph, self.map, changed)

    def _handle_report(self, report) -> None:
        if report is None or report.empty():
            return
        removed = set(report.removed_nodes)
        for robot in self.robots:
            if robot.target is not None and robot.target in report.splits:
                new_id = self.graph.cell_to_node.get(robot.cell)
                if new_id in report.splits[robot.target]:
                    # keep covering the fragment the robot stands in
                    robot.tour[0] = new_id
                    robot.target = new_id
                    robot.local_plan = []
                    robot.plan_kind = None
                    self._abandon_case2(robot)
                    self.events.tour_splits = True
                else:
                    self._release_target(robot)
                    self.events.lost_targets.append(robot.id)
            elif robot.target is not None and robot.target in removed:
                self._release_target(robot)
                self.events.lost_targets.append(robot.id)
            if any(nid in removed or nid in report.splits for nid in robot.tour[1:]):
                self.events.tour_splits = True

    def _release_target(self, robot: RobotState) -> None:
        if robot.tour and robot.target is not None and robot.tour[0] == robot.target:
            robot.tour.pop(0)
        robot.target = None
        robot.local_plan = []
        robot.plan_kind = None
        self._abandon_case2(robot)

    def _abandon_case2(self, robot: RobotState) -> None:
        if robot.case2_record is not None and not robot.case2_record["complete"]:
            robot.case2_record["abandoned"] = True
        robot.case2_record = None

    def _maybe_replan(self) -> bool:
        if not replan_policy(self.events):
            return False
        self.events = TickEvents()
        busy = {r.target for r in self.robots if r.target is not None}
        candidates = [nid for nid in candidate_nodes(self.graph) if nid not in busy]
        available = [r for r in self.robots if r.target is None]
        if not available:
            return False
        self.replan_count += 1
        if self.config.variant == PlannerVariant.NO_GT:
            self._assign_nearest(available, candidates)
        else:
            entries = [(r.id, r.cell) for r in available]
            aug, cm = build_cost_matrix(
                self.graph, self.map, entries, candidates=candidates, cache=self.cache
            )
            solution = solve_open_mdvrp(aug, cm)
            for robot, tour in zip(available, solution.tours):
                robot.tour = list(tour)
        for robot in available:
            robot.local_plan = []
            robot.plan_kind = None
            robot.target = robot.tour[0] if robot.tour else None
            robot.done = robot.target is None
        if all(r.target is None for r in self.robots):
            self._idle_stop = True
        return True

    def _assign_nearest(self, available: List[RobotState], candidates: List[int]) -> None:
        """Greedy nearest-subarea selection (global-tour ablation)."""
        claimed: Set[int] = set()
        if candidates:
            rows = self.cache.distance_rows(self.map, [r.cell for r in available])
            tiling = self.map.tiling
            centers = {nid: tiling.index(self.graph.nodes[nid].center) for nid in candidates}
            for i, robot in enumerate(available):
                best = None
                best_d = math.inf
                for nid in candidates:
                    if nid in claimed:
                        continue
                    d = rows[i][centers[nid]]
                    if np.isfinite(d) and d < best_d - 1e-12:
                        best, best_d = nid, d
                if best is not None:
                    claimed.add(best)
                    robot.tour = [best]
                else:
                    robot.tour = []
        else:
            for robot in available:
                robot.tour = []

    def _next_tour_node(self, robot: RobotState) -> Optional[int]:
        for nid in robot.tour[1:]:
            node = self.graph.nodes.get(nid)
            if node is not None and node.state != NodeState.COVERED and not node.dead:
                return nid
        return None

    def _build_tsp_plan(self, robot: RobotState, node) -> bool:
        labels = self.map.labels
        goals = {c for c in node.cells if labels[c[0], c[1]] == CellLabel.UNCOVERED_FREE}
        if not goals:
            return False
        dist = grid_distances(self.map, [robot.cell])[0]
        tiling = self.map.tiling
        reachable_cells = {
            c for c in node.cells
            if labels[c[0], c[1]] != CellLabel.OBSTACLE and np.isfinite(dist[tiling.index(c)])
        }
        if not any(c in reachable_cells for c in goals):
            return False
        next_id = self._next_tour_node(robot)
        exit_cell = select_exit_cell(self.graph, self.map, node.id, next_id)
        if exit_cell is not None and exit_cell not in reachable_cells:
            exit_cell = None
        try:
            plan = plan_tsp_coverage(self.map, reachable_cells, robot.cell, exit_cell)
        except PlanningError:
            return False
        robot.local_plan = plan[1:]
        robot.plan_kind = "tsp"
        record = {
            "robot": robot.id,
            "node": node.id,
            "tick": self.tick,
            "exit": exit_cell,
            "subarea": frozenset(node.cells),
            "executed": [robot.cell],
            "complete": False,
            "abandoned": False,
        }
        robot.case2_record = record
        self.case2_records.append(record)
        return bool(robot.local_plan) or len(plan) == 1

    def _plan_step_valid(self, robot: RobotState) -> bool:
        if not robot.local_plan:
            return False
        nxt = robot.local_plan[0]
        if max(abs(nxt[0] - robot.cell[0]), abs(nxt[1] - robot.cell[1])) != 1:
            return False
        labels = self.map.labels
        if labels[nxt[0], nxt[1]] == CellLabel.OBSTACLE:
            return False
        dr, dc = nxt[0] - robot.cell[0], nxt[1] - robot.cell[1]
        if dr != 0 and dc != 0:
            if labels[robot.cell[0] + dr, robot.cell[1]] == CellLabel.OBSTACLE:
                return False
            if labels[robot.cell[0], robot.cell[1] + dc] == CellLabel.OBSTACLE:
                return False
        return True

    def _try_detour(self, robot: RobotState) -> Optional[Cell]:
        """After repeated waits, reroute around the blocking robot."""
        occupied = frozenset(r.cell for r in self.robots if r.id != robot.id)
        for k, cell in enumerate(robot.local_plan):
            if cell in occupied:
                continue
            detour = shortest_cell_path(self.map, robot.cell, cell, blocked=occupied)
            if detour is not None and len(detour) >= 2:
                robot.local_plan = detour[1:] + robot.local_plan[k + 1 :]
                return robot.local_plan[0]
            break
        if robot.wait_count >= 5:
            return self._retreat_step(robot)
        return None

    def _retreat_step(self, robot: RobotState) -> Optional[Cell]:
        """Step away from the blocker to open a corridor for the mover."""
        labels = self.map.labels
        h, w = labels.shape
        occupied = {r.cell for r in self.robots if r.id != robot.id}
        blocker = robot.blocked_cell or robot.cell
        best = None
        best_key = None
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                nr, nc = robot.cell[0] + dr, robot.cell[1] + dc
                if not (0 <= nr < h and 0 <= nc < w):
                    continue
                cell = (nr, nc)
                if cell in occupied or labels[nr, nc] == CellLabel.OBSTACLE:
                    continue
                if dr != 0 and dc != 0:
                    if labels[robot.cell[0] + dr, robot.cell[1]] == CellLabel.OBSTACLE:
                        continue
                    if labels[robot.cell[0], robot.cell[1] + dc] == CellLabel.OBSTACLE:
                        continue
                gain = (nr - blocker[0]) ** 2 + (nc - blocker[1]) ** 2
                key = (-gain, nr, nc)
                if best_key is None or key < best_key:
                    best_key = key
                    best = cell
        if best is not None:
            robot.local_plan = []
            robot.plan_kind = None
            self._abandon_case2(robot)
        return best

    def _step_robot(self, robot: RobotState) -> Optional[Cell]:
        """Propose this robot's next cell from its target node's state."""
        if robot.target is None:
            return None
        node = self.graph.nodes.get(robot.target)
        if node is None or node.state == NodeState.COVERED:
            return None
        if robot.wait_count >= 3 and robot.local_plan:
            step = self._try_detour(robot)
            if step is not None:
                return step
        if robot.local_plan and not self._plan_step_valid(robot):
            robot.local_plan = []
            if robot.plan_kind == "tsp":
                self._abandon_case2(robot)
            robot.plan_kind = None

        if node.state == NodeState.EXPLORING:
            if robot.plan_kind == "tsp":
                self._abandon_case2(robot)
                robot.local_plan = []
                robot.plan_kind = None
            cover = sweep_cover_target(self.map, node.cells, robot.cell)
            if cover is not None:
                robot.local_plan = []
                robot.plan_kind = "sweep"
                return cover
            if robot.local_plan and robot.plan_kind == "sweep":
                return robot.local_plan[0]
            labels = self.map.labels
            goals = {c for c in node.cells if labels[c[0], c[1]] == CellLabel.UNCOVERED_FREE}
            path = nearest_cell_path(self.map, robot.cell, goals)
            if path is None:
                # approach the unknown part so sensing can resolve it
                unknown = {c for c in node.cells if labels[c[0], c[1]] == CellLabel.UNKNOWN}
                path = nearest_cell_path(self.map, robot.cell, unknown)
            if path is not None and len(path) >= 2:
                robot.local_plan = list(path[1:])
                robot.plan_kind = "sweep"
                return robot.local_plan[0]
            self._finish_target(robot, node)
            return None

        # EXPLORED: follow or build the coverage tour for the subarea
        if robot.plan_kind != "tsp" or robot.case2_record is None:
            if not self._build_tsp_plan(robot, node):
                self._finish_target(robot, node)
                return None
        if not robot.local_plan:
            self._finish_target(robot, node)
            return None
        return robot.local_plan[0]

    def _finish_target(self, robot: RobotState, node) -> None:
        """Release the robot from its target, dead-flagging stuck remainders."""
        if node.state != NodeState.COVERED:
            labels = self.map.labels
            leftovers = any(
                labels[c[0], c[1]] == CellLabel.UNCOVERED_FREE for c in node.cells
            )
            if leftovers and self.config.variant == PlannerVariant.NO_CA:
                node.dead = True
        if robot.case2_record is not None:
            if robot.local_plan:
                self._abandon_case2(robot)
            else:
                robot.case2_record["complete"] = True
                robot.case2_record = None
        self._release_target(robot)
        self.events.completed_targets.append(robot.id)

    def _execute(self, approved: Dict[int, Cell], proposals: Dict[int, Optional[Cell]]):
        covered_cells: List[Cell] = []
        moved_cells: List[Cell] = []
        labels = self.map.labels
        for robot in self.robots:
            tgt = approved[robot.id]
            proposal = proposals.get(robot.id)
            if tgt == robot.cell:
                if proposal is not None and proposal != robot.cell:
                    robot.wait_count += 1
                    robot.blocked_cell = proposal
                else:
                    robot.wait_count = 0
                continue
            robot.wait_count = 0
            robot.blocked_cell = None
            if self.map.ground_truth[tgt[0], tgt[1]]:
                self.obstacle_entries += 1  # must never happen
            diagonal = tgt[0] != robot.cell[0] and tgt[1] != robot.cell[1]
            robot.odometer += self.map.tiling.cell_size * (SQRT2 if diagonal else 1.0)
            robot.prev_cell = robot.cell
            robot.cell = tgt
            self.visits[tgt[0], tgt[1]] += 1
            moved_cells.append(tgt)
            if labels[tgt[0], tgt[1]] == CellLabel.UNCOVERED_FREE:
                self.map.mark_covered(tgt)
                robot.cells_covered += 1
                self._count_cover(tgt)
                covered_cells.append(tgt)
            if robot.local_plan and robot.local_plan[0] == tgt:
                robot.local_plan.pop(0)
            else:
                if robot.plan_kind == "tsp":
                    self._abandon_case2(robot)
                    robot.plan_kind = None
                robot.local_plan = []
            if robot.case2_record is not None:
                robot.case2_record["executed"].append(tgt)
                if not robot.local_plan:
                    robot.case2_record["complete"] = True

        positions = [r.cell for r in self.robots]
        if len(set(positions)) != len(positions):
            self.collision_events += 1  # must never happen

        refresh_states(self.graph, self.map, covered_cells)
        for robot in self.robots:
            if robot.target is None:
                continue
            node = self.graph.nodes.get(robot.target)
            if node is None:
                self._release_target(robot)
                self.events.lost_targets.append(robot.id)
                continue
            if node.state == NodeState.COVERED:
                self._finish_target(robot, node)
            elif (
                robot.plan_kind == "tsp"
                and robot.case2_record is not None
                and robot.case2_record["complete"]
            ):
                self._finish_target(robot, node)
        return covered_cells

    # -- main loop --------------------------------------------------------------

    def run(self) -> Tuple[RunMetrics, List[dict]]:
        tiling = self.map.tiling
        budget = self.config.step_budget or 50 * tiling.cell_count
        complete_reachable = False
        while self.tick < budget:
            self.tick += 1
            changed = self._sense_all()
            standing = self._cover_standing()
            report = self._refine(changed)
            self._handle_report(report)
            refresh_states(self.graph, self.map, standing)
            replanned = self._maybe_replan()

            proposals: Dict[int, Optional[Cell]] = {}
            for robot in self.robots:
                proposals[robot.id] = self._step_robot(robot)
            current = {r.id: r.cell for r in self.robots}
            approved = resolve_conflicts(current, proposals)
            covered_cells = self._execute(approved, proposals)

            if self.config.record_trace:
                self._record_trace(changed, standing + covered_cells, report, replanned)

            if self.covered_reachable >= self.reachable_count:
                complete_reachable = True
                break
            if self._idle_stop:
                break

        for robot in self.robots:
            robot.done = robot.target is None
        return self._build_metrics(complete_reachable), self.trace

    def _record_trace(self, observed, covered, report, replanned) -> None:
        graph_events = {}
        if report is not None and not report.empty():
            graph_events = {
                "removed": report.removed_nodes,
                "created": report.created_nodes,
            }
        labels = self.map.labels
        record = {
            "tick": self.tick,
            "robots": [[r.cell[0], r.cell[1]] for r in self.robots],
            "observed": sorted(
                [c[0], c[1], "obstacle" if labels[c[0], c[1]] == CellLabel.OBSTACLE else "free"]
                for c in observed
            ),
            "covered": sorted([c[0], c[1]] for c in covered),
            "graph": graph_events,
            "replan": bool(replanned),
        }
        self.trace.append(record)

    def _build_metrics(self, complete_reachable: bool) -> RunMetrics:
        free_mask = ~self.map.ground_truth
        visits_free = self.visits[free_mask]
        extra = int(np.maximum(visits_free - 1, 0).sum())
        overlap = extra / self.reachable_count if self.reachable_count else 0.0
        covered_fraction = self.covered_total / self.total_free if self.total_free else 1.0
        complete = self.covered_total == self.total_free
        coverage_time = self.last_cover_tick if complete_reachable else self.tick
        per_robot = [
            {
                "id": r.id,
                "path_length_m": round(r.odometer, 9),
                "cells_covered": r.cells_covered,
            }
            for r in self.robots
        ]
        return RunMetrics(
            complete=complete,
            covered_fraction=covered_fraction,
            coverage_time_ticks=coverage_time,
            total_path_length_m=round(sum(r.odometer for r in self.robots), 9),
            overlap_ratio=overlap,
            ticks=self.tick,
            robots=len(self.robots),
            unreachable_free_cells=self.total_free - self.reachable_count,
            per_robot=per_robot,
        )


def trace_to_jsonl(trace: Iterable[dict]) -> str:
    """Line-delimited JSON with stable field order for golden tests."""
    return "\n".join(json.dumps(rec, separators=(",", ":")) for rec in trace) + "\n"


def run_scenario(map_text: str, config: SimConfig) -> Tuple[RunMetrics, List[dict]]:
    sim = Simulator.from_map_text(map_text, config)
    return sim.run()
