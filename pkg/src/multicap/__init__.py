"""Connectivity-aware multi-robot coverage planning on occupancy grids."""

from .adjacency_graph import (
    AdjacencyGraph,
    GraphEdge,
    GraphNode,
    NodeState,
    RefinementReport,
    initialize_graph,
    node_state_of,
    recompute_center,
    refine_graph,
)
from .global_planner import (
    AugmentedNodeSet,
    CostMatrix,
    CostMatrixCache,
    Solution,
    build_cost_matrix,
    next_target,
    solve_open_mdvrp,
)
from .grid_map import (
    Cell,
    CellLabel,
    ComponentLabeling,
    MapFormatError,
    SymbolicMap,
    Tiling,
    connected_components,
    load_map_file,
    new_symbolic_map,
    parse_map_text,
    shortest_cell_path,
)
from .local_planner import (
    LocalStep,
    PlanningError,
    TspInstance,
    plan_tsp_coverage,
    select_exit_cell,
    sweep_step,
)
from .simulator import (
    PlannerVariant,
    RobotState,
    RunMetrics,
    SensorModel,
    SimConfig,
    Simulator,
    replan_policy,
    resolve_conflicts,
    run_scenario,
)

__version__ = "0.1.0"
