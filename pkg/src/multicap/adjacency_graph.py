"""Subarea adjacency graph built over the symbolic map.

Nodes are connected subareas descended from an initial coarse grid of
blocks; edges carry collision-free center-to-center paths between subareas
that touch through at least one cardinal cell pair. Refinement keeps both
properties true as observations land: obstacle cells are dropped from
subareas, fragmented subareas are split into fresh nodes, and blocked edge
paths are rerouted or removed.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Set, Tuple

import numpy as np

from .grid_map import (
    CARDINAL_OFFSETS,
    Cell,
    CellLabel,
    SymbolicMap,
    connected_components,
    path_cost,
    shortest_cell_path,
)


class NodeState(Enum):
    """Coverage status of a subarea.

    EXPLORING: still contains unknown cells.
    EXPLORED: fully observed, with uncovered free cells remaining.
    COVERED: every non-obstacle cell has been covered.
    """

    EXPLORING = "exploring"
    EXPLORED = "explored"
    COVERED = "covered"


def node_state_of(cells: Iterable[Cell], smap: SymbolicMap) -> NodeState:
    """State of a subarea from its cell labels (obstacle cells are ignored)."""
    labels = smap.labels
    has_uncovered = False
    for r, c in cells:
        value = labels[r, c]
        if value == CellLabel.UNKNOWN:
            return NodeState.EXPLORING
        if value == CellLabel.UNCOVERED_FREE:
            has_uncovered = True
    return NodeState.EXPLORED if has_uncovered else NodeState.COVERED


def recompute_center(cells: Iterable[Cell]) -> Cell:
    """Subarea cell nearest the cell centroid, row-major on distance ties."""
    cell_list = sorted(cells)
    if not cell_list:
        raise ValueError("subarea must be nonempty")
    n = len(cell_list)
    cr = sum(c[0] for c in cell_list) / n
    cc = sum(c[1] for c in cell_list) / n
    best = None
    best_d = None
    for cell in cell_list:
        d = (cell[0] - cr) ** 2 + (cell[1] - cc) ** 2
        if best_d is None or d < best_d - 1e-12:
            best, best_d = cell, d
    return best


@dataclass
class GraphNode:
    id: int
    cells: Set[Cell]
    center: Cell
    state: NodeState
    origin: int  # coarse block this node descends from
    dead: bool = False  # unassignable remainder (static-decomposition variant)


@dataclass
class GraphEdge:
    a: int  # a < b
    b: int
    path: List[Cell]
    length: float  # meters


@dataclass
class RefinementReport:
    """What a refinement pass changed, for tour bookkeeping upstream."""

    removed_nodes: List[int] = field(default_factory=list)
    created_nodes: List[int] = field(default_factory=list)
    splits: Dict[int, List[int]] = field(default_factory=dict)
    removed_edges: List[Tuple[int, int]] = field(default_factory=list)
    created_edges: List[Tuple[int, int]] = field(default_factory=list)
    repaired_edges: List[Tuple[int, int]] = field(default_factory=list)

    def empty(self) -> bool:
        return not (
            self.removed_nodes
            or self.created_nodes
            or self.removed_edges
            or self.created_edges
            or self.repaired_edges
        )


def _edge_key(a: int, b: int) -> Tuple[int, int]:
    return (a, b) if a < b else (b, a)


class AdjacencyGraph:
    """Partition of non-obstacle cells into subarea nodes plus contact edges.

    Invariants maintained by initialize/refine:
      * every non-obstacle cell belongs to exactly one node's subarea;
      * each subarea is 4-connected and stays inside its origin block;
      * an edge exists iff the two subareas share a cardinal cell contact,
        and its stored path avoids obstacle cells.
    """

    def __init__(self, smap: SymbolicMap, subarea_size_cells: int):
        tiling = smap.tiling
        if subarea_size_cells < 1:
            raise ValueError("subarea size must be at least 1 cell")
        if subarea_size_cells > tiling.width and subarea_size_cells > tiling.height:
            raise ValueError(
                "subarea size %d exceeds both map dimensions %dx%d"
                % (subarea_size_cells, tiling.width, tiling.height)
            )
        self.subarea_size = subarea_size_cells
        self.blocks_w = (tiling.width + subarea_size_cells - 1) // subarea_size_cells
        self.blocks_h = (tiling.height + subarea_size_cells - 1) // subarea_size_cells
        self.nodes: Dict[int, GraphNode] = {}
        self.edges: Dict[Tuple[int, int], GraphEdge] = {}
        self.cell_to_node: Dict[Cell, int] = {}
        self.next_id = 0

    # -- lookup helpers ---------------------------------------------------

    def block_of_cell(self, cell: Cell) -> int:
        return (cell[0] // self.subarea_size) * self.blocks_w + cell[1] // self.subarea_size

    def block_cells(self, block: int, smap: SymbolicMap) -> List[Cell]:
        br, bc = divmod(block, self.blocks_w)
        s = self.subarea_size
        tiling = smap.tiling
        r0, c0 = br * s, bc * s
        r1 = min(r0 + s, tiling.height)
        c1 = min(c0 + s, tiling.width)
        return [(r, c) for r in range(r0, r1) for c in range(c0, c1)]

    def _block_neighbors(self, block: int) -> List[int]:
        br, bc = divmod(block, self.blocks_w)
        out = []
        for dr, dc in CARDINAL_OFFSETS:
            nr, nc = br + dr, bc + dc
            if 0 <= nr < self.blocks_h and 0 <= nc < self.blocks_w:
                out.append(nr * self.blocks_w + nc)
        return out

    def node_of_cell(self, cell: Cell) -> Optional[int]:
        return self.cell_to_node.get(cell)

    def edges_of(self, node_id: int) -> List[GraphEdge]:
        return [e for key, e in self.edges.items() if node_id in key]

    def neighbor_ids(self, node_id: int) -> List[int]:
        out = []
        for a, b in self.edges:
            if a == node_id:
                out.append(b)
            elif b == node_id:
                out.append(a)
        return sorted(out)

    # -- construction and mutation -----------------------------------------

    def _register_node(self, cells: Set[Cell], origin: int, smap: SymbolicMap) -> GraphNode:
        node = GraphNode(
            id=self.next_id,
            cells=cells,
            center=recompute_center(cells),
            state=node_state_of(cells, smap),
            origin=origin,
        )
        self.next_id += 1
        self.nodes[node.id] = node
        for cell in cells:
            self.cell_to_node[cell] = node.id
        return node

    def _drop_node(self, node_id: int, report: RefinementReport) -> None:
        node = self.nodes.pop(node_id)
        for cell in node.cells:
            if self.cell_to_node.get(cell) == node_id:
                del self.cell_to_node[cell]
        for key in [k for k in self.edges if node_id in k]:
            del self.edges[key]
            report.removed_edges.append(key)
        report.removed_nodes.append(node_id)

    def _contact_partners(self, node: GraphNode) -> Set[int]:
        """Nodes whose subarea touches this one through a cardinal cell pair."""
        partners: Set[int] = set()
        lookup = self.cell_to_node
        for r, c in node.cells:
            for dr, dc in CARDINAL_OFFSETS:
                other = lookup.get((r + dr, c + dc))
                if other is not None and other != node.id:
                    partners.add(other)
        return partners

    def _make_edge(self, a: int, b: int, smap: SymbolicMap) -> GraphEdge:
        ca = self.nodes[a].center
        cb = self.nodes[b].center
        path = shortest_cell_path(smap, ca, cb)
        if path is None:
            # Cardinal contact plus internally connected subareas guarantees
            # a route through their union, so this cannot happen.
            raise RuntimeError("no path between centers of adjacent nodes %d, %d" % (a, b))
        key = _edge_key(a, b)
        edge = GraphEdge(a=key[0], b=key[1], path=path, length=path_cost(path, smap.tiling.cell_size))
        self.edges[key] = edge
        return edge

    def dump_text(self) -> str:
        """Deterministic line dump for debugging and regression fixtures."""
        lines = []
        for nid in sorted(self.nodes):
            node = self.nodes[nid]
            lines.append(
                "NODE %d %s %d %d %d"
                % (nid, node.state.value, node.center[0], node.center[1], len(node.cells))
            )
        for a, b in sorted(self.edges):
            lines.append("EDGE %d %d %.6f" % (a, b, self.edges[(a, b)].length))
        return "\n".join(lines) + "\n"


def initialize_graph(smap: SymbolicMap, subarea_size_cells: int) -> AdjacencyGraph:
    """Partition the map into a coarse block grid and connect neighbors.

    Trailing blocks are truncated when the dimensions do not divide evenly.
    If the map already has classified cells, one refinement pass runs so the
    returned graph satisfies the partition invariants immediately.
    """
    graph = AdjacencyGraph(smap, subarea_size_cells)
    for block in range(graph.blocks_w * graph.blocks_h):
        cells = set(graph.block_cells(block, smap))
        graph._register_node(cells, origin=block, smap=smap)
    for block in range(graph.blocks_w * graph.blocks_h):
        for nb in graph._block_neighbors(block):
            if nb > block:
                graph._make_edge(block, nb, smap)
    if np.any(smap.labels != CellLabel.UNKNOWN):
        classified = {
            (int(r), int(c)) for r, c in zip(*np.nonzero(smap.labels != CellLabel.UNKNOWN))
        }
        refine_graph(graph, smap, classified)
    return graph


def refine_graph(graph: AdjacencyGraph, smap: SymbolicMap, changed: Set[Cell]) -> RefinementReport:
    """Incrementally restore the graph invariants after label changes.

    Affected nodes (subarea intersects the changed set) drop obstacle cells
    and are split per connected component when fragmented. Edges of touched
    nodes are rebuilt from cardinal contact; untouched edges whose stored
    path crosses a new obstacle get their path recomputed.
    """
    report = RefinementReport()
    if not changed:
        return report

    labels = smap.labels
    new_obstacles = {c for c in changed if labels[c[0], c[1]] == CellLabel.OBSTACLE}
    affected = sorted({graph.cell_to_node[c] for c in changed if c in graph.cell_to_node})

    touched: List[int] = []
    center_moved: Set[int] = set()
    for node_id in affected:
        node = graph.nodes[node_id]
        kept = {c for c in node.cells if labels[c[0], c[1]] != CellLabel.OBSTACLE}
        if not kept:
            graph._drop_node(node_id, report)
            continue
        if kept == node.cells:
            node.state = node_state_of(kept, smap)
            continue
        comp = connected_components(smap, kept)
        if comp.count == 1:
            for cell in node.cells - kept:
                if graph.cell_to_node.get(cell) == node_id:
                    del graph.cell_to_node[cell]
            node.cells = kept
            node.state = node_state_of(kept, smap)
            if node.center not in kept:
                node.center = recompute_center(kept)
                center_moved.add(node_id)
            touched.append(node_id)
        else:
            origin = node.origin
            graph._drop_node(node_id, report)
            children = []
            for part in comp.components:
                child = graph._register_node(set(part), origin=origin, smap=smap)
                children.append(child.id)
                touched.append(child.id)
            report.splits[node_id] = children
            report.created_nodes.extend(children)

    # Rebuild the edge sets of every touched node from actual contact.
    rebuilt: Set[Tuple[int, int]] = set()
    for node_id in sorted(set(touched)):
        node = graph.nodes[node_id]
        partners = graph._contact_partners(node)
        for key in [k for k in graph.edges if node_id in k]:
            other = key[0] if key[1] == node_id else key[1]
            if other not in partners:
                del graph.edges[key]
                report.removed_edges.append(key)
        for other in sorted(partners):
            key = _edge_key(node_id, other)
            if key in graph.edges:
                if key not in rebuilt and (
                    node_id in center_moved
                    or other in center_moved
                    or new_obstacles.intersection(graph.edges[key].path)
                ):
                    graph._make_edge(key[0], key[1], smap)
                    rebuilt.add(key)
                    report.repaired_edges.append(key)
            else:
                graph._make_edge(key[0], key[1], smap)
                rebuilt.add(key)
                report.created_edges.append(key)

    # Unaffected edges may still have their stored path run through a cell
    # that just turned out to be an obstacle.
    if new_obstacles:
        for key in sorted(graph.edges):
            if key in rebuilt:
                continue
            if new_obstacles.intersection(graph.edges[key].path):
                graph._make_edge(key[0], key[1], smap)
                report.repaired_edges.append(key)

    report.removed_nodes.sort()
    report.created_nodes.sort()
    report.removed_edges = sorted(set(report.removed_edges))
    report.created_edges = sorted(set(report.created_edges))
    report.repaired_edges = sorted(set(report.repaired_edges))
    return report


def refresh_states(graph: AdjacencyGraph, smap: SymbolicMap, cells: Iterable[Cell]) -> List[int]:
    """Recompute the state of nodes owning the given cells.

    Used after coverage marks, and by the static-decomposition variant in
    place of full refinement. Static subareas may find their center sitting
    on a cell that turned out to be an obstacle; it is moved to the nearest
    usable cell so the node stays routable. Returns ids whose state changed.
    """
    labels = smap.labels
    changed_nodes: List[int] = []
    seen: Set[int] = set()
    for cell in cells:
        node_id = graph.cell_to_node.get(cell)
        if node_id is None or node_id in seen:
            continue
        seen.add(node_id)
        node = graph.nodes[node_id]
        state = node_state_of(node.cells, smap)
        if state != node.state:
            node.state = state
            changed_nodes.append(node_id)
        if labels[node.center[0], node.center[1]] == CellLabel.OBSTACLE:
            usable = [c for c in node.cells if labels[c[0], c[1]] != CellLabel.OBSTACLE]
            if usable:
                node.center = recompute_center(usable)
    return sorted(changed_nodes)
