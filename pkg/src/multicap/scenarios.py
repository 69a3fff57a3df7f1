"""Bundled desk-scale scenario maps and random map generation.

The four 30x30 scenes (gallery, warehouse, office, maze) are authored
fixtures covering the obstacle topologies the planner cares about: sparse
pillars, long racks, door-connected rooms, and winding corridors. All use
3 m cells, so each scene spans 90 m x 90 m.
"""

import random
from typing import List, Optional, Tuple

import numpy as np

from .grid_map import Cell, Tiling, format_map_text

_SCENE_SIZE = 30
_CELL_SIZE_M = 3.0


class _SceneGrid:
    def __init__(self, size: int = _SCENE_SIZE):
        self.gt = np.zeros((size, size), dtype=bool)

    def hwall(self, r: int, c0: int, c1: int, gaps: Tuple[int, ...] = ()) -> None:
        for c in range(c0, c1 + 1):
            if c not in gaps:
                self.gt[r, c] = True

    def vwall(self, c: int, r0: int, r1: int, gaps: Tuple[int, ...] = ()) -> None:
        for r in range(r0, r1 + 1):
            if r not in gaps:
                self.gt[r, c] = True

    def block(self, r0: int, c0: int, r1: int, c1: int) -> None:
        self.gt[r0 : r1 + 1, c0 : c1 + 1] = True

    def text(self) -> str:
        tiling = Tiling(self.gt.shape[1], self.gt.shape[0], _CELL_SIZE_M)
        return format_map_text(tiling, self.gt)


def _scene_gallery() -> str:
    g = _SceneGrid()
    g.hwall(9, 3, 26, gaps=(8, 9, 20, 21))
    g.hwall(20, 3, 26, gaps=(8, 9, 20, 21))
    g.block(13, 13, 16, 16)
    g.block(4, 6, 5, 7)
    g.block(4, 22, 5, 23)
    g.block(24, 6, 25, 7)
    g.block(24, 22, 25, 23)
    return g.text()


def _scene_warehouse() -> str:
    g = _SceneGrid()
    for r in (5, 9, 13, 17, 21, 25):
        g.block(r, 4, r, 13)
        g.block(r, 16, r, 25)
    return g.text()


def _scene_office() -> str:
    g = _SceneGrid()
    # corridor cross stays clear: rows 14-15 and cols 14-15
    g.hwall(13, 0, 13, gaps=(5, 10))
    g.hwall(13, 16, 29, gaps=(19, 24))
    g.hwall(16, 0, 13, gaps=(3, 12))
    g.hwall(16, 16, 29, gaps=(17, 28))
    g.vwall(13, 0, 12, gaps=(6, 9))
    g.vwall(13, 17, 29, gaps=(20, 25))
    g.vwall(16, 0, 12, gaps=(2, 8))
    g.vwall(16, 17, 29, gaps=(21, 27))
    # room dividers inside each quadrant
    g.vwall(7, 0, 12, gaps=(4, 11))
    g.hwall(7, 0, 13, gaps=(2, 11))
    g.vwall(22, 0, 12, gaps=(4, 11))
    g.hwall(7, 16, 29, gaps=(18, 27))
    g.vwall(7, 17, 29, gaps=(19, 26))
    g.hwall(22, 0, 13, gaps=(2, 11))
    g.vwall(22, 17, 29, gaps=(19, 26))
    g.hwall(22, 16, 29, gaps=(18, 27))
    return g.text()


def _scene_maze() -> str:
    g = _SceneGrid()
    g.vwall(4, 3, 29)
    g.vwall(9, 0, 26)
    g.vwall(14, 3, 29)
    g.vwall(19, 0, 26)
    g.vwall(24, 3, 29)
    g.hwall(10, 5, 7)
    g.hwall(20, 10, 12)
    g.hwall(8, 15, 17)
    g.hwall(22, 25, 27)
    return g.text()


SCENES = {
    "gallery": _scene_gallery,
    "warehouse": _scene_warehouse,
    "office": _scene_office,
    "maze": _scene_maze,
}


def scene_text(name: str) -> str:
    if name not in SCENES:
        raise ValueError("unknown scene %r, pick one of %s" % (name, sorted(SCENES)))
    return SCENES[name]()


def open_map_text(width: int, height: int, cell_size: float = 3.0) -> str:
    tiling = Tiling(width, height, cell_size)
    return format_map_text(tiling, np.zeros((height, width), dtype=bool))


def corner_starts(ground_truth: np.ndarray, count: int) -> List[Cell]:
    """Free cells nearest the four map corners, in TL, TR, BL, BR order."""
    gt = np.asarray(ground_truth, dtype=bool)
    h, w = gt.shape
    corners = [(0, 0), (0, w - 1), (h - 1, 0), (h - 1, w - 1)]
    starts: List[Cell] = []
    for cr, cc in corners:
        if len(starts) >= count:
            break
        best = None
        best_key = None
        for r in range(h):
            for c in range(w):
                if gt[r, c] or (r, c) in starts:
                    continue
                key = (max(abs(r - cr), abs(c - cc)), r, c)
                if best_key is None or key < best_key:
                    best_key = key
                    best = (r, c)
        if best is not None:
            starts.append(best)
    if len(starts) < count:
        raise ValueError("map has fewer than %d free cells for corner starts" % count)
    return starts[:count]


def random_connected_map(
    width: int,
    height: int,
    density: float,
    rng: random.Random,
    max_density: float = 0.25,
) -> np.ndarray:
    """Random obstacle layout whose free space is one 4-connected component.

    Smaller stray free pockets are filled in; layouts denser than
    max_density after filling are rejected and redrawn. Deterministic for a
    given rng state.
    """
    while True:
        gt = np.zeros((height, width), dtype=bool)
        for r in range(height):
            for c in range(width):
                if rng.random() < density:
                    gt[r, c] = True
        free = [(r, c) for r in range(height) for c in range(width) if not gt[r, c]]
        if not free:
            continue
        seen = set()
        components = []
        for seed in free:
            if seed in seen:
                continue
            comp = []
            stack = [seed]
            seen.add(seed)
            while stack:
                r, c = stack.pop()
                comp.append((r, c))
                for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    nb = (r + dr, c + dc)
                    if (
                        0 <= nb[0] < height
                        and 0 <= nb[1] < width
                        and not gt[nb[0], nb[1]]
                        and nb not in seen
                    ):
                        seen.add(nb)
                        stack.append(nb)
            components.append(comp)
        components.sort(key=len, reverse=True)
        for comp in components[1:]:
            for r, c in comp:
                gt[r, c] = True
        if gt.mean() <= max_density and len(components[0]) >= width * height * 0.4:
            return gt
