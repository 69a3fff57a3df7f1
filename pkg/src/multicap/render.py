"""Deterministic SVG rendering of coverage runs.

Obstacles are filled squares, each robot's trajectory a colored polyline
with a start marker. Output bytes depend only on the map and trace, so
renders can be golden-tested.
"""

from typing import Iterable, List

import numpy as np

from .grid_map import Tiling

_CELL_PX = 20
_COLORS = (
    "#e6194b",
    "#3cb44b",
    "#4363d8",
    "#f58231",
    "#911eb4",
    "#46f0f0",
    "#f032e6",
    "#9a6324",
)


def render_svg(tiling: Tiling, ground_truth: np.ndarray, trace: Iterable[dict]) -> str:
    """SVG document for a run trace over the given map."""
    gt = np.asarray(ground_truth, dtype=bool).reshape(tiling.height, tiling.width)
    records = list(trace)

    tracks: List[List[tuple]] = []
    for rec in records:
        robots = rec.get("robots", [])
        if not tracks:
            tracks = [[] for _ in robots]
        if len(robots) != len(tracks):
            raise ValueError("trace robot count changed at tick %s" % rec.get("tick"))
        for i, (r, c) in enumerate(robots):
            if not (0 <= r < tiling.height and 0 <= c < tiling.width):
                raise ValueError("trace cell (%d, %d) outside the map" % (r, c))
            tracks[i].append((r, c))

    w_px = tiling.width * _CELL_PX
    h_px = tiling.height * _CELL_PX
    lines = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="%d" height="%d" '
        'viewBox="0 0 %d %d">' % (w_px, h_px, w_px, h_px),
        '<rect width="%d" height="%d" fill="#ffffff"/>' % (w_px, h_px),
    ]
    for r in range(tiling.height):
        for c in range(tiling.width):
            if gt[r, c]:
                lines.append(
                    '<rect x="%d" y="%d" width="%d" height="%d" fill="#444444"/>'
                    % (c * _CELL_PX, r * _CELL_PX, _CELL_PX, _CELL_PX)
                )
    for i, track in enumerate(tracks):
        color = _COLORS[i % len(_COLORS)]
        points = " ".join(
            "%.1f,%.1f" % ((c + 0.5) * _CELL_PX, (r + 0.5) * _CELL_PX) for r, c in track
        )
        lines.append(
            '<polyline points="%s" fill="none" stroke="%s" stroke-width="2"/>'
            % (points, color)
        )
        start = track[0]
        lines.append(
            '<circle cx="%.1f" cy="%.1f" r="%.1f" fill="%s"/>'
            % ((start[1] + 0.5) * _CELL_PX, (start[0] + 0.5) * _CELL_PX, _CELL_PX * 0.3, color)
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
