"""Synthetic desk-scale maps: corridor centrelines, traversal captures and ASCII layouts."""
import math

import numpy as np

from .geometry import Pose2D
from .maze import Layout


def corridor(length=12.0):
    return [((0.0, 0.0), (length, 0.0))]


def loop(width=10.0, height=6.0):
    c = [(0.0, 0.0), (width, 0.0), (width, height), (0.0, height)]
    return [(c[i], c[(i + 1) % 4]) for i in range(4)]


def building(blocks=(2, 2), block_size=(5.0, 5.0)):
    """Corridors along the lines of a blocks[0] x blocks[1] grid of rooms."""
    nx, ny = blocks
    bw, bh = block_size
    segs = []
    for j in range(ny + 1):
        segs.append(((0.0, j * bh), (nx * bw, j * bh)))
    for i in range(nx + 1):
        segs.append(((i * bw, 0.0), (i * bw, ny * bh)))
    return segs


def two_route(approach=6.0, span=8.0, north=5.0, south=3.0, exit_len=6.0):
    """Approach corridor splitting into a long northern and a short southern route."""
    j1 = (approach, 0.0)
    j2 = (approach + span, 0.0)
    end = (approach + span + exit_len, 0.0)
    return [
        ((0.0, 0.0), j1),
        (j1, (j1[0], north)), ((j1[0], north), (j2[0], north)), ((j2[0], north), j2),
        (j1, (j1[0], -south)), ((j1[0], -south), (j2[0], -south)), ((j2[0], -south), j2),
        (j2, end),
    ]


MAPS = {"corridor": corridor, "loop": loop, "building": building, "two-route": two_route}


def sample_segments(segments, spacing=0.5):
    """Capture points every ``spacing`` metres along each segment, deduplicated at joints."""
    seen = {}
    for (x0, y0), (x1, y1) in segments:
        length = math.hypot(x1 - x0, y1 - y0)
        n = max(1, int(round(length / spacing)))
        for i in range(n + 1):
            t = i / n
            x, y = x0 + t * (x1 - x0), y0 + t * (y1 - y0)
            key = (round(x, 6), round(y, 6))
            seen.setdefault(key, (x, y))
    return [Pose2D(x, y, 0.0) for x, y in seen.values()]


def _segment_distance(px, py, seg):
    (x0, y0), (x1, y1) = seg
    dx, dy = x1 - x0, y1 - y0
    L2 = dx * dx + dy * dy
    t = 0.0 if L2 == 0 else np.clip(((px - x0) * dx + (py - y0) * dy) / L2, 0.0, 1.0)
    return np.hypot(px - (x0 + t * dx), py - (y0 + t * dy))


def shift_segments(segments, offset):
    ox, oy = offset
    return [((a[0] + ox, a[1] + oy), (b[0] + ox, b[1] + oy)) for a, b in segments]


def place_segments(segments, corridor_width=2.0, cell_size=0.5, margin=1.0):
    """Translate segments so the layout grid starts at the origin."""
    pts = np.array([p for s in segments for p in s])
    lo = pts.min(axis=0)
    pad = corridor_width / 2.0 + margin
    pad = math.ceil(pad / cell_size) * cell_size
    return shift_segments(segments, (pad - lo[0], pad - lo[1]))


def layout_from_segments(segments, corridor_width=2.0, cell_size=0.5, margin=1.0):
    """Free cells are those whose centre lies within half the corridor width of a centreline.

    Segments must already be placed (see place_segments).
    """
    pts = np.array([p for s in segments for p in s])
    hi = pts.max(axis=0)
    pad = math.ceil((corridor_width / 2.0 + margin) / cell_size) * cell_size
    nx = int(math.ceil((hi[0] + pad) / cell_size))
    ny = int(math.ceil((hi[1] + pad) / cell_size))
    cx = (np.arange(nx) + 0.5) * cell_size
    cy = (np.arange(ny) + 0.5) * cell_size
    X, Y = np.meshgrid(cx, cy)
    free = np.zeros((ny, nx), dtype=bool)
    for seg in segments:
        free |= _segment_distance(X, Y, seg) < corridor_width / 2.0
    free[0, :] = free[-1, :] = free[:, 0] = free[:, -1] = False
    walls = ~free
    walls.flags.writeable = False
    return Layout(walls, cell_size)


def generate_map(kind="building", spacing=0.5, corridor_width=2.0, cell_size=0.5, **kwargs):
    """Return (layout, capture poses, placed segments) for a named synthetic map."""
    segs = place_segments(MAPS[kind](**kwargs), corridor_width, cell_size)
    layout = layout_from_segments(segs, corridor_width, cell_size)
    return layout, sample_segments(segs, spacing), segs
