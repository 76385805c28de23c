"""Semi-metric capture graph: (node, orientation) states linked by forward/turn actions.

Node positions come from a traversal (one capture every ~0.5 m).  Each node
is viewed under ``num_orientations`` headings; turning changes the heading
index, moving forward jumps to the capture nearest to a point one step
ahead, if one lies within the match radius.
"""
import csv
import json
import math
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .errors import DuplicateNode, EmptyCell, EmptyPoseList, ForwardBlocked, FormatError
from .geometry import Pose2D

GRAPH_MAGIC = "NAVGRAPH1"
PROXIMITY_RADIUS = 0.3


class HighAction(IntEnum):
    FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2


@dataclass(frozen=True)
class ViewState:
    node_id: int
    orient: int


@dataclass(frozen=True)
class CaptureNode:
    id: int
    pose: Pose2D
    descriptor_seed: int


@dataclass(frozen=True)
class Observation:
    descriptor: np.ndarray
    proximity: int


@dataclass(frozen=True)
class OneHotTarget:
    cell_rank: int


@dataclass(frozen=True, eq=False)
class ImageTarget:
    descriptors: tuple
    cell_rank: int = -1
    states: tuple = ()

    def embedding(self):
        return np.mean(np.stack(self.descriptors), axis=0)


@dataclass(frozen=True)
class GridSpec:
    origin: tuple
    cell_size: tuple
    dims: tuple
    valid_cells: tuple

    @property
    def k(self):
        return len(self.valid_cells)

    @cached_property
    def _rank_of(self):
        return {c: r for r, c in enumerate(self.valid_cells)}

    def cell_index(self, x, y):
        rows, cols = self.dims
        col = int(math.floor((x - self.origin[0]) / self.cell_size[0]))
        row = int(math.floor((y - self.origin[1]) / self.cell_size[1]))
        col = min(max(col, 0), cols - 1)
        row = min(max(row, 0), rows - 1)
        return row * cols + col

    def rank_of(self, cell_index):
        """Rank among valid cells, or -1 for an empty cell."""
        return self._rank_of.get(cell_index, -1)

    def center(self, rank):
        rows, cols = self.dims
        cell = self.valid_cells[rank]
        row, col = divmod(cell, cols)
        return (self.origin[0] + (col + 0.5) * self.cell_size[0],
                self.origin[1] + (row + 0.5) * self.cell_size[1])

    def to_dict(self):
        return {"origin": list(self.origin), "cell_size": list(self.cell_size),
                "dims": list(self.dims), "valid_cells": list(self.valid_cells)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(float(v) for v in d["origin"]), tuple(float(v) for v in d["cell_size"]),
                   tuple(int(v) for v in d["dims"]), tuple(int(v) for v in d["valid_cells"]))


class PanoGraph:
    """Immutable capture graph. Derived lookup tables are computed lazily."""

    def __init__(self, positions, descriptor_seeds, num_orientations, forward, *,
                 descriptor_dim=128, forward_step=1.0, forward_match_radius=0.7,
                 noise_level=0.05, grid=None):
        self.positions = np.array(positions, dtype=float).reshape(-1, 2)
        self.descriptor_seeds = np.array(descriptor_seeds, dtype=np.uint64)
        self.num_orientations = int(num_orientations)
        self.forward = np.array(forward, dtype=np.int64).reshape(len(self.positions), self.num_orientations)
        self.descriptor_dim = int(descriptor_dim)
        self.forward_step = float(forward_step)
        self.forward_match_radius = float(forward_match_radius)
        self.noise_level = float(noise_level)
        self.grid = grid
        for arr in (self.positions, self.descriptor_seeds, self.forward):
            arr.flags.writeable = False

    @property
    def num_nodes(self):
        return len(self.positions)

    @property
    def num_states(self):
        return self.num_nodes * self.num_orientations

    @property
    def nodes(self):
        return [CaptureNode(i, Pose2D(x, y, 0.0), int(s))
                for i, ((x, y), s) in enumerate(zip(self.positions, self.descriptor_seeds))]

    @property
    def turn_angle(self):
        return 2.0 * math.pi / self.num_orientations

    def heading(self, orient):
        return orient * self.turn_angle

    def state_index(self, s):
        return s.node_id * self.num_orientations + s.orient

    def state_of(self, index):
        node, orient = divmod(int(index), self.num_orientations)
        return ViewState(node, orient)

    def is_valid(self, s):
        return 0 <= s.node_id < self.num_nodes and 0 <= s.orient < self.num_orientations

    def with_grid(self, grid):
        return PanoGraph(self.positions, self.descriptor_seeds, self.num_orientations, self.forward,
                         descriptor_dim=self.descriptor_dim, forward_step=self.forward_step,
                         forward_match_radius=self.forward_match_radius,
                         noise_level=self.noise_level, grid=grid)

    @cached_property
    def successors(self):
        """(num_states, 3) successor state indices; blocked forwards map to themselves."""
        n_o = self.num_orientations
        idx = np.arange(self.num_states)
        node, orient = np.divmod(idx, n_o)
        fwd = self.forward[node, orient]
        out = np.empty((self.num_states, 3), dtype=np.int64)
        out[:, HighAction.FORWARD] = np.where(fwd >= 0, fwd * n_o + orient, idx)
        out[:, HighAction.TURN_LEFT] = node * n_o + (orient + 1) % n_o
        out[:, HighAction.TURN_RIGHT] = node * n_o + (orient - 1) % n_o
        out.flags.writeable = False
        return out

    @cached_property
    def kdtree(self):
        return cKDTree(self.positions)

    @cached_property
    def base_descriptors(self):
        """Noise-free descriptors, shape (num_nodes, num_orientations, descriptor_dim)."""
        table = np.empty((self.num_nodes, self.num_orientations, self.descriptor_dim))
        for n, seed in enumerate(self.descriptor_seeds):
            for o in range(self.num_orientations):
                table[n, o] = view_descriptor(int(seed), o, self.descriptor_dim)
        table.flags.writeable = False
        return table

    @cached_property
    def proximity_table(self):
        table = np.zeros((self.num_nodes, self.num_orientations), dtype=np.int8)
        tree = self.kdtree
        for n in range(self.num_nodes):
            near = [m for m in tree.query_ball_point(self.positions[n], PROXIMITY_RADIUS) if m != n]
            if not near:
                continue
            rel = self.positions[near] - self.positions[n]
            dist = np.hypot(rel[:, 0], rel[:, 1])
            for o in range(self.num_orientations):
                if self.forward[n, o] >= 0:
                    continue
                phi = self.heading(o)
                ahead = rel @ np.array([math.cos(phi), math.sin(phi)]) > 0
                if np.any(ahead & (dist < PROXIMITY_RADIUS)):
                    table[n, o] = 1
        table.flags.writeable = False
        return table

    @cached_property
    def node_cell(self):
        """Rank of the grid cell holding each node."""
        if self.grid is None:
            raise ValueError("graph has no grid; call make_grid first")
        return np.array([self.grid.rank_of(self.grid.cell_index(x, y)) for x, y in self.positions])

    def cell_nodes(self, cell_rank):
        return np.flatnonzero(self.node_cell == cell_rank)

    def cell_state_mask(self, cell_rank):
        return np.repeat(self.node_cell == cell_rank, self.num_orientations)

    # -- serialization -------------------------------------------------

    def to_dict(self):
        return {
            "version": 1,
            "num_orientations": self.num_orientations,
            "descriptor_dim": self.descriptor_dim,
            "forward_step": self.forward_step,
            "forward_match_radius": self.forward_match_radius,
            "noise_level": self.noise_level,
            "nodes": [[float(x), float(y), int(s)] for (x, y), s in zip(self.positions, self.descriptor_seeds)],
            "forward": self.forward.tolist(),
            "grid": None if self.grid is None else self.grid.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        nodes = d["nodes"]
        return cls([(n[0], n[1]) for n in nodes], [n[2] for n in nodes], d["num_orientations"], d["forward"],
                   descriptor_dim=d["descriptor_dim"], forward_step=d["forward_step"],
                   forward_match_radius=d["forward_match_radius"], noise_level=d["noise_level"],
                   grid=None if d["grid"] is None else GridSpec.from_dict(d["grid"]))

    def save(self, path):
        with open(path, "w") as f:
            f.write(GRAPH_MAGIC + "\n")
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            magic = f.readline().strip()
            if magic != GRAPH_MAGIC:
                raise FormatError(f"{path}: expected {GRAPH_MAGIC} header, got {magic!r}")
            return cls.from_dict(json.load(f))


def view_descriptor(seed, orient, dim):
    rng = np.random.default_rng([seed, orient])
    return rng.uniform(-1.0, 1.0, dim)


def build_graph(poses, num_orientations=24, forward_step=1.0, forward_match_radius=0.7, *,
                descriptor_dim=128, noise_level=0.05, seed=0, alias_fraction=0.0):
    """Connect capture poses into a PanoGraph.

    ``alias_fraction`` of the nodes reuse another node's descriptor seed, which
    makes their views indistinguishable (visually repetitive places).
    """
    if len(poses) == 0:
        raise EmptyPoseList("no capture poses given")
    if forward_match_radius >= forward_step:
        raise ValueError("forward_match_radius must be smaller than forward_step")
    pos = np.array([(p.x, p.y) if isinstance(p, Pose2D) else tuple(p)[:2] for p in poses], dtype=float)
    tree = cKDTree(pos)
    dup = tree.query_pairs(1e-9)
    if dup:
        raise DuplicateNode(f"nodes {sorted(dup)[0]} share a position")

    n = len(pos)
    forward = np.full((n, num_orientations), -1, dtype=np.int64)
    phis = np.arange(num_orientations) * (2.0 * math.pi / num_orientations)
    offsets = forward_step * np.stack([np.cos(phis), np.sin(phis)], axis=1)
    for i in range(n):
        nominal = pos[i] + offsets
        for o, cands in enumerate(tree.query_ball_point(nominal, forward_match_radius)):
            cands = [c for c in cands if c != i]
            if not cands:
                continue
            d = np.hypot(*(pos[cands] - nominal[o]).T)
            # lexicographic (distance, id): lowest id wins exact ties
            best = min(zip(d.tolist(), cands))
            forward[i, o] = best[1]

    ss = np.random.SeedSequence(seed)
    seeds = ss.generate_state(n, dtype=np.uint64)
    if alias_fraction > 0 and n > 1:
        rng = np.random.default_rng(ss.spawn(1)[0])
        k = int(round(alias_fraction * n))
        victims = rng.choice(n, size=k, replace=False)
        for v in victims:
            seeds[v] = seeds[rng.integers(n)]
    return PanoGraph(pos, seeds, num_orientations, forward, descriptor_dim=descriptor_dim,
                     forward_step=forward_step, forward_match_radius=forward_match_radius,
                     noise_level=noise_level)


def step(graph, s, a):
    a = HighAction(a)
    n_o = graph.num_orientations
    if a == HighAction.TURN_LEFT:
        return ViewState(s.node_id, (s.orient + 1) % n_o)
    if a == HighAction.TURN_RIGHT:
        return ViewState(s.node_id, (s.orient - 1) % n_o)
    nxt = int(graph.forward[s.node_id, s.orient])
    if nxt < 0:
        raise ForwardBlocked(f"no forward edge from {s}")
    return ViewState(nxt, s.orient)


def transition(graph, s, a):
    """step() with blocked forwards turned into a stay-in-place move."""
    try:
        return step(graph, s, a)
    except ForwardBlocked:
        return s


def proximity_bit(graph, s):
    return int(graph.proximity_table[s.node_id, s.orient])


def observe(graph, s, rng_seed=0, noise_level=None):
    nl = graph.noise_level if noise_level is None else noise_level
    desc = graph.base_descriptors[s.node_id, s.orient].copy()
    if nl > 0:
        desc += np.random.default_rng(rng_seed).uniform(-nl, nl, graph.descriptor_dim)
    return Observation(desc, proximity_bit(graph, s))


def make_grid(graph, dims=(10, 10), bounds=None):
    """Overlay a rows x cols grid on the node bounding box (or on ``bounds``).

    ``bounds`` is ``((xmin, ymin), (xmax, ymax))``.
    """
    if graph.num_nodes == 0:
        raise EmptyPoseList("graph has no nodes")
    rows, cols = dims
    if bounds is None:
        lo, hi = graph.positions.min(axis=0), graph.positions.max(axis=0)
    else:
        lo, hi = np.asarray(bounds[0], float), np.asarray(bounds[1], float)
    extent = hi - lo
    cell = (extent[0] / cols if extent[0] > 0 else 1.0, extent[1] / rows if extent[1] > 0 else 1.0)
    proto = GridSpec((float(lo[0]), float(lo[1])), (float(cell[0]), float(cell[1])), (rows, cols), ())
    occupied = sorted({proto.cell_index(x, y) for x, y in graph.positions})
    return GridSpec(proto.origin, proto.cell_size, proto.dims, tuple(occupied))


def sample_target_image(graph, cell_rank, two_views=False, rng_seed=0):
    nodes = graph.cell_nodes(cell_rank)
    if len(nodes) == 0:
        raise EmptyCell(f"cell {cell_rank} holds no capture")
    rng = np.random.default_rng(rng_seed)
    node = int(nodes[rng.integers(len(nodes))])
    orient = int(rng.integers(graph.num_orientations))
    states = [ViewState(node, orient)]
    if two_views:
        states.append(ViewState(node, (orient + graph.num_orientations // 2) % graph.num_orientations))
    descs = tuple(graph.base_descriptors[s.node_id, s.orient].copy() for s in states)
    return ImageTarget(descs, cell_rank, tuple(states))


def read_poses(path):
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"x", "y"} <= set(reader.fieldnames):
            raise FormatError(f"{path}: pose CSV needs an x,y header")
        return [Pose2D(float(r["x"]), float(r["y"]), 0.0) for r in reader]


def write_poses(path, poses):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "y"])
        for p in poses:
            x, y = (p.x, p.y) if isinstance(p, Pose2D) else p[:2]
            w.writerow([repr(float(x)), repr(float(y))])


def choose_targets(graph, n=3):
    """Spread-out target cells by farthest-point sampling over occupied cell centres.

    Seeded with the cell farthest from the centroid of all occupied cells, so
    the choice is deterministic.
    """
    if graph.grid is None:
        raise ValueError("graph has no grid; call make_grid first")
    ranks = np.unique(graph.node_cell)
    centers = np.array([graph.grid.center(r) for r in ranks])
    n = min(n, len(ranks))
    chosen = [int(np.argmax(np.hypot(*(centers - centers.mean(axis=0)).T)))]
    dmin = np.hypot(*(centers - centers[chosen[0]]).T)
    while len(chosen) < n:
        i = int(np.argmax(dmin))
        chosen.append(i)
        dmin = np.minimum(dmin, np.hypot(*(centers - centers[i]).T))
    return sorted(int(ranks[i]) for i in chosen)
