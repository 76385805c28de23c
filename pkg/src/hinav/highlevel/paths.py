"""Supervision paths over the capture graph and the distance/progress labels derived from them."""
import heapq
import json
import math
from collections import deque

import numpy as np

from ..errors import DisconnectedPath, FormatError, NoTargetStates, UnknownState
from ..worldview import HighAction, ViewState

INF = math.inf


class PathSet:
    """Supervision paths, each a sequence of state indices ending in its target cell."""

    def __init__(self, graph, paths=()):
        self.graph = graph
        self.paths = [(int(t), np.asarray(p, dtype=np.int64)) for t, p in paths]
        self._dist = {}
        self._labels = {}

    def __len__(self):
        return len(self.paths)

    @property
    def targets(self):
        return sorted({t for t, _ in self.paths})

    def union(self, other):
        return PathSet(self.graph, self.paths + other.paths)

    def distance_table(self, target):
        """Remaining steps from each state's first occurrence to the path end, min over paths."""
        if target not in self._dist:
            d = np.full(self.graph.num_states, INF)
            for t, p in self.paths:
                if t != target or len(p) == 0:
                    continue
                uniq, first = np.unique(p, return_index=True)
                remaining = (len(p) - 1 - first).astype(float)
                np.minimum.at(d, uniq, remaining)
            d.flags.writeable = False
            self._dist[target] = d
        return self._dist[target]

    def label_tables(self, target):
        """Progress labels y and validity mask for every (state, action), shape (S, 3)."""
        if target not in self._labels:
            d = self.distance_table(target)
            succ = self.graph.successors
            dn = d[succ]
            valid = np.isfinite(d)[:, None] & np.isfinite(dn)
            with np.errstate(invalid="ignore"):
                y = np.where(valid, d[:, None] - dn, 0.0)
            self._labels[target] = (y, valid)
        return self._labels[target]

    def covered(self, target):
        return np.isfinite(self.distance_table(target))

    def to_lines(self):
        g = self.graph
        for t, p in self.paths:
            states = [[int(i) // g.num_orientations, int(i) % g.num_orientations] for i in p]
            yield json.dumps({"target": t, "path": states})

    def save(self, path):
        with open(path, "w") as f:
            for line in self.to_lines():
                f.write(line + "\n")

    def __eq__(self, other):
        if not isinstance(other, PathSet) or len(self) != len(other):
            return False
        return all(t1 == t2 and np.array_equal(p1, p2)
                   for (t1, p1), (t2, p2) in zip(self.paths, other.paths))


def _reverse_bfs(graph, goal_mask, allowed=None):
    succ = graph.successors
    S = graph.num_states
    preds = [[] for _ in range(S)]
    for s in range(S):
        if allowed is not None and not allowed[s]:
            continue
        for a in range(3):
            n = succ[s, a]
            if n != s and (allowed is None or allowed[n]):
                preds[n].append(s)
    dist = np.full(S, -1, dtype=np.int64)
    queue = deque()
    for s in np.flatnonzero(goal_mask):
        if allowed is None or allowed[s]:
            dist[s] = 0
            queue.append(s)
    while queue:
        s = queue.popleft()
        for p in preds[s]:
            if dist[p] < 0:
                dist[p] = dist[s] + 1
                queue.append(p)
    return dist


def shortest_paths(graph, targets, avoid_nodes=None):
    """Minimal action-count path from every state to the nearest state of each target cell.

    Ties between equally short continuations prefer Forward, then TurnLeft,
    then TurnRight.  ``avoid_nodes`` removes nodes from the search (used to
    synthesize route-restricted demonstrations).
    """
    allowed = None
    if avoid_nodes is not None and len(avoid_nodes):
        node_ok = np.ones(graph.num_nodes, dtype=bool)
        node_ok[np.asarray(list(avoid_nodes), dtype=np.int64)] = False
        allowed = np.repeat(node_ok, graph.num_orientations)
    succ = graph.successors
    out = []
    for t in targets:
        if t < 0 or graph.grid is None or t >= graph.grid.k:
            raise NoTargetStates(f"target cell {t} is not a valid cell rank")
        goal = graph.cell_state_mask(t)
        if allowed is not None:
            goal = goal & allowed
        if not goal.any():
            raise NoTargetStates(f"target cell {t} has no states")
        dist = _reverse_bfs(graph, goal, allowed)
        nxt = np.full(graph.num_states, -1, dtype=np.int64)
        for s in np.flatnonzero(dist > 0):
            for a in (HighAction.FORWARD, HighAction.TURN_LEFT, HighAction.TURN_RIGHT):
                n = succ[s, a]
                if n != s and dist[n] == dist[s] - 1:
                    nxt[s] = n
                    break
        for s in np.flatnonzero(dist >= 0):
            path = [s]
            while dist[path[-1]] > 0:
                path.append(nxt[path[-1]])
            out.append((t, path))
    return PathSet(graph, out)


def path_distance(x, g, P):
    return float(P.distance_table(g)[P.graph.state_index(x)])


def progress_label(a, x, g, P, graph=None):
    graph = graph or P.graph
    y, valid = P.label_tables(g)
    i = graph.state_index(x)
    return float(y[i, int(a)]), int(valid[i, int(a)])


def _connected(graph, s1, s2):
    return any(graph.successors[s1, a] == s2 and s2 != s1 for a in range(3))


def parse_path_lines(lines, graph):
    paths = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            target, seq = int(rec["target"]), rec["path"]
        except (ValueError, KeyError, TypeError) as e:
            raise FormatError(f"line {lineno}: {e}") from None
        idx = []
        for item in seq:
            s = ViewState(int(item[0]), int(item[1]))
            if not graph.is_valid(s):
                raise UnknownState(f"line {lineno}: state {s} not in graph")
            idx.append(graph.state_index(s))
        for s1, s2 in zip(idx, idx[1:]):
            if not _connected(graph, s1, s2):
                raise DisconnectedPath(f"line {lineno}: no action leads from {graph.state_of(s1)} to {graph.state_of(s2)}")
        if idx and graph.grid is not None and graph.node_cell[idx[-1] // graph.num_orientations] != target:
            raise DisconnectedPath(f"line {lineno}: path does not end in target cell {target}")
        paths.append((target, idx))
    return PathSet(graph, paths)


def load_demonstrations(path, graph):
    with open(path) as f:
        return parse_path_lines(f, graph)


def forward_lengths_to(graph, goal_mask):
    """Metric cost-to-go: forward moves cost their Euclidean length, turns are free."""
    succ = graph.successors
    S = graph.num_states
    n_o = graph.num_orientations
    preds = [[] for _ in range(S)]
    for s in range(S):
        for a in range(3):
            n = succ[s, a]
            if n == s:
                continue
            w = 0.0
            if a == HighAction.FORWARD:
                w = float(np.hypot(*(graph.positions[n // n_o] - graph.positions[s // n_o])))
            preds[n].append((s, w))
    dist = np.full(S, INF)
    heap = []
    for s in np.flatnonzero(goal_mask):
        dist[s] = 0.0
        heap.append((0.0, int(s)))
    heapq.heapify(heap)
    while heap:
        d, s = heapq.heappop(heap)
        if d > dist[s]:
            continue
        for p, w in preds[s]:
            nd = d + w
            if nd < dist[p]:
                dist[p] = nd
                heapq.heappush(heap, (nd, p))
    return dist
