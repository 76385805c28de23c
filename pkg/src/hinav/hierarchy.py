"""High-level graph policy driving the learned forward controller in the continuous maze.

Also hosts the evaluation protocol shared by graph-only and hybrid runs:
seeded far-away starts, success within a radius of the target cell centre,
and the path-length ratio against the shortest graph route.
"""
import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import CorridorFullyBlocked
from .geometry import Pose2D
from .highlevel.paths import forward_lengths_to
from .highlevel.rollout import NetPolicy, OraclePolicy, rollout_graph
from .highlevel.training import make_target
from .lowlevel.executor import Outcome, execute_forward
from .maze import Disc, RobotState, point_in_wall, raycast
from .worldview import PROXIMITY_RADIUS, HighAction, Observation, ViewState

log = logging.getLogger(__name__)

SUCCESS = "Success"
TIMEOUT = "Timeout"
COLLISION = "Collision"
LOST = "Lost"


class HybridWorld:
    """A maze layout with a capture graph laid over its free space."""

    def __init__(self, layout, graph, snap_radius=0.7, robot=None, num_beams=64,
                 fov=math.radians(220.0), max_range=5.0, dt=0.1, omega_max=5.0):
        bare = replace(layout, obstacles=())
        inside = [i for i, (x, y) in enumerate(graph.positions) if point_in_wall(bare, x, y)]
        if inside:
            raise ValueError(f"graph nodes {inside[:5]} lie inside walls")
        self.layout = layout
        self.graph = graph
        self.snap_radius = float(snap_radius)
        self.robot = robot or RobotState(Pose2D(0.0, 0.0, 0.0))
        self.num_beams = num_beams
        self.fov = fov
        self.max_range = max_range
        self.dt = dt
        self.omega_max = omega_max

    def replace_layout(self, layout):
        return HybridWorld(layout, self.graph, self.snap_radius, self.robot, self.num_beams, self.fov,
                           self.max_range, self.dt, self.omega_max)

    def scan(self, pose):
        return raycast(self.layout, pose, self.num_beams, self.fov, self.max_range).ranges

    def snap(self, pose):
        """Graph view state seen from ``pose`` and the distance to its node."""
        dist, node = self.graph.kdtree.query([pose.x, pose.y])
        n_o = self.graph.num_orientations
        orient = int(round(pose.theta / self.graph.turn_angle)) % n_o
        return ViewState(int(node), orient), float(dist)

    def node_pose(self, s):
        x, y = self.graph.positions[s.node_id]
        return Pose2D(x, y, self.graph.heading(s.orient))


def virtual_observe(world, pose, rng_seed=0, noise_level=None):
    """Descriptor of the nearest graph view plus a LiDAR-derived proximity bit."""
    s, _ = world.snap(pose)
    g = world.graph
    nl = g.noise_level if noise_level is None else noise_level
    desc = g.base_descriptors[s.node_id, s.orient].copy()
    if nl > 0:
        desc += np.random.default_rng(rng_seed).uniform(-nl, nl, g.descriptor_dim)
    prox = int(np.min(world.scan(pose)) < PROXIMITY_RADIUS)
    return Observation(desc, prox)


@dataclass
class RunRecord:
    start: Pose2D
    target: int
    steps: list = field(default_factory=list)        # (pose, HighAction, low-level outcome or None)
    result: str = TIMEOUT
    path_length: float = 0.0
    trajectory: list = field(default_factory=list)   # (x, y) at every control step
    nodes: list = field(default_factory=list)        # snapped graph node per high-level step

    @property
    def actions(self):
        return [a for _, a, _ in self.steps]

    def to_dict(self):
        return {
            "start": [self.start.x, self.start.y, self.start.theta],
            "target": self.target,
            "result": self.result,
            "path_length": self.path_length,
            "steps": [{"pose": [p.x, p.y, p.theta], "action": a.name,
                       "outcome": None if o is None else o.value} for p, a, o in self.steps],
            "trajectory": [list(xy) for xy in self.trajectory],
            "nodes": list(self.nodes),
        }

    @classmethod
    def from_dict(cls, d):
        steps = [(Pose2D(*s["pose"]), HighAction[s["action"]],
                  None if s["outcome"] is None else Outcome(s["outcome"])) for s in d["steps"]]
        return cls(Pose2D(*d["start"]), int(d["target"]), steps, d["result"], float(d["path_length"]),
                   [tuple(xy) for xy in d["trajectory"]], list(d["nodes"]))


def run_hierarchical(world, policy, actor, start, target, max_high_steps=150, success_radius=3.0,
                     rng=None, noise=True):
    """Drive ``policy`` (graph level) with ``actor`` executing every Forward in the maze."""
    rng = rng or np.random.default_rng(0)
    center = np.asarray(world.graph.grid.center(target))
    state = world.robot.moved(start)
    rec = RunRecord(start, int(target), trajectory=[start.xy])
    policy.reset()
    lost_radius = 3.0 * world.snap_radius
    while True:
        pose = state.pose
        if math.hypot(pose.x - center[0], pose.y - center[1]) <= success_radius:
            rec.result = SUCCESS
            break
        if len(rec.steps) >= max_high_steps:
            rec.result = TIMEOUT
            break
        vs, d = world.snap(pose)
        if d > lost_radius:
            rec.result = LOST
            break
        obs = virtual_observe(world, pose, int(rng.integers(2 ** 63)), None if noise else 0.0)
        a = HighAction(policy.act(obs, vs))
        rec.nodes.append(vs.node_id)
        if a == HighAction.FORWARD:
            trace = []
            state, outcome = execute_forward(actor, world.layout, state, 1.0, dt=world.dt,
                                             omega_max=world.omega_max, num_beams=world.num_beams,
                                             fov=world.fov, max_range=world.max_range, trace=trace)
            for p, _ in trace:
                prev = rec.trajectory[-1]
                rec.path_length += math.hypot(p.x - prev[0], p.y - prev[1])
                rec.trajectory.append(p.xy)
            rec.steps.append((pose, a, outcome))
            if outcome == Outcome.COLLISION:
                rec.result = COLLISION
                break
        else:
            sign = 1.0 if a == HighAction.TURN_LEFT else -1.0
            state = state.moved(pose.rotated(sign * world.graph.turn_angle))
            rec.steps.append((pose, a, None))
    return rec


# -- evaluation protocol --------------------------------------------------

def success_mask(graph, target, success_radius=3.0):
    center = np.asarray(graph.grid.center(target))
    near = np.hypot(*(graph.positions - center).T) <= success_radius
    return np.repeat(near, graph.num_orientations)


def start_candidates(graph, target, min_start_distance, start_pool=None):
    """Nodes whose metric graph distance to the target cell is at least ``min_start_distance``."""
    d = forward_lengths_to(graph, graph.cell_state_mask(target))
    node_d = d.reshape(graph.num_nodes, graph.num_orientations).min(axis=1)
    ok = np.isfinite(node_d)
    if start_pool is not None:
        pool = np.zeros(graph.num_nodes, dtype=bool)
        pool[np.asarray(list(start_pool), dtype=np.int64)] = True
        ok &= pool
    if not ok.any():
        return np.array([], dtype=np.int64)
    thresh = min_start_distance
    if not (ok & (node_d >= thresh)).any():
        thresh = node_d[ok].max()
        log.warning("no start %.1f m from target %d; using farthest nodes at %.1f m",
                    min_start_distance, target, thresh)
    return np.flatnonzero(ok & (node_d >= thresh))


def net_policy_factory(net, graph, target_kind="onehot"):
    def make(target, rng):
        return NetPolicy(net, make_target(graph, target, target_kind, rng))
    return make


def oracle_policy_factory(paths):
    def make(target, rng):
        return OraclePolicy(paths, target)
    return make


@dataclass
class RunSummary:
    target: int
    start: ViewState
    result: str
    path_length: float
    shortest: float
    steps: int
    nodes: list

    @property
    def success(self):
        return self.result == SUCCESS

    @property
    def ratio(self):
        if not self.success or self.shortest <= 0:
            return float("nan")
        return self.path_length / self.shortest


@dataclass
class EvalReport:
    runs: list

    @property
    def success_rate(self):
        return float(np.mean([r.success for r in self.runs])) if self.runs else float("nan")

    @property
    def mean_ratio(self):
        vals = [r.ratio for r in self.runs if np.isfinite(r.ratio)]
        return float(np.mean(vals)) if vals else float("nan")

    def per_target(self):
        out = {}
        for t in sorted({r.target for r in self.runs}):
            sub = EvalReport([r for r in self.runs if r.target == t])
            out[t] = {"runs": len(sub.runs), "success_rate": sub.success_rate, "mean_ratio": sub.mean_ratio}
        return out

    def outcome_counts(self):
        out = {}
        for r in self.runs:
            out[r.result] = out.get(r.result, 0) + 1
        return out

    def to_dict(self):
        return {
            "success_rate": self.success_rate,
            "mean_path_ratio": self.mean_ratio,
            "num_runs": len(self.runs),
            "outcomes": self.outcome_counts(),
            "per_target": {str(k): v for k, v in self.per_target().items()},
            "runs": [{"target": r.target, "start": [r.start.node_id, r.start.orient], "result": r.result,
                      "path_length": r.path_length, "shortest": r.shortest, "steps": r.steps}
                     for r in self.runs],
        }


def evaluate(world_or_graph, policy_factory, targets, runs_per_target, actor=None, *,
             min_start_distance=15.0, seed=0, success_radius=3.0, max_steps=150, start_pool=None,
             noise=True, records=None, num_runs=None):
    """Seeded evaluation in graph-only mode (``actor`` None) or hybrid mode.

    ``world_or_graph`` is a PanoGraph for graph-only runs or a HybridWorld.
    Runs cycle through ``targets``; ``num_runs`` overrides the
    ``runs_per_target * len(targets)`` total.
    If ``records`` is a list, hybrid RunRecords are appended to it.
    """
    hybrid = isinstance(world_or_graph, HybridWorld)
    if hybrid and actor is None:
        raise ValueError("hybrid evaluation needs a forward actor")
    graph = world_or_graph.graph if hybrid else world_or_graph
    n_o = graph.num_orientations
    n_runs = runs_per_target * len(targets) if num_runs is None else int(num_runs)
    run_seeds = np.random.SeedSequence(seed).spawn(n_runs)
    cands = {t: start_candidates(graph, t, min_start_distance, start_pool) for t in targets}
    shortest = {t: forward_lengths_to(graph, success_mask(graph, t, success_radius)) for t in targets}
    runs = []
    for i in range(n_runs):
        t = targets[i % len(targets)]
        rng = np.random.default_rng(run_seeds[i])
        if len(cands[t]) == 0:
            continue
        node = int(cands[t][rng.integers(len(cands[t]))])
        s0 = ViewState(node, int(rng.integers(n_o)))
        policy = policy_factory(t, rng)
        best = float(shortest[t][graph.state_index(s0)])
        if hybrid:
            rec = run_hierarchical(world_or_graph, policy, actor, world_or_graph.node_pose(s0), t,
                                   max_steps, success_radius, rng, noise)
            if records is not None:
                records.append(rec)
            runs.append(RunSummary(t, s0, rec.result, rec.path_length, best, len(rec.steps), rec.nodes))
        else:
            gr = rollout_graph(graph, policy, s0, t, max_steps, success_radius, rng, noise)
            res = SUCCESS if gr.success else TIMEOUT
            runs.append(RunSummary(t, s0, res, gr.path_length, best, len(gr.actions),
                                   [s.node_id for s in gr.states]))
    return EvalReport(runs)


# -- obstacles --------------------------------------------------------------

def free_space_labels(layout, radius, resolution=0.05):
    """Connected components of the robot's configuration space on a fine raster."""
    cs = layout.cell_size
    f = int(round(cs / resolution))
    res = cs / f
    occ = np.kron(layout.walls.astype(np.uint8), np.ones((f, f), dtype=np.uint8)).astype(bool)
    clear = ndimage.distance_transform_edt(~occ) * res
    ny, nx = occ.shape
    ys = (np.arange(ny) + 0.5) * res
    xs = (np.arange(nx) + 0.5) * res
    X, Y = np.meshgrid(xs, ys)
    free = clear > radius
    for d in layout.obstacles:
        free &= np.hypot(X - d.x, Y - d.y) >= radius + d.radius
    labels, _ = ndimage.label(free)
    return labels, res


def _node_labels(labels, res, positions):
    iy = np.clip((positions[:, 1] / res).astype(int), 0, labels.shape[0] - 1)
    ix = np.clip((positions[:, 0] / res).astype(int), 0, labels.shape[1] - 1)
    return labels[iy, ix]


def insert_obstacles(world, obstacles):
    """New world whose layout carries ``obstacles``; the graph is untouched.

    Raises CorridorFullyBlocked if the discs cut the robot's free space so
    that graph nodes reachable from each other before become separated.
    """
    obstacles = [o if isinstance(o, Disc) else Disc(*o) for o in obstacles]
    if not obstacles:
        return world
    new_layout = world.layout.with_obstacles(obstacles)
    r = world.robot.radius
    before, res = free_space_labels(world.layout, r)
    after, _ = free_space_labels(new_layout, r)
    pos = world.graph.positions
    lb, la = _node_labels(before, res, pos), _node_labels(after, res, pos)
    keep = (lb > 0) & (la > 0)
    for comp in np.unique(lb[keep]):
        if len(np.unique(la[keep & (lb == comp)])) > 1:
            raise CorridorFullyBlocked("obstacles leave no passage wide enough for the robot")
    return world.replace_layout(new_layout)


def obstacles_on_segments(segments, count, rng, radius=0.35, offset=0.3, margin=0.3):
    """Discs placed along corridor centrelines, pushed ``offset`` to one side."""
    lengths = np.array([math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in segments])
    idx = rng.choice(len(segments), size=count, replace=count > len(segments), p=lengths / lengths.sum())
    out = []
    for i in idx:
        (x0, y0), (x1, y1) = segments[i]
        t = rng.uniform(margin, 1.0 - margin)
        L = lengths[i]
        nx, ny = -(y1 - y0) / L, (x1 - x0) / L
        side = offset if rng.random() < 0.5 else -offset
        out.append(Disc(x0 + t * (x1 - x0) + side * nx, y0 + t * (y1 - y0) + side * ny, radius))
    return out


# -- logs and figures --------------------------------------------------------

def write_trajectories(path, records):
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec.to_dict()) + "\n")


def read_trajectories(path):
    with open(path) as f:
        return [RunRecord.from_dict(json.loads(ln)) for ln in f if ln.strip()]


def export_svg(path, layout, records, graph=None, targets=()):
    """Top-down figure of the layout with trajectories overlaid."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.patches import Circle

    fig, ax = plt.subplots(figsize=(8, 8 * layout.height / max(layout.width, 1e-9)))
    ax.imshow(layout.walls, origin="lower", cmap="Greys", extent=(0, layout.width, 0, layout.height),
              interpolation="nearest", vmin=0, vmax=1.5)
    for d in layout.obstacles:
        ax.add_patch(Circle((d.x, d.y), d.radius, color="tab:brown"))
    if graph is not None:
        ax.plot(graph.positions[:, 0], graph.positions[:, 1], ".", color="0.6", ms=2)
        for t in targets:
            cx, cy = graph.grid.center(t)
            ax.plot([cx], [cy], "*", color="tab:red", ms=12)
    colors = {SUCCESS: "tab:green", TIMEOUT: "tab:orange", COLLISION: "tab:red", LOST: "tab:purple"}
    for rec in records:
        xy = np.asarray(rec.trajectory)
        ax.plot(xy[:, 0], xy[:, 1], "-", lw=1.2, color=colors.get(rec.result, "k"), alpha=0.8)
        ax.plot(xy[:1, 0], xy[:1, 1], "o", color="k", ms=3)
    ax.set_xlim(0, layout.width)
    ax.set_ylim(0, layout.height)
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
