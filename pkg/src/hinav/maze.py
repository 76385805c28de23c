"""2D occupancy maze with a circular differential-drive robot and a 1D LiDAR."""
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonRectangular, OpenBoundary, PoseInsideWall
from .geometry import Pose2D

R_LIN = 1.0
R_ANG = -0.8
R_COLLISION = -1.0


@dataclass(frozen=True)
class Disc:
    x: float
    y: float
    radius: float


@dataclass(frozen=True, eq=False)
class Layout:
    """Occupancy grid; ``walls[iy, ix]`` is True for wall cells, iy grows with y.

    Cell (iy, ix) covers x in [ix*cs, (ix+1)*cs] and y in [iy*cs, (iy+1)*cs].
    """
    walls: np.ndarray
    cell_size: float = 0.5
    obstacles: tuple = ()

    @property
    def shape(self):
        return self.walls.shape

    @property
    def width(self):
        return self.walls.shape[1] * self.cell_size

    @property
    def height(self):
        return self.walls.shape[0] * self.cell_size

    @property
    def num_free(self):
        return int((~self.walls).sum())

    def is_wall_cell(self, ix, iy):
        ny, nx = self.walls.shape
        if ix < 0 or iy < 0 or ix >= nx or iy >= ny:
            return True
        return bool(self.walls[iy, ix])

    def with_obstacles(self, obstacles):
        return replace(self, obstacles=tuple(self.obstacles) + tuple(obstacles))

    def to_text(self):
        rows = ["".join("#" if w else "." for w in row) for row in self.walls[::-1]]
        return "\n".join(rows) + "\n"


@dataclass(frozen=True)
class RobotState:
    pose: Pose2D
    radius: float = 0.3
    wheel_base: float = 0.4
    wheel_radius: float = 0.1

    def __post_init__(self):
        if min(self.radius, self.wheel_base, self.wheel_radius) <= 0:
            raise ValueError("robot geometry must be positive")

    def moved(self, pose):
        return replace(self, pose=pose)


@dataclass(frozen=True)
class Twist:
    omega_left: float
    omega_right: float

    def clamped(self, omega_max=5.0):
        return Twist(min(max(self.omega_left, -omega_max), omega_max),
                     min(max(self.omega_right, -omega_max), omega_max))


@dataclass(frozen=True, eq=False)
class LidarScan:
    ranges: np.ndarray
    bearings: np.ndarray = field(default=None, repr=False)


def load_layout(text, cell_size=0.5):
    lines = [ln.rstrip("\r\n") for ln in text.splitlines()]
    while lines and not lines[-1].strip():
        lines.pop()
    while lines and not lines[0].strip():
        lines.pop(0)
    if not lines:
        raise NonRectangular("empty layout")
    width = len(lines[0])
    if any(len(ln) != width for ln in lines):
        raise NonRectangular("layout rows differ in length")
    bad = set("".join(lines)) - {"#", "."}
    if bad:
        raise ValueError(f"unexpected layout characters: {sorted(bad)}")
    grid = np.array([[c == "#" for c in ln] for ln in lines], dtype=bool)
    if not (grid[0].all() and grid[-1].all() and grid[:, 0].all() and grid[:, -1].all()):
        raise OpenBoundary("layout boundary must be all walls")
    walls = grid[::-1].copy()
    walls.flags.writeable = False
    return Layout(walls, float(cell_size))


def read_layout(path, cell_size=0.5):
    with open(path) as f:
        return load_layout(f.read(), cell_size)


def point_in_wall(layout, x, y):
    cs = layout.cell_size
    if layout.is_wall_cell(int(math.floor(x / cs)), int(math.floor(y / cs))):
        return True
    return any(math.hypot(x - d.x, y - d.y) < d.radius for d in layout.obstacles)


def _dda(layout, x0, y0, dx, dy, max_range):
    """Distance along a unit ray to the first wall cell boundary (Amanatides-Woo)."""
    cs = layout.cell_size
    ix, iy = int(math.floor(x0 / cs)), int(math.floor(y0 / cs))
    if dx > 0:
        step_x, t_max_x, t_dx = 1, ((ix + 1) * cs - x0) / dx, cs / dx
    elif dx < 0:
        step_x, t_max_x, t_dx = -1, (ix * cs - x0) / dx, -cs / dx
    else:
        step_x, t_max_x, t_dx = 0, math.inf, math.inf
    if dy > 0:
        step_y, t_max_y, t_dy = 1, ((iy + 1) * cs - y0) / dy, cs / dy
    elif dy < 0:
        step_y, t_max_y, t_dy = -1, (iy * cs - y0) / dy, -cs / dy
    else:
        step_y, t_max_y, t_dy = 0, math.inf, math.inf
    walls = layout.walls
    ny, nx = walls.shape
    while True:
        if t_max_x < t_max_y:
            t = t_max_x
            ix += step_x
            t_max_x += t_dx
        else:
            t = t_max_y
            iy += step_y
            t_max_y += t_dy
        if t >= max_range:
            return max_range
        if ix < 0 or iy < 0 or ix >= nx or iy >= ny or walls[iy, ix]:
            return t


def _ray_disc(x0, y0, dx, dy, disc):
    ox, oy = x0 - disc.x, y0 - disc.y
    b = ox * dx + oy * dy
    c = ox * ox + oy * oy - disc.radius * disc.radius
    disc_ = b * b - c
    if disc_ < 0:
        return math.inf
    t = -b - math.sqrt(disc_)
    return t if t >= 0 else math.inf


def beam_bearings(num_beams=64, fov=math.radians(220.0)):
    if num_beams == 1:
        return np.zeros(1)
    return -fov / 2 + np.arange(num_beams) * (fov / (num_beams - 1))


def raycast(layout, pose, num_beams=64, fov=math.radians(220.0), max_range=5.0):
    if point_in_wall(layout, pose.x, pose.y):
        raise PoseInsideWall(f"pose {pose} lies inside an occupied cell")
    rel = beam_bearings(num_beams, fov)
    ranges = np.empty(num_beams)
    for i, b in enumerate(rel):
        ang = pose.theta + b
        dx, dy = math.cos(ang), math.sin(ang)
        r = _dda(layout, pose.x, pose.y, dx, dy, max_range)
        for d in layout.obstacles:
            r = min(r, _ray_disc(pose.x, pose.y, dx, dy, d))
        ranges[i] = min(r, max_range)
    return LidarScan(ranges, rel)


def wheel_velocities(a, wheel_radius=0.1, wheel_base=0.4):
    v_lin = wheel_radius * (a.omega_left + a.omega_right) / 2.0
    v_ang = wheel_radius * (a.omega_right - a.omega_left) / wheel_base
    return v_lin, v_ang


def integrate_arc(pose, v_lin, v_ang, dt):
    th = pose.theta
    if abs(v_ang) < 1e-9:
        return Pose2D(pose.x + v_lin * dt * math.cos(th), pose.y + v_lin * dt * math.sin(th), th)
    rad = v_lin / v_ang
    th2 = th + v_ang * dt
    return Pose2D(pose.x + rad * (math.sin(th2) - math.sin(th)),
                  pose.y - rad * (math.cos(th2) - math.cos(th)), th2)


def step_dynamics(state, a, dt=0.1, omega_max=5.0):
    if dt <= 0:
        raise ValueError("dt must be positive")
    v_lin, v_ang = wheel_velocities(a.clamped(omega_max), state.wheel_radius, state.wheel_base)
    return state.moved(integrate_arc(state.pose, v_lin, v_ang, dt))


def distance_to_walls(layout, x, y, search=None):
    """Distance from a point to the nearest wall cell rectangle or obstacle disc."""
    cs = layout.cell_size
    reach = search if search is not None else max(layout.width, layout.height)
    i0, i1 = int(math.floor((x - reach) / cs)), int(math.floor((x + reach) / cs))
    j0, j1 = int(math.floor((y - reach) / cs)), int(math.floor((y + reach) / cs))
    best = math.inf
    for iy in range(j0, j1 + 1):
        for ix in range(i0, i1 + 1):
            if not layout.is_wall_cell(ix, iy):
                continue
            ddx = max(ix * cs - x, 0.0, x - (ix + 1) * cs)
            ddy = max(iy * cs - y, 0.0, y - (iy + 1) * cs)
            best = min(best, math.hypot(ddx, ddy))
    for d in layout.obstacles:
        best = min(best, math.hypot(x - d.x, y - d.y) - d.radius)
    return best


def collision(layout, state):
    x, y, r = state.pose.x, state.pose.y, state.radius
    cs = layout.cell_size
    for iy in range(int(math.floor((y - r) / cs)), int(math.floor((y + r) / cs)) + 1):
        for ix in range(int(math.floor((x - r) / cs)), int(math.floor((x + r) / cs)) + 1):
            if not layout.is_wall_cell(ix, iy):
                continue
            ddx = max(ix * cs - x, 0.0, x - (ix + 1) * cs)
            ddy = max(iy * cs - y, 0.0, y - (iy + 1) * cs)
            if ddx * ddx + ddy * ddy < r * r:
                return True
    return any(math.hypot(x - d.x, y - d.y) < r + d.radius for d in layout.obstacles)


def reward(prev, a, next_state, collided, omega_max=5.0):
    if collided:
        return R_COLLISION
    v_lin, v_ang = wheel_velocities(a.clamped(omega_max), prev.wheel_radius, prev.wheel_base)
    return R_LIN * v_lin + R_ANG * abs(v_ang)


def advance(layout, state, a, dt=0.1, omega_max=5.0):
    """One control step with post-step collision check.

    Substeps keep each displacement under half the robot radius so thin
    walls cannot be tunnelled through.  Returns (next_state, collided).
    """
    a = a.clamped(omega_max)
    v_lin, _ = wheel_velocities(a, state.wheel_radius, state.wheel_base)
    n_sub = max(1, int(math.ceil(abs(v_lin) * dt / (state.radius / 2.0))))
    cur = state
    for _ in range(n_sub):
        cur = step_dynamics(cur, a, dt / n_sub, omega_max)
        if collision(layout, cur):
            return cur, True
    return cur, False


def free_cells(layout):
    iy, ix = np.nonzero(~layout.walls)
    return ix, iy


def random_free_pose(layout, rng, radius=0.3, clearance=0.1, max_tries=10000):
    """Uniform pose in free space whose disc keeps ``clearance`` from walls."""
    ix, iy = free_cells(layout)
    cs = layout.cell_size
    for _ in range(max_tries):
        k = rng.integers(len(ix))
        x = (ix[k] + rng.random()) * cs
        y = (iy[k] + rng.random()) * cs
        probe = RobotState(Pose2D(x, y, 0.0), radius=radius + clearance)
        if not collision(layout, probe):
            return Pose2D(x, y, rng.uniform(-math.pi, math.pi))
    raise RuntimeError("no collision-free pose found")


class MazeEnv:
    """Episodic wrapper used for low-level training and evaluation."""

    def __init__(self, layout, *, num_beams=64, fov=math.radians(220.0), max_range=5.0,
                 dt=0.1, omega_max=5.0, max_steps=200, robot=None, num_obstacles=0,
                 obstacle_radius=(0.15, 0.35)):
        self.base_layout = layout
        self.layout = layout
        self.num_beams = num_beams
        self.fov = fov
        self.max_range = max_range
        self.dt = dt
        self.omega_max = omega_max
        self.max_steps = max_steps
        self.robot = robot or RobotState(Pose2D(0, 0, 0))
        self.num_obstacles = num_obstacles
        self.obstacle_radius = obstacle_radius
        self.state = None
        self.steps = 0
        self.scans = []

    def scan(self, pose):
        return raycast(self.layout, pose, self.num_beams, self.fov, self.max_range).ranges

    def stack(self):
        return np.stack(self.scans[-3:], axis=1)[:, :, None]

    def reset(self, rng, pose=None):
        self.layout = self.base_layout
        if self.num_obstacles:
            discs = []
            for _ in range(self.num_obstacles):
                p = random_free_pose(self.layout, rng, radius=self.obstacle_radius[1], clearance=0.0)
                discs.append(Disc(p.x, p.y, rng.uniform(*self.obstacle_radius)))
            self.layout = self.base_layout.with_obstacles(discs)
        if pose is None:
            pose = random_free_pose(self.layout, rng, radius=self.robot.radius)
        self.state = self.robot.moved(pose)
        self.steps = 0
        s = self.scan(pose)
        self.scans = [s, s, s]
        return self.stack()

    def step(self, a):
        prev = self.state
        nxt, collided = advance(self.layout, prev, a, self.dt, self.omega_max)
        r = reward(prev, a, nxt, collided, self.omega_max)
        self.state = nxt
        self.steps += 1
        done = collided or self.steps >= self.max_steps
        if not collided:
            self.scans.append(self.scan(nxt.pose))
            self.scans = self.scans[-3:]
        return self.stack(), r, done, collided
