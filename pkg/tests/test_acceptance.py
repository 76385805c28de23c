"""Acceptance suite: every criterion at its stated tolerance, one PASS/FAIL line each.

Heavy artefacts (trained networks) are session fixtures shared between
criteria.  Timings in the budgets are wall-clock on a single CPU core.
"""
import json
import math
import time
from importlib.resources import files

import numpy as np
import pytest

from acceptance_log import criterion
from gradcheck import numeric_grad, rel_error
from hinav.cli import main as cli_main
from hinav.geometry import Pose2D
from hinav.hierarchy import (SUCCESS, HybridWorld, evaluate, insert_obstacles, net_policy_factory,
                             obstacles_on_segments, run_hierarchical)
from hinav.highlevel import (HighTrainConfig, OraclePolicy, ValueNet, path_distance, progress_label, shortest_paths,
                             train_high)
from hinav.lowlevel import Actor, Critic, DDPGConfig, NaiveForward, Outcome, ddpg_train, execute_forward
from hinav.maze import Disc, RobotState, Twist, load_layout, random_free_pose, raycast, step_dynamics
from hinav.nn import (LstmState, conv2d_backward, conv2d_forward, dense_backward, dense_forward,
                      lstm_backward_sequence, lstm_forward_sequence)
from hinav.traversal import generate_map
from hinav.worldview import HighAction, build_graph, choose_targets, make_grid, transition
from maps import oracle_distances, random_walk_graph

HIGH_STEPS = 20000
TWO_ROUTE_STEPS = 6000
DDPG_STEPS = 90000


def fixture_layout(name):
    return load_layout(files("hinav.fixtures").joinpath(name).read_text())


# -- shared artefacts ------------------------------------------------------------------

@pytest.fixture(scope="session")
def building():
    """~60-node building-like map: 2 x 2 blocks of 5 m rooms, captures every metre."""
    layout, poses, segs = generate_map("building", spacing=1.0, blocks=(2, 2), block_size=(5.0, 5.0))
    g = build_graph(poses, seed=1)
    g = g.with_grid(make_grid(g, (10, 10)))
    targets = choose_targets(g, 3)
    return layout, g, segs, targets, shortest_paths(g, targets)


def high_config(kind="onehot"):
    return HighTrainConfig(steps=HIGH_STEPS, collectors=1, target_kind=kind, eval_interval=2000)


@pytest.fixture(scope="session")
def high_nets(building):
    _, g, _, targets, P = building
    nets, seconds = {}, {}
    for kind in ("onehot", "image1", "image2"):
        t0 = time.perf_counter()
        nets[kind], _ = train_high(high_config(kind), g, P, targets)
        seconds[kind] = time.perf_counter() - t0
    return nets, seconds


@pytest.fixture(scope="session")
def actor():
    t0 = time.perf_counter()
    a, _, _ = ddpg_train(DDPGConfig(total_steps=DDPG_STEPS), fixture_layout("hallways.txt"))
    return a, time.perf_counter() - t0


def graph_report(g, net, kind, targets, seed=0):
    return evaluate(g, net_policy_factory(net, g, kind), targets, 20, min_start_distance=15.0, seed=seed)


# -- 1 ------------------------------------------------------------------------------------

def test_criterion_1_oracle_equivalence():
    with criterion(1, "shortest-path supervision matches an independent Dijkstra oracle") as info:
        t0 = time.perf_counter()
        states = mismatches = 0
        sizes = []
        for n, seed in ((30, 11), (45, 12), (60, 13), (80, 14), (100, 15)):
            g = random_walk_graph(n, seed)
            sizes.append(g.num_nodes)
            targets = [0, g.grid.k - 1]
            P = shortest_paths(g, targets)
            for t in targets:
                ref = oracle_distances(g, t)
                for s in np.flatnonzero(P.covered(t)):
                    x = g.state_of(int(s))
                    mismatches += int(path_distance(x, t, P) != ref[s])
                    if ref[s] > 0:
                        labels = [progress_label(a, x, t, P) for a in HighAction]
                        best = max((y, a) for a, (y, ok) in zip(HighAction, labels) if ok)[1]
                        mismatches += int(ref[g.state_index(transition(g, x, best))] != ref[s] - 1)
                    states += 1
                mismatches += int(np.sum(np.isfinite(ref) != P.covered(t)))
        elapsed = time.perf_counter() - t0
        info.update(graphs=sizes, states_checked=states, mismatches=mismatches, seconds=elapsed)
        assert mismatches == 0
        assert elapsed < 10.0


# -- 2 ------------------------------------------------------------------------------------

def _dense_err(rng, act):
    W, b, x, r = rng.normal(size=(6, 5)), rng.normal(size=5), rng.normal(size=(3, 6)), rng.normal(size=(3, 5))
    _, cache = dense_forward(W, b, x, act)
    grads = dense_backward(W, cache, r)
    loss = lambda: float(np.sum(dense_forward(W, b, x, act)[0] * r))  # noqa: E731
    return max(rel_error(a, numeric_grad(loss, v)) for a, v in zip(grads, (x, W, b)))


def _conv_err(rng):
    K, b, x = rng.normal(size=(3, 2, 2, 3)), rng.normal(size=3), rng.normal(size=(2, 9, 3, 2))
    _, cache = conv2d_forward(K, b, x, stride=(2, 1))
    r = rng.normal(size=cache[2].shape)
    grads = conv2d_backward(K, cache, r)
    loss = lambda: float(np.sum(conv2d_forward(K, b, x, stride=(2, 1))[0] * r))  # noqa: E731
    return max(rel_error(a, numeric_grad(loss, v)) for a, v in zip(grads, (x, K, b)))


def _lstm_err(rng):
    I, H, T, B = 3, 4, 5, 2
    Wx, Wh, b = rng.normal(size=(I, 4 * H)) * 0.5, rng.normal(size=(H, 4 * H)) * 0.5, rng.normal(size=4 * H)
    xs, h0, c0 = rng.normal(size=(B, T, I)), rng.normal(size=(B, H)), rng.normal(size=(B, H))
    r = rng.normal(size=(B, T, H))
    _, _, cache = lstm_forward_sequence(Wx, Wh, b, xs, LstmState(h0, c0))
    grads = lstm_backward_sequence(Wx, Wh, cache, r)
    loss = lambda: float(np.sum(lstm_forward_sequence(Wx, Wh, b, xs, LstmState(h0, c0))[0] * r))  # noqa: E731
    return max(rel_error(a, numeric_grad(loss, v)) for a, v in zip(grads, (xs, Wx, Wh, b, h0, c0)))


def _valuenet_err(rng, seed):
    net = ValueNet(6, 4, embed_dim=5, fusion_dim=7, lstm_dim=4, seed=seed)
    B, T = 2, 5
    batch = (rng.uniform(-1, 1, (B, T, 6)), rng.integers(0, 2, (B, T)).astype(float),
             np.eye(4)[rng.integers(4, size=B)], rng.normal(size=(B, T, 3)), rng.random((B, T, 3)) < 0.7)
    _, grads = net.loss_and_grads(*batch)
    return max(rel_error(grads[k], numeric_grad(lambda: net.loss_and_grads(*batch)[0], p))
               for k, p in net.params.params.items())


def _widen(net, rng):
    # the small uniform head init leaves a near-flat surface; widen it for the check
    for k, v in net.params.params.items():
        if k.endswith(".b"):
            v[...] = rng.normal(0, 0.1, v.shape)
        if k in ("head.W", "out.W"):
            v[...] = rng.normal(0, 0.5, v.shape)


def _actor_err(rng, seed):
    a = Actor.create(num_beams=32, seed=seed)
    _widen(a, rng)
    s, w = rng.uniform(0, 5, (2, 32, 3, 1)), rng.normal(size=(2, 2))
    _, cache = a.forward(s)
    grads = a.backward(cache, w)
    return max(rel_error(grads[k], numeric_grad(lambda: float(np.sum(w * a(s))), p))
               for k, p in a.params.params.items())


def _critic_err(rng, seed):
    c = Critic.create(num_beams=32, seed=seed)
    _widen(c, rng)
    s, act, w = rng.uniform(0, 5, (2, 32, 3, 1)), rng.uniform(-4, 4, (2, 2)), rng.normal(size=2)
    _, cache = c.forward(s, act)
    grads, da = c.backward(cache, w)
    loss = lambda: float(w @ c(s, act))  # noqa: E731
    errs = [rel_error(grads[k], numeric_grad(loss, p)) for k, p in c.params.params.items()]
    return max(errs + [rel_error(da, numeric_grad(loss, act))])


def test_criterion_2_gradient_suite():
    with criterion(2, "finite-difference gradient checks over 20 seeds") as info:
        t0 = time.perf_counter()
        worst = {"dense": 0.0, "conv": 0.0, "actor": 0.0, "critic": 0.0, "lstm_bptt": 0.0, "valuenet_bptt": 0.0}
        for seed in range(20):
            rng = np.random.default_rng(seed)
            worst["dense"] = max(worst["dense"], _dense_err(rng, "relu"), _dense_err(rng, "tanh"))
            worst["conv"] = max(worst["conv"], _conv_err(rng))
            worst["lstm_bptt"] = max(worst["lstm_bptt"], _lstm_err(rng))
            worst["valuenet_bptt"] = max(worst["valuenet_bptt"], _valuenet_err(rng, seed))
            worst["actor"] = max(worst["actor"], _actor_err(rng, seed))
            worst["critic"] = max(worst["critic"], _critic_err(rng, seed))
        elapsed = time.perf_counter() - t0
        info.update({k: float(v) for k, v in worst.items()}, seconds=elapsed)
        for k in ("dense", "conv", "actor", "critic"):
            assert worst[k] < 1e-4, k
        for k in ("lstm_bptt", "valuenet_bptt"):
            assert worst[k] < 1e-3, k
        assert elapsed < 60.0


# -- 3 ------------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_3_high_level_learning(building, high_nets):
    _, g, _, targets, _ = building
    with criterion(3, "graph-only success of the one-hot policy on the building map") as info:
        nets, seconds = high_nets
        rep = graph_report(g, nets["onehot"], "onehot", targets)
        info.update(nodes=g.num_nodes, runs=len(rep.runs), success=rep.success_rate, ratio=rep.mean_ratio,
                    steps=HIGH_STEPS, train_seconds=seconds["onehot"])
        assert len(rep.runs) == 60
        assert rep.success_rate >= 0.85
        assert rep.mean_ratio <= 1.5
        assert HIGH_STEPS <= 20000 and seconds["onehot"] < 30 * 60


# -- 4 ------------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_4_image_targets(building, high_nets):
    _, g, _, targets, _ = building
    with criterion(4, "image-target policies against one-hot targets") as info:
        nets, seconds = high_nets
        onehot = graph_report(g, nets["onehot"], "onehot", targets).success_rate
        one_view = graph_report(g, nets["image1"], "image1", targets).success_rate
        two_view = graph_report(g, nets["image2"], "image2", targets).success_rate
        info.update(onehot=onehot, image1=one_view, image2=two_view,
                    train_seconds=seconds["image1"] + seconds["image2"])
        assert abs(onehot - one_view) <= 0.15
        assert two_view >= one_view
        assert seconds["image1"] + seconds["image2"] < 30 * 60


# -- 5 ------------------------------------------------------------------------------------

def corridor_starts(n=100, seed=123):
    """Poses in the straight 2 m corridor fixture, roughly aligned with its axis."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        x, y = rng.uniform(2.0, 18.0), 1.5 + rng.uniform(-0.4, 0.4)
        th = rng.uniform(-math.radians(15), math.radians(15)) + (math.pi if rng.random() < 0.5 else 0.0)
        out.append(Pose2D(x, y, th))
    return out


@pytest.mark.slow
def test_criterion_5_low_level_learning(actor):
    with criterion(5, "trained actor: collision-free 1 m forwards and straightness") as info:
        net, seconds = actor
        lay = fixture_layout("corridor.txt")
        done = collisions = 0
        v_ang, disp = [], []
        for pose in corridor_starts():
            trace = []
            state, outcome = execute_forward(net, lay, RobotState(pose), trace=trace)
            done += outcome == Outcome.DONE
            collisions += outcome == Outcome.COLLISION
            disp.append(state.pose.distance_to(pose))
            v_ang += [abs(0.1 * (a.omega_right - a.omega_left) / 0.4) for _, a in trace]
        info.update(done=done, collisions=collisions, mean_abs_v_ang=float(np.mean(v_ang)),
                    min_disp=float(np.min(disp)), max_disp=float(np.max(disp)), train_seconds=seconds)
        assert done >= 95
        assert np.mean(v_ang) < 0.1
        assert seconds < 30 * 60


# -- 6 ------------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_6_hierarchical_integration(building, high_nets, actor):
    layout, g, segs, targets, _ = building
    with criterion(6, "trained high + trained low in the hybrid world") as info:
        t0 = time.perf_counter()
        net = high_nets[0]["onehot"]
        world = HybridWorld(layout, g)
        policy = net_policy_factory(net, g, "onehot")
        hyb = evaluate(world, policy, targets, 0, actor[0], num_runs=40, seed=0)
        cluttered = insert_obstacles(world, obstacles_on_segments(segs, 6, np.random.default_rng(0)))
        learned = evaluate(cluttered, policy, targets, 0, actor[0], num_runs=40, seed=1)
        naive = evaluate(cluttered, policy, targets, 0, NaiveForward(), num_runs=40, seed=1)
        elapsed = time.perf_counter() - t0
        info.update(runs=len(hyb.runs), success=hyb.success_rate, outcomes=hyb.outcome_counts(),
                    obstacles_learned=learned.success_rate, obstacles_naive=naive.success_rate, seconds=elapsed)
        assert len(hyb.runs) == 40
        assert hyb.success_rate >= 0.7
        assert learned.success_rate > naive.success_rate
        assert elapsed < 20 * 60


# -- 7 ------------------------------------------------------------------------------------

def dense_range(layout, pose, bearing, max_range, step=1e-3):
    ang = pose.theta + bearing
    dx, dy = math.cos(ang), math.sin(ang)
    t = 0.0
    while t < max_range:
        x, y = pose.x + t * dx, pose.y + t * dy
        if layout.is_wall_cell(int(math.floor(x / layout.cell_size)), int(math.floor(y / layout.cell_size))):
            return t
        t += step
    return max_range


def test_criterion_7_kinematics_and_raycast():
    with criterion(7, "closed-form arc vs Euler, DDA vs dense ray sampling") as info:
        t0 = time.perf_counter()
        rng = np.random.default_rng(7)
        arc_err = 0.0
        for _ in range(5):
            a = Twist(*rng.uniform(-5, 5, 2))
            th0 = rng.uniform(-math.pi, math.pi)
            s = step_dynamics(RobotState(Pose2D(0.0, 0.0, th0)), a, dt=0.1)
            r, b = 0.1, 0.4
            v, w = r * (a.omega_left + a.omega_right) / 2, r * (a.omega_right - a.omega_left) / b
            x = y = 0.0
            th = th0
            h = 0.1 / 10_000
            for _ in range(10_000):
                x += v * math.cos(th) * h
                y += v * math.sin(th) * h
                th += w * h
            arc_err = max(arc_err, math.hypot(s.pose.x - x, s.pose.y - y))
        lay = fixture_layout("hallways.txt")
        ray_err = 0.0
        for _ in range(20):
            pose = random_free_pose(lay, rng, radius=0.05, clearance=0.0)
            scan = raycast(lay, pose, num_beams=16)
            ref = [dense_range(lay, pose, b, 5.0) for b in scan.bearings]
            ray_err = max(ray_err, float(np.max(np.abs(scan.ranges - ref))))
        elapsed = time.perf_counter() - t0
        info.update(arc_error_m=arc_err, ray_error_m=ray_err, seconds=elapsed)
        assert arc_err < 1e-4
        assert ray_err < 2e-3
        assert elapsed < 10.0


# -- 8 ------------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_8_determinism(tmp_path, building, high_nets, actor):
    layout, g, _, targets, _ = building
    with criterion(8, "bit-reproducible training and evaluation") as info:
        env = ["--set", "env.map=loop", "--set", "env.spacing=1.0", "--set", "env.loop_width=9",
               "--set", "env.loop_height=6", "--set", "env.grid_rows=4", "--set", "env.grid_cols=4"]
        run = lambda *argv: cli_main([str(a) for a in argv])  # noqa: E731
        assert run("gen-map", "--out", tmp_path / "m", *env) == 0
        assert run("build-graph", "--poses", tmp_path / "m/poses.csv", "--out", tmp_path / "g", *env) == 0
        assert run("plan-paths", "--graph", tmp_path / "g/graph.json", "--out", tmp_path / "p", *env) == 0
        blobs = []
        for k in range(2):
            out = tmp_path / f"h{k}"
            assert run("train-high", "--graph", tmp_path / "g/graph.json", "--paths", tmp_path / "p/paths.jsonl",
                       "--collectors", 1, "--seed", 5, "--out", out, *env,
                       "--set", "high.steps=300", "--set", "high.eval_interval=100") == 0
            blobs.append(((out / "metrics.csv").read_bytes(), (out / "high.ckpt").read_bytes()))
        evals = []
        for _ in range(2):
            out = tmp_path / f"e{len(evals)}"
            assert run("eval-graph", "--graph", tmp_path / "g/graph.json", "--checkpoint", tmp_path / "h0/high.ckpt",
                       "--out", out, *env, "--set", "eval.runs_per_target=3") == 0
            policy = net_policy_factory(high_nets[0]["onehot"], g)
            gr = evaluate(g, policy, targets, 5, seed=3)
            hy = evaluate(HybridWorld(layout, g), policy, targets, 0, actor[0], num_runs=6, seed=3)
            evals.append((out / "report.json").read_bytes() + json.dumps([gr.to_dict(), hy.to_dict()]).encode())
        info.update(train_identical=blobs[0] == blobs[1], eval_identical=evals[0] == evals[1])
        assert blobs[0] == blobs[1]
        assert evals[0] == evals[1]


# -- 9 ------------------------------------------------------------------------------------

@pytest.fixture(scope="session")
def two_route():
    layout, poses, segs = generate_map("two-route", spacing=1.0)
    g = build_graph(poses, seed=2)
    g = g.with_grid(make_grid(g, (6, 10)))
    pos = g.positions
    y0 = segs[0][0][1]                    # approach corridor height after placement
    x_split, x_join = segs[1][0][0], segs[3][1][0]
    inner = (pos[:, 0] > x_split - 1e-9) & (pos[:, 0] < x_join + 1e-9)
    route_a = set(np.flatnonzero(inner & (pos[:, 1] > y0 + 0.5)).tolist())   # long northern loop
    route_b = set(np.flatnonzero(inner & (pos[:, 1] < y0 - 0.5)).tolist())   # short southern loop
    approach = np.flatnonzero(pos[:, 0] < x_split - 2.0).tolist()
    exit_node = int(np.argmax(pos[:, 0]))
    target = int(g.node_cell[exit_node])
    return g, route_a, route_b, approach, target


def route_visits(rep, route_a, route_b):
    a = sum(n in route_a for r in rep.runs for n in r.nodes)
    b = sum(n in route_b for r in rep.runs for n in r.nodes)
    return a, b


@pytest.mark.slow
def test_criterion_9_supervision_source(two_route):
    g, route_a, route_b, approach, target = two_route
    with criterion(9, "demonstrations on route A keep the policy off route B") as info:
        t0 = time.perf_counter()
        demos = shortest_paths(g, [target], avoid_nodes=route_b)
        planner = shortest_paths(g, [target])
        res = {}
        for name, P in (("demo", demos), ("planner", planner)):
            cfg = HighTrainConfig(steps=TWO_ROUTE_STEPS, collectors=1, eval_interval=TWO_ROUTE_STEPS, seed=3)
            net, _ = train_high(cfg, g, P, [target])
            rep = evaluate(g, net_policy_factory(net, g), [target], 40, min_start_distance=15.0, seed=9,
                           start_pool=approach)
            res[name] = (rep.success_rate,) + route_visits(rep, route_a, route_b)
        elapsed = time.perf_counter() - t0
        demo_ratio = res["demo"][2] / max(res["demo"][1], 1)
        planner_ratio = res["planner"][2] / max(res["planner"][1], 1)
        info.update(demo_success=res["demo"][0], demo_b_over_a=demo_ratio, planner_success=res["planner"][0],
                    planner_b_over_a=planner_ratio, seconds=elapsed)
        assert res["demo"][1] > 0
        assert demo_ratio < 0.10
        assert not planner_ratio < 0.10
        assert elapsed < 20 * 60


# -- obstacle detour example ------------------------------------------------------------

@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="the trained actor stalls in front of discs instead of steering past them")
def test_obstacle_detour_keeps_high_level_actions(actor):
    lay = fixture_layout("corridor.txt")
    g = build_graph([Pose2D(1.0 + 0.5 * i, 1.5) for i in range(39)], seed=3)
    g = g.with_grid(make_grid(g, (1, 10)))
    world, P = HybridWorld(lay, g), shortest_paths(g, [9])
    start = Pose2D(*g.positions[0], 0.0)
    disc = Disc(10.0, 1.2, 0.35)           # leaves a 0.95 m gap on the north side
    clear = run_hierarchical(world, OraclePolicy(P, 9), actor[0], start, 9, noise=False)
    blocked = run_hierarchical(insert_obstacles(world, [disc]), OraclePolicy(P, 9), actor[0], start, 9,
                               noise=False)
    assert clear.result == SUCCESS
    assert blocked.result == SUCCESS
    assert blocked.actions == clear.actions
    passing = [y for x, y in blocked.trajectory if abs(x - disc.x) < 0.2]
    assert passing and min(passing) > disc.y + disc.radius
