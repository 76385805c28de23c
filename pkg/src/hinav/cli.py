"""Command-line entry point: ``hinav <subcommand> [options]``.

Every subcommand writes only under ``--out`` and echoes the resolved config
there as ``config.ini``.  Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from .config import load_config
from .errors import ConfigInvalid, NavError

log = logging.getLogger("hinav")

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _out(args, name):
    return os.path.join(args.out, name)


def _load_graph(path):
    from .worldview import PanoGraph
    return PanoGraph.load(path)


def _targets(args, cfg, graph):
    from .worldview import choose_targets
    if args.targets:
        return [int(t) for t in args.targets.split(",")]
    return choose_targets(graph, cfg.env.num_targets)


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


# -- subcommands ---------------------------------------------------------------------

def cmd_gen_map(args, cfg):
    from .traversal import generate_map
    from .worldview import write_poses
    env = cfg.env
    layout, poses, segs = generate_map(env.map, spacing=env.spacing, corridor_width=env.corridor_width,
                                       cell_size=env.cell_size, **env.map_kwargs())
    with open(_out(args, "layout.txt"), "w") as f:
        f.write(layout.to_text() + "\n")
    write_poses(_out(args, "poses.csv"), poses)
    _write_json(_out(args, "segments.json"), [[list(a), list(b)] for a, b in segs])
    print(f"layout {layout.shape[1]}x{layout.shape[0]} cells, {len(poses)} poses")


def cmd_build_graph(args, cfg):
    from .worldview import build_graph, make_grid, read_poses
    env = cfg.env
    g = build_graph(read_poses(args.poses), env.num_orientations, env.forward_step, env.forward_match_radius,
                    descriptor_dim=env.descriptor_dim, noise_level=env.noise_level, seed=env.graph_seed,
                    alias_fraction=env.alias_fraction)
    g = g.with_grid(make_grid(g, (env.grid_rows, env.grid_cols)))
    g.save(_out(args, "graph.json"))
    print(f"{g.num_nodes} nodes, {int((g.forward >= 0).sum())} forward edges, {g.grid.k} cells")


def cmd_plan_paths(args, cfg):
    from .highlevel import load_demonstrations, shortest_paths
    g = _load_graph(args.graph)
    targets = _targets(args, cfg, g)
    if args.demos:
        P = load_demonstrations(args.demos, g)
        if args.union:
            P = P.union(shortest_paths(g, targets))
    else:
        P = shortest_paths(g, targets)
    P.save(_out(args, "paths.jsonl"))
    print(f"{len(P)} paths for targets {sorted(P.targets)}")


def cmd_train_high(args, cfg):
    from dataclasses import replace
    from .highlevel import load_demonstrations, train_high
    g = _load_graph(args.graph)
    P = load_demonstrations(args.paths, g)
    hc = cfg.high if args.collectors is None else replace(cfg.high, collectors=args.collectors)
    targets = _targets(args, cfg, g) if args.targets else None

    def progress(row):
        print("step {} loss {:.4f} success {:.3f}".format(*row), flush=True)

    train_high(hc, g, P, targets, out_dir=args.out, progress=progress)


def cmd_train_low(args, cfg):
    from .lowlevel import ddpg_train
    from .maze import read_layout
    layout = read_layout(args.layout, cfg.env.cell_size)

    def progress(step, row):
        print("step {} episode {} return {:.2f} collision_rate {:.2f}".format(step, *row), flush=True)

    ddpg_train(cfg.low, layout, out_dir=args.out, progress=progress)


def _policy_factory(args, cfg, g):
    from .hierarchy import net_policy_factory, oracle_policy_factory
    from .highlevel import ValueNet, load_demonstrations
    if args.oracle:
        if not args.paths:
            raise UsageError("--oracle needs --paths")
        return oracle_policy_factory(load_demonstrations(args.paths, g))
    if not args.checkpoint:
        raise UsageError("give --checkpoint or --oracle")
    net = ValueNet.load(args.checkpoint)
    kind = "onehot"
    if net.target_kind != "onehot":
        kind = cfg.high.target_kind if cfg.high.target_kind != "onehot" else "image1"
    return net_policy_factory(net, g, kind)


def _report(args, rep):
    _write_json(_out(args, "report.json"), rep.to_dict())
    print(f"success {rep.success_rate:.3f} mean_ratio {rep.mean_ratio:.3f} runs {len(rep.runs)}")
    for t, row in rep.per_target().items():
        print(f"  target {t}: success {row['success_rate']:.3f} ratio {row['mean_ratio']:.3f}")


def cmd_eval_graph(args, cfg):
    from .hierarchy import evaluate
    g = _load_graph(args.graph)
    ev = cfg.eval
    rep = evaluate(g, _policy_factory(args, cfg, g), _targets(args, cfg, g), ev.runs_per_target,
                   min_start_distance=ev.min_start_distance, seed=ev.seed, success_radius=ev.success_radius,
                   max_steps=ev.max_steps, noise=ev.noise)
    _report(args, rep)


def cmd_eval_hier(args, cfg):
    from .hierarchy import HybridWorld, evaluate, insert_obstacles, obstacles_on_segments, write_trajectories
    from .lowlevel import Actor, NaiveForward
    from .maze import read_layout
    g = _load_graph(args.graph)
    ev = cfg.eval
    layout = read_layout(args.layout, cfg.env.cell_size)
    low = cfg.low
    world = HybridWorld(layout, g, cfg.env.snap_radius, num_beams=low.num_beams,
                        fov=np.radians(low.fov_deg), max_range=low.max_range, dt=low.dt, omega_max=low.omega_max)
    if args.obstacles:
        if not args.segments:
            raise UsageError("--obstacles needs --segments (from gen-map)")
        with open(args.segments) as f:
            segs = [tuple(map(tuple, s)) for s in json.load(f)]
        rng = np.random.default_rng(np.random.SeedSequence([ev.seed, 1]))
        obs = obstacles_on_segments(segs, ev.num_obstacles, rng, radius=ev.obstacle_radius)
        world = insert_obstacles(world, obs)
    if args.naive:
        actor = NaiveForward(low.omega_max)
    elif args.actor:
        actor = Actor.load(args.actor)
    else:
        raise UsageError("give --actor or --naive")
    records = []
    rep = evaluate(world, _policy_factory(args, cfg, g), _targets(args, cfg, g), ev.runs_per_target, actor,
                   min_start_distance=ev.min_start_distance, seed=ev.seed, success_radius=ev.success_radius,
                   max_steps=ev.max_steps, noise=ev.noise, records=records)
    write_trajectories(_out(args, "trajectories.jsonl"), records)
    with open(_out(args, "layout.txt"), "w") as f:
        f.write(world.layout.to_text() + "\n")
    _write_json(_out(args, "obstacles.json"), [[d.x, d.y, d.radius] for d in world.layout.obstacles])
    _report(args, rep)


def cmd_export_traj(args, cfg):
    from .hierarchy import export_svg, read_trajectories
    from .maze import Disc, read_layout
    layout = read_layout(args.layout, cfg.env.cell_size)
    if args.obstacles_file:
        with open(args.obstacles_file) as f:
            layout = layout.with_obstacles([Disc(*d) for d in json.load(f)])
    g = _load_graph(args.graph) if args.graph else None
    records = read_trajectories(args.trajectories)
    targets = sorted({r.target for r in records}) if g is not None else ()
    path = _out(args, "trajectories.svg")
    export_svg(path, layout, records, g, targets)
    print(f"wrote {path} ({len(records)} runs)")


# -- parser ---------------------------------------------------------------------------

def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI file with [env], [high], [low], [eval] sections")
    common.add_argument("--seed", type=int, help="seed for training and evaluation (overrides the config)")
    common.add_argument("--out", default=".", help="output directory (created if missing)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a single config value, repeatable")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress details")

    p = _Parser(prog="hinav", description="Hierarchical navigation: graph planning over captured views "
                                          "with a learned forward controller.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        sp.set_defaults(func=fn)
        return sp

    add("gen-map", cmd_gen_map, "generate a synthetic layout and traversal capture poses")

    sp = add("build-graph", cmd_build_graph, "connect capture poses into a capture graph")
    sp.add_argument("--poses", required=True, help="pose CSV with an x,y header")

    sp = add("plan-paths", cmd_plan_paths, "shortest-path supervision (or load demonstrations)")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--targets", help="comma-separated target cell ranks (default: spread-out choice)")
    sp.add_argument("--demos", help="demonstration JSONL to use instead of the planner")
    sp.add_argument("--union", action="store_true", help="with --demos, add planner paths as well")

    sp = add("train-high", cmd_train_high, "train the high-level value network")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--paths", required=True, help="path set JSONL from plan-paths")
    sp.add_argument("--targets", help="comma-separated target cell ranks (default: targets in the path set)")
    sp.add_argument("--collectors", type=int, help="parallel rollout collectors; 1 is bit-reproducible")

    sp = add("train-low", cmd_train_low, "train the forward controller with DDPG")
    sp.add_argument("--layout", required=True, help="ASCII layout ('#' wall, '.' free)")

    for name, fn, help_ in (("eval-graph", cmd_eval_graph, "evaluate a policy on the capture graph alone"),
                            ("eval-hier", cmd_eval_hier, "evaluate high + low level in the continuous maze")):
        sp = add(name, fn, help_)
        sp.add_argument("--graph", required=True)
        sp.add_argument("--checkpoint", help="value network checkpoint from train-high")
        sp.add_argument("--oracle", action="store_true", help="use the argmax-label oracle instead of a net")
        sp.add_argument("--paths", help="path set for --oracle")
        sp.add_argument("--targets", help="comma-separated target cell ranks")
        if name == "eval-hier":
            sp.add_argument("--layout", required=True)
            sp.add_argument("--actor", help="actor checkpoint from train-low")
            sp.add_argument("--naive", action="store_true", help="open-loop forward baseline instead of --actor")
            sp.add_argument("--obstacles", action="store_true", help="insert disc obstacles along corridors")
            sp.add_argument("--segments", help="segments.json from gen-map (for --obstacles)")

    sp = add("export-traj", cmd_export_traj, "render logged trajectories as SVG")
    sp.add_argument("--layout", required=True)
    sp.add_argument("--trajectories", required=True, help="trajectories.jsonl from eval-hier")
    sp.add_argument("--graph", help="draw capture nodes and targets")
    sp.add_argument("--obstacles-file", help="obstacles.json from eval-hier")
    return p


def resolve_config(args):
    cfg = load_config(args.config)
    for item in args.set:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        cfg.set(section.strip(), name.strip(), value)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg.validate()


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return USAGE_ERROR
    except SystemExit as e:   # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        os.makedirs(args.out, exist_ok=True)
        cfg.write(_out(args, "config.ini"))
        args.func(args, cfg)
    except (UsageError, ConfigInvalid) as e:
        print(f"{parser.format_usage()}hinav: error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except (NavError, OSError, ValueError, KeyError) as e:
        print(f"hinav: error: {e}", file=sys.stderr)
        return RUNTIME_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
