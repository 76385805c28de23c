"""Imitation training of the value network from on-policy unrolls (DAGGER style).

Collectors unroll a frozen snapshot of the policy from random starts and push
episodes, labelled with progress targets for all three actions, into a FIFO
replay buffer.  A single trainer samples batches of episodes and minimises the
masked squared error with BPTT and Adam.  With one collector everything runs
in-process on seeded generators and the run is bit-reproducible.
"""
import csv
import logging
import os
import threading
from collections import deque
from dataclasses import dataclass, fields

import numpy as np

from ..errors import ConfigInvalid
from ..nn import adam_step, clip_by_global_norm
from ..worldview import OneHotTarget, ViewState, sample_target_image
from .rollout import NetPolicy, rollout_graph
from .valuenet import ValueNet, select_action

log = logging.getLogger(__name__)


@dataclass
class Episode:
    start: ViewState
    target_rank: int
    target_vec: np.ndarray
    states: np.ndarray
    descriptors: np.ndarray
    proximity: np.ndarray
    actions: np.ndarray
    labels: np.ndarray
    mask: np.ndarray
    success: bool

    def __len__(self):
        return len(self.actions)


class ReplayBuffer:
    """Bounded FIFO of episodes; thread-safe append, uniform sampling."""

    def __init__(self, capacity=2048):
        self.capacity = capacity
        self._items = deque(maxlen=capacity)
        self._lock = threading.Lock()
        self.total_added = 0

    def __len__(self):
        return len(self._items)

    def append(self, item):
        with self._lock:
            self._items.append(item)
            self.total_added += 1

    def sample(self, rng, n):
        with self._lock:
            idx = rng.integers(len(self._items), size=n)
            return [self._items[i] for i in idx]


@dataclass
class HighTrainConfig:
    steps: int = 20000
    batch_size: int = 8
    unroll: int = 40
    lr: float = 1e-4
    collectors: int = 4
    refresh_interval: int = 500
    buffer_capacity: int = 2048
    warmup_episodes: int = 64
    episodes_per_step: int = 1
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.3
    embed_dim: int = 64
    fusion_dim: int = 64
    lstm_dim: int = 64
    target_kind: str = "onehot"
    grad_clip: float = 0.0
    eval_interval: int = 1000
    eval_runs: int = 30
    max_eval_steps: int = 150
    success_radius: float = 3.0
    checkpoint_interval: int = 5000
    seed: int = 0

    def validate(self):
        if self.steps < 0 or self.batch_size < 1 or self.unroll < 1 or self.collectors < 1:
            raise ConfigInvalid("steps, batch_size, unroll and collectors must be positive")
        if self.lr <= 0 or self.buffer_capacity < self.batch_size:
            raise ConfigInvalid("lr must be positive and the buffer must hold a batch")
        if self.target_kind not in ("onehot", "image1", "image2"):
            raise ConfigInvalid(f"unknown target_kind {self.target_kind!r}")
        if self.refresh_interval < 1 or self.eval_interval < 1:
            raise ConfigInvalid("intervals must be positive")
        return self

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def epsilon_at(step, cfg):
    horizon = max(1.0, cfg.eps_fraction * cfg.steps)
    frac = min(1.0, step / horizon)
    return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)


def make_target(graph, target_rank, kind, rng):
    if kind == "onehot":
        return OneHotTarget(target_rank)
    return sample_target_image(graph, target_rank, two_views=(kind == "image2"),
                               rng_seed=int(rng.integers(2 ** 63)))


def unroll_episode(net, graph, paths, start, target, T=40, rng=None, epsilon=0.0, target_rank=None):
    """Roll out ``net`` from ``start``; record observations and masked labels for all actions."""
    rng = rng or np.random.default_rng(0)
    if target_rank is None:
        target_rank = target.cell_rank
    y_tab, m_tab = paths.label_tables(target_rank)
    in_target = graph.cell_state_mask(target_rank)
    tvec = net.encode_target(target)
    succ = graph.successors
    base = graph.base_descriptors.reshape(graph.num_states, -1)
    prox_tab = graph.proximity_table.reshape(-1)
    nl = graph.noise_level
    D = graph.descriptor_dim

    s = graph.state_index(start)
    lstm = net.initial_state(1)
    states, descs, proxs, acts = [], [], [], []
    success = False
    for _ in range(T):
        if in_target[s]:
            success = True
            break
        desc = base[s] + rng.uniform(-nl, nl, D) if nl > 0 else base[s].copy()
        p = float(prox_tab[s])
        v, lstm = net.step(desc[None], np.array([p]), tvec[None], lstm)
        a = int(select_action(v[0], epsilon, rng))
        states.append(s)
        descs.append(desc)
        proxs.append(p)
        acts.append(a)
        s = int(succ[s, a])
    else:
        success = bool(in_target[s])
    states = np.asarray(states, dtype=np.int64)
    return Episode(start, target_rank, tvec, states,
                   np.asarray(descs, dtype=np.float32).reshape(len(states), D),
                   np.asarray(proxs), np.asarray(acts, dtype=np.int64),
                   y_tab[states], m_tab[states], success)


def batch_arrays(episodes, D):
    B = len(episodes)
    T = max(len(e) for e in episodes)
    desc = np.zeros((B, T, D))
    prox = np.zeros((B, T))
    y = np.zeros((B, T, 3))
    mask = np.zeros((B, T, 3), dtype=bool)
    tvec = np.stack([e.target_vec for e in episodes])
    for b, e in enumerate(episodes):
        n = len(e)
        desc[b, :n] = e.descriptors
        prox[b, :n] = e.proximity
        y[b, :n] = e.labels
        mask[b, :n] = e.mask
    return desc, prox, tvec, y, mask


class Collector:
    """Unrolls a policy snapshot from random covered starts towards random targets."""

    def __init__(self, graph, paths, targets, cfg, rng):
        self.graph = graph
        self.paths = paths
        self.targets = list(targets)
        self.cfg = cfg
        self.rng = rng
        self.kind = cfg.target_kind
        self.starts = {}
        for t in self.targets:
            ok = paths.covered(t) & ~graph.cell_state_mask(t)
            self.starts[t] = np.flatnonzero(ok)
            if len(self.starts[t]) == 0:
                raise ConfigInvalid(f"target {t} has no covered start states")

    def collect(self, net, epsilon):
        rng = self.rng
        t = self.targets[int(rng.integers(len(self.targets)))]
        pool = self.starts[t]
        start = self.graph.state_of(int(pool[rng.integers(len(pool))]))
        target = make_target(self.graph, t, self.kind, rng)
        return unroll_episode(net, self.graph, self.paths, start, target, self.cfg.unroll, rng,
                              epsilon, target_rank=t)


class SnapshotBox:
    """Atomic publication of immutable policy snapshots to collectors."""

    def __init__(self, net):
        self._lock = threading.Lock()
        self._item = (0, net.snapshot())

    def publish(self, version, net):
        snap = net.snapshot()
        with self._lock:
            self._item = (version, snap)

    def get(self):
        with self._lock:
            return self._item


def eval_pairs(graph, paths, targets, n, rng, success_radius):
    """Fixed (start, target) pairs for monitoring training progress."""
    pairs = []
    centers = {t: np.asarray(graph.grid.center(t)) for t in targets}
    for i in range(n):
        t = targets[i % len(targets)]
        cov = paths.covered(t)
        far = np.hypot(*(graph.positions - centers[t]).T) > success_radius
        pool = np.flatnonzero(cov & np.repeat(far, graph.num_orientations))
        if len(pool) == 0:
            continue
        pairs.append((graph.state_of(int(pool[rng.integers(len(pool))])), t))
    return pairs


def graph_success_rate(net, graph, pairs, cfg, seed):
    rng = np.random.default_rng(seed)
    if not pairs:
        return float("nan")
    wins = 0
    for start, t in pairs:
        target = make_target(graph, t, cfg.target_kind, rng)
        run = rollout_graph(graph, NetPolicy(net, target), start, t, cfg.max_eval_steps,
                            cfg.success_radius, rng)
        wins += run.success
    return wins / len(pairs)


def new_value_net(graph, cfg):
    if cfg.target_kind == "onehot":
        target_dim, kind = graph.grid.k, "onehot"
    else:
        target_dim, kind = graph.descriptor_dim, "image"
    return ValueNet(graph.descriptor_dim, target_dim, cfg.embed_dim, cfg.fusion_dim, cfg.lstm_dim,
                    seed=cfg.seed, target_kind=kind)


def train_high(cfg, graph, paths, targets=None, out_dir=None, net=None, progress=None):
    """Train a value network; returns (net, metrics rows)."""
    cfg.validate()
    if graph.grid is None:
        raise ConfigInvalid("graph needs a grid (make_grid) before training")
    targets = list(targets if targets is not None else paths.targets)
    if not targets:
        raise ConfigInvalid("no targets to train on")
    seeds = np.random.SeedSequence(cfg.seed).spawn(3 + cfg.collectors)
    trainer_rng = np.random.default_rng(seeds[0])
    eval_rng = np.random.default_rng(seeds[1])
    net = net or new_value_net(graph, cfg)
    buffer = ReplayBuffer(cfg.buffer_capacity)
    collectors = [Collector(graph, paths, targets, cfg, np.random.default_rng(seeds[3 + i]))
                  for i in range(cfg.collectors)]
    pairs = eval_pairs(graph, paths, targets, cfg.eval_runs, eval_rng, cfg.success_radius)
    eval_seed = int(np.random.default_rng(seeds[2]).integers(2 ** 63))

    metrics = []
    metrics_file = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_file = open(os.path.join(out_dir, "metrics.csv"), "w", newline="")
        writer = csv.writer(metrics_file)
        writer.writerow(["step", "loss", "eval_success"])

    step_counter = [0]
    stop = threading.Event()
    threads = []
    box = SnapshotBox(net)
    snapshot = box.get()[1]

    if cfg.collectors > 1:
        def work(col):
            version, snap = box.get()
            while not stop.is_set():
                v, s = box.get()
                if v != version:
                    version, snap = v, s
                ep = col.collect(snap, epsilon_at(step_counter[0], cfg))
                if len(ep):
                    buffer.append(ep)

        threads = [threading.Thread(target=work, args=(c,), daemon=True) for c in collectors]
        for th in threads:
            th.start()

    def collect_sync(n):
        for _ in range(n):
            ep = collectors[0].collect(snapshot, epsilon_at(step_counter[0], cfg))
            if len(ep):
                buffer.append(ep)

    try:
        if cfg.collectors == 1:
            while len(buffer) < max(cfg.warmup_episodes, cfg.batch_size):
                collect_sync(1)
        else:
            while len(buffer) < max(cfg.warmup_episodes, cfg.batch_size):
                threading.Event().wait(0.01)

        running = []
        for step in range(1, cfg.steps + 1):
            step_counter[0] = step
            if cfg.collectors == 1:
                collect_sync(cfg.episodes_per_step)
            batch = buffer.sample(trainer_rng, cfg.batch_size)
            loss, grads = net.loss_and_grads(*batch_arrays(batch, graph.descriptor_dim))
            if cfg.grad_clip:
                grads, _ = clip_by_global_norm(grads, cfg.grad_clip)
            adam_step(net.params, grads, cfg.lr)
            running.append(loss)
            if step % cfg.refresh_interval == 0:
                box.publish(step, net)
                snapshot = box.get()[1]
            if step % cfg.eval_interval == 0 or step == cfg.steps:
                succ = graph_success_rate(net, graph, pairs, cfg, eval_seed)
                row = (step, float(np.mean(running)), succ)
                running = []
                metrics.append(row)
                if metrics_file is not None:
                    writer.writerow([row[0], repr(row[1]), repr(row[2])])
                    metrics_file.flush()
                log.info("step %d loss %.4f eval_success %.3f", *row)
                if progress:
                    progress(row)
            if out_dir is not None and cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
                net.save(os.path.join(out_dir, f"high_{step:06d}.ckpt"))
    finally:
        stop.set()
        for th in threads:
            th.join()
        if metrics_file is not None:
            metrics_file.close()
    if out_dir is not None:
        net.save(os.path.join(out_dir, "high.ckpt"))
    return net, metrics
