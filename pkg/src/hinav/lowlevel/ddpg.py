"""DDPG for the forward controller in the synthetic maze."""
import csv
import logging
import math
import os
from collections import deque
from dataclasses import dataclass, fields

import numpy as np

from ..errors import ConfigInvalid
from ..maze import MazeEnv, Twist
from ..nn import adam_step
from .networks import Actor, Critic, trunk_shapes

log = logging.getLogger(__name__)


@dataclass
class Transition:
    scan_stack: np.ndarray
    action: Twist
    reward: float
    next_scan_stack: np.ndarray
    done: bool


class TransitionBuffer:
    """Ring buffer of transitions stored as float32 arrays."""

    def __init__(self, capacity, num_beams):
        self.capacity = capacity
        self.obs = np.zeros((capacity, num_beams, 3), dtype=np.float32)
        self.next_obs = np.zeros((capacity, num_beams, 3), dtype=np.float32)
        self.act = np.zeros((capacity, 2))
        self.rew = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.size = 0
        self.pos = 0

    def __len__(self):
        return self.size

    def add(self, obs, act, rew, next_obs, done):
        i = self.pos
        self.obs[i] = obs.reshape(self.obs.shape[1:])
        self.next_obs[i] = next_obs.reshape(self.obs.shape[1:])
        self.act[i] = act
        self.rew[i] = rew
        self.done[i] = float(done)
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng, n):
        idx = rng.integers(self.size, size=n)
        return (self.obs[idx].astype(float), self.act[idx], self.rew[idx],
                self.next_obs[idx].astype(float), self.done[idx])


@dataclass
class DDPGConfig:
    total_steps: int = 90000
    batch_size: int = 256
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    tau: float = 0.01
    gamma: float = 0.99
    buffer_capacity: int = 100000
    warmup_steps: int = 2000
    noise_start: float = 0.4
    noise_end: float = 0.05
    noise_fraction: float = 0.6
    max_episode_steps: int = 200
    num_obstacles: int = 2
    num_beams: int = 64
    fov_deg: float = 220.0
    max_range: float = 5.0
    dt: float = 0.1
    omega_max: float = 5.0
    seed: int = 0

    def validate(self):
        if self.total_steps < 0 or self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ConfigInvalid("invalid step/batch/buffer sizes")
        if not 0 < self.tau <= 1 or not 0 <= self.gamma < 1:
            raise ConfigInvalid("tau must be in (0, 1] and gamma in [0, 1)")
        if self.lr_actor <= 0 or self.lr_critic <= 0:
            raise ConfigInvalid("learning rates must be positive")
        if trunk_shapes(self.num_beams)[1] < 1:
            raise ConfigInvalid(f"num_beams={self.num_beams} is too small for the conv trunk")
        return self

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def td_targets(rewards, done, q_next, gamma):
    """Critic regression targets; terminal transitions do not bootstrap."""
    return rewards + gamma * (1.0 - done) * q_next


def soft_update(target, online, tau):
    for k, v in online.params.params.items():
        t = target.params.params[k]
        t *= 1.0 - tau
        t += tau * v


def noise_at(step, cfg):
    horizon = max(1.0, cfg.noise_fraction * cfg.total_steps)
    frac = min(1.0, step / horizon)
    return cfg.noise_start + frac * (cfg.noise_end - cfg.noise_start)


def ddpg_update(actor, critic, actor_t, critic_t, batch, cfg):
    s, a, r, s2, d = batch
    B = len(r)
    y = td_targets(r, d, critic_t(s2, actor_t(s2)), cfg.gamma)
    q, cache = critic.forward(s, a)
    err = q - y
    grads_c, _ = critic.backward(cache, 2.0 * err / B)
    adam_step(critic.params, grads_c, cfg.lr_critic)

    mu, acache = actor.forward(s)
    _, ccache = critic.forward(s, mu)
    _, dq_da = critic.backward(ccache, -np.ones(B) / B, param_grads=False)
    adam_step(actor.params, actor.backward(acache, dq_da), cfg.lr_actor)

    soft_update(actor_t, actor, cfg.tau)
    soft_update(critic_t, critic, cfg.tau)
    return float(np.mean(err * err))


def ddpg_train(cfg, layout, out_dir=None, progress=None):
    """Train actor and critic; returns (actor, critic, metrics rows)."""
    cfg.validate()
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    env_rng = np.random.default_rng(seeds[0])
    noise_rng = np.random.default_rng(seeds[1])
    replay_rng = np.random.default_rng(seeds[2])
    net_seed = int(np.random.default_rng(seeds[3]).integers(2 ** 31))
    env = MazeEnv(layout, num_beams=cfg.num_beams, fov=math.radians(cfg.fov_deg),
                  max_range=cfg.max_range, dt=cfg.dt, omega_max=cfg.omega_max,
                  max_steps=cfg.max_episode_steps, num_obstacles=cfg.num_obstacles)
    actor = Actor.create(cfg.num_beams, cfg.omega_max, cfg.max_range, seed=net_seed)
    critic = Critic.create(cfg.num_beams, cfg.omega_max, cfg.max_range, seed=net_seed + 1)
    actor_t, critic_t = actor.copy(), critic.copy()
    buf = TransitionBuffer(cfg.buffer_capacity, cfg.num_beams)

    metrics = []
    recent = deque(maxlen=20)
    writer = None
    fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        fh = open(os.path.join(out_dir, "metrics_low.csv"), "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["episode", "return", "collision_rate"])

    obs = env.reset(env_rng)
    ep_ret, episode = 0.0, 0
    try:
        for step in range(cfg.total_steps):
            if step < cfg.warmup_steps:
                u = noise_rng.uniform(-1.0, 1.0, 2)
            else:
                u = actor(obs[None])[0] / cfg.omega_max
                u = u + noise_rng.normal(0.0, noise_at(step, cfg), 2)
            u = np.clip(u, -1.0, 1.0) * cfg.omega_max
            nxt, r, done, collided = env.step(Twist(float(u[0]), float(u[1])))
            # the episode cap is a time limit, not a terminal state: keep bootstrapping through it
            buf.add(obs, u, r, nxt, float(collided))
            ep_ret += r
            obs = nxt
            if done:
                episode += 1
                recent.append(float(collided))
                row = (episode, ep_ret, float(np.mean(recent)))
                metrics.append(row)
                if writer is not None:
                    writer.writerow([row[0], repr(row[1]), repr(row[2])])
                if progress and episode % 20 == 0:
                    progress(step, row)
                obs = env.reset(env_rng)
                ep_ret = 0.0
            if step >= cfg.warmup_steps and len(buf) >= cfg.batch_size:
                ddpg_update(actor, critic, actor_t, critic_t, buf.sample(replay_rng, cfg.batch_size), cfg)
    finally:
        if fh is not None:
            fh.close()
    if out_dir is not None:
        actor.save(os.path.join(out_dir, "actor.ckpt"))
        critic.save(os.path.join(out_dir, "critic.ckpt"))
    return actor, critic, metrics
