"""Policies over the capture graph and graph-only rollouts."""
from dataclasses import dataclass, field

import numpy as np

from ..worldview import HighAction, observe, transition
from .valuenet import select_action


class NetPolicy:
    """Greedy value-network policy with its own LSTM state."""

    def __init__(self, net, target):
        self.net = net
        self.tvec = net.encode_target(target)
        self.reset()

    def reset(self):
        self.state = self.net.initial_state(1)

    def values(self, obs):
        v, self.state = self.net.step(np.asarray(obs.descriptor, dtype=float)[None],
                                      np.array([float(obs.proximity)]), self.tvec[None], self.state)
        return v[0]

    def act(self, obs, view_state=None):
        return select_action(self.values(obs))


class OraclePolicy:
    """Argmax of the supervision labels y(a, x; g): the ideal imitation target."""

    def __init__(self, paths, target_rank):
        self.graph = paths.graph
        self.y, self.mask = paths.label_tables(target_rank)

    def reset(self):
        pass

    def act(self, obs, view_state):
        i = self.graph.state_index(view_state)
        vals = np.where(self.mask[i], self.y[i], -np.inf)
        if not np.isfinite(vals).any():
            return HighAction.FORWARD
        return HighAction(int(np.argmax(vals)))


@dataclass
class GraphRun:
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    success: bool = False
    path_length: float = 0.0


def target_center(graph, target_rank):
    return np.asarray(graph.grid.center(target_rank))


def rollout_graph(graph, policy, start, target_rank, max_steps=150, success_radius=3.0, rng=None,
                  noise=True):
    """Run a policy on the graph until it is within ``success_radius`` of the target cell centre."""
    rng = rng or np.random.default_rng(0)
    center = target_center(graph, target_rank)
    policy.reset()
    run = GraphRun(states=[start])
    s = start
    for _ in range(max_steps + 1):
        if np.hypot(*(graph.positions[s.node_id] - center)) <= success_radius:
            run.success = True
            break
        if len(run.actions) >= max_steps:
            break
        obs = observe(graph, s, int(rng.integers(2 ** 63)), None if noise else 0.0)
        a = policy.act(obs, s)
        nxt = transition(graph, s, a)
        if a == HighAction.FORWARD and nxt != s:
            run.path_length += float(np.hypot(*(graph.positions[nxt.node_id] - graph.positions[s.node_id])))
        run.actions.append(HighAction(a))
        run.states.append(nxt)
        s = nxt
    return run
