"""Graph-level value network, path supervision and DAGGER-style training."""
from .paths import PathSet, load_demonstrations, path_distance, progress_label, shortest_paths
from .rollout import GraphRun, NetPolicy, OraclePolicy, rollout_graph
from .training import HighTrainConfig, ReplayBuffer, train_high
from .valuenet import ValueNet, select_action, value_forward
