"""scikit-learn style wrappers around the two learned policies.

The functional core (value_forward, train_high, actor_forward, ddpg_train, ...)
stays the source of truth; these classes only hold configuration and fitted
networks so the policies compose with the usual get_params / clone tooling.
"""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ShapeMismatch
from .highlevel import HighTrainConfig, NetPolicy, ValueNet, select_action, train_high
from .highlevel.training import make_target
from .lowlevel import Actor, DDPGConfig, ddpg_train, execute_forward


class HighLevelPlanner(BaseEstimator):
    """Value-network policy over capture-graph observations.

    ``fit(graph, paths)`` trains with DAGGER-style unrolls.  ``predict`` and
    ``decision_function`` take one episode of observations as rows
    ``[descriptor..., proximity]`` and run the recurrent net over them in order.
    """

    def __init__(self, config=None, targets=None, out_dir=None):
        self.config = config
        self.targets = targets
        self.out_dir = out_dir

    def _cfg(self):
        return self.config if self.config is not None else HighTrainConfig()

    def fit(self, graph, paths):
        net, metrics = train_high(self._cfg(), graph, paths, self.targets, out_dir=self.out_dir)
        self._set_fitted(net, graph, metrics)
        return self

    def _set_fitted(self, net, graph, metrics=()):
        self.net_ = net
        self.graph_ = graph
        self.metrics_ = list(metrics)
        self.n_features_in_ = net.descriptor_dim + 1
        return self

    @classmethod
    def from_checkpoint(cls, path, graph, **kw):
        return cls(**kw)._set_fitted(ValueNet.load(path), graph)

    def _encode(self, target, rng_seed=0):
        if not isinstance(target, (int, np.integer)):
            return target
        kind = "onehot"
        if self.net_.target_kind != "onehot":
            kind = self._cfg().target_kind if self._cfg().target_kind != "onehot" else "image1"
        return make_target(self.graph_, int(target), kind, np.random.default_rng(rng_seed))

    def decision_function(self, X, target):
        """Values (T, 3) for the observation sequence X (T, D + 1)."""
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ShapeMismatch(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        tvec = self.net_.encode_target(self._encode(target))
        T = X.shape[0]
        v, _, _ = self.net_.forward_sequence(X[None, :, :-1], X[None, :, -1], tvec[None])
        return v.reshape(T, 3)

    def predict(self, X, target):
        """Greedy action indices (Forward, TurnLeft, TurnRight) for each row of X."""
        return np.array([int(select_action(v)) for v in self.decision_function(X, target)])

    def policy(self, target, rng_seed=0):
        """A stateful policy object usable by the rollout and evaluation helpers."""
        check_is_fitted(self, "net_")
        return NetPolicy(self.net_, self._encode(target, rng_seed))


class ForwardController(BaseEstimator):
    """DDPG actor that executes one metre of collision-free forward motion."""

    def __init__(self, config=None, out_dir=None):
        self.config = config
        self.out_dir = out_dir

    def _cfg(self):
        return self.config if self.config is not None else DDPGConfig()

    def fit(self, layout):
        actor, critic, metrics = ddpg_train(self._cfg(), layout, out_dir=self.out_dir)
        self._set_fitted(actor, critic, metrics)
        return self

    def _set_fitted(self, actor, critic=None, metrics=()):
        self.actor_ = actor
        self.critic_ = critic
        self.metrics_ = list(metrics)
        self.n_features_in_ = actor.num_beams * 3
        return self

    @classmethod
    def from_checkpoint(cls, path, **kw):
        return cls(**kw)._set_fitted(Actor.load(path))

    def predict(self, X):
        """Wheel speeds (n, 2) for flattened scan stacks X (n, beams * 3), beam-major."""
        check_is_fitted(self, "actor_")
        X = check_array(X, dtype=np.float64, allow_nd=True)
        n = X.shape[0]
        if X[0].size != self.n_features_in_:
            raise ShapeMismatch(f"expected {self.n_features_in_} features, got {X[0].size}")
        return self.actor_(X.reshape(n, self.actor_.num_beams, 3, 1))

    def __call__(self, stack):
        return self.predict(np.asarray(stack).reshape(len(stack), -1))

    def execute(self, layout, state, distance=1.0, **kw):
        check_is_fitted(self, "actor_")
        kw.setdefault("omega_max", self.actor_.omega_max)
        kw.setdefault("num_beams", self.actor_.num_beams)
        return execute_forward(self.actor_, layout, state, distance, **kw)
