import numpy as np

from ..errors import NonFinite, ShapeMismatch
from ..nn import (LstmState, ParamSet, dense_backward, dense_forward, load_tensors,
                  lstm_backward_sequence, lstm_forward_sequence, lstm_step, save_tensors,
                  uniform_init)
from ..worldview import HighAction, ImageTarget, OneHotTarget

NUM_ACTIONS = len(HighAction)


class ValueNet:
    """Recurrent progress estimator v(a, x; g) for the three high-level actions.

    target -> MLP1 -> e;  [descriptor, proximity, e] -> MLP2 -> LSTM -> linear head (3).
    """

    def __init__(self, descriptor_dim, target_dim, embed_dim=64, fusion_dim=64, lstm_dim=64,
                 seed=0, target_kind="onehot"):
        self.descriptor_dim = descriptor_dim
        self.target_dim = target_dim
        self.embed_dim = embed_dim
        self.fusion_dim = fusion_dim
        self.lstm_dim = lstm_dim
        self.target_kind = target_kind
        rng = np.random.default_rng(seed)
        fin = descriptor_dim + 1 + embed_dim
        H = lstm_dim
        lstm_b = np.zeros(4 * H)
        lstm_b[H:2 * H] = 1.0   # forget gate bias
        self.params = ParamSet({
            "mlp1.W": uniform_init(rng, (target_dim, embed_dim), target_dim),
            "mlp1.b": np.zeros(embed_dim),
            "mlp2.W": uniform_init(rng, (fin, fusion_dim), fin),
            "mlp2.b": np.zeros(fusion_dim),
            "lstm.Wx": uniform_init(rng, (fusion_dim, 4 * H), fusion_dim, gain=1.0),
            "lstm.Wh": uniform_init(rng, (H, 4 * H), H, gain=1.0),
            "lstm.b": lstm_b,
            "head.W": uniform_init(rng, (H, NUM_ACTIONS), H, gain=1.0),
            "head.b": np.zeros(NUM_ACTIONS),
        })

    # -- construction helpers -------------------------------------------

    def copy(self):
        out = object.__new__(ValueNet)
        out.__dict__.update(self.__dict__)
        out.params = self.params.copy()
        return out

    def snapshot(self):
        """Parameter-only copy for collectors (no optimizer state)."""
        out = object.__new__(ValueNet)
        out.__dict__.update(self.__dict__)
        out.params = ParamSet({k: v.copy() for k, v in self.params.params.items()})
        return out

    def save(self, path):
        tensors = self.params.to_tensors()
        tensors["meta.target_kind"] = np.array({"onehot": 0.0, "image": 1.0}[self.target_kind])
        save_tensors(path, tensors)

    @classmethod
    def load(cls, path):
        tensors = load_tensors(path)
        ps = ParamSet.from_tensors(tensors)
        net = object.__new__(cls)
        net.target_dim, net.embed_dim = ps["mlp1.W"].shape
        net.fusion_dim = ps["mlp2.W"].shape[1]
        net.descriptor_dim = ps["mlp2.W"].shape[0] - 1 - net.embed_dim
        net.lstm_dim = ps["lstm.Wh"].shape[0]
        net.target_kind = "image" if float(tensors.get("meta.target_kind", 0.0)) else "onehot"
        net.params = ps
        return net

    # -- forward ---------------------------------------------------------

    def initial_state(self, batch=None):
        return LstmState.zeros(self.lstm_dim, batch)

    def encode_target(self, target):
        if isinstance(target, OneHotTarget):
            if self.target_kind != "onehot":
                raise ShapeMismatch("network expects image targets")
            if not 0 <= target.cell_rank < self.target_dim:
                raise ShapeMismatch(f"cell rank {target.cell_rank} outside one-hot size {self.target_dim}")
            v = np.zeros(self.target_dim)
            v[target.cell_rank] = 1.0
            return v
        if isinstance(target, ImageTarget):
            v = target.embedding()
            if v.shape != (self.target_dim,):
                raise ShapeMismatch(f"image embedding {v.shape} vs target dim {self.target_dim}")
            return v
        v = np.asarray(target, dtype=float)
        if v.shape[-1] != self.target_dim:
            raise ShapeMismatch(f"target vector {v.shape} vs target dim {self.target_dim}")
        return v

    def _fusion_input(self, desc, prox, emb):
        if desc.shape[-1] != self.descriptor_dim:
            raise ShapeMismatch(f"descriptor {desc.shape} vs {self.descriptor_dim}")
        return np.concatenate([desc, prox[..., None], emb], axis=-1)

    def step(self, desc, prox, tvec, state):
        """Batched single step. desc (B, D), prox (B,), tvec (B, K)."""
        p = self.params
        emb, _ = dense_forward(p["mlp1.W"], p["mlp1.b"], tvec, "relu")
        f, _ = dense_forward(p["mlp2.W"], p["mlp2.b"], self._fusion_input(desc, prox, emb), "relu")
        h, state, _ = lstm_step(p["lstm.Wx"], p["lstm.Wh"], p["lstm.b"], f, state)
        v, _ = dense_forward(p["head.W"], p["head.b"], h)
        return v, state

    def forward_sequence(self, desc, prox, tvec, state=None):
        """desc (B, T, D), prox (B, T), tvec (B, K) -> values (B, T, 3), caches."""
        p = self.params
        B, T, _ = desc.shape
        if state is None:
            state = self.initial_state(B)
        emb, c1 = dense_forward(p["mlp1.W"], p["mlp1.b"], tvec, "relu")
        emb_t = np.broadcast_to(emb[:, None, :], (B, T, emb.shape[-1]))
        f, c2 = dense_forward(p["mlp2.W"], p["mlp2.b"], self._fusion_input(desc, prox, emb_t), "relu")
        hs, final, c3 = lstm_forward_sequence(p["lstm.Wx"], p["lstm.Wh"], p["lstm.b"], f, state)
        v, c4 = dense_forward(p["head.W"], p["head.b"], hs)
        return v, final, (c1, c2, c3, c4)

    def backward_sequence(self, caches, dv):
        p = self.params
        c1, c2, c3, c4 = caches
        dhs, dWh_, dbh = dense_backward(p["head.W"], c4, dv)
        df, dWx, dWh, dbl, _, _ = lstm_backward_sequence(p["lstm.Wx"], p["lstm.Wh"], c3, dhs)
        dfin, dW2, db2 = dense_backward(p["mlp2.W"], c2, df)
        demb = dfin[..., self.descriptor_dim + 1:].sum(axis=1)
        _, dW1, db1 = dense_backward(p["mlp1.W"], c1, demb)
        return {"mlp1.W": dW1, "mlp1.b": db1, "mlp2.W": dW2, "mlp2.b": db2,
                "lstm.Wx": dWx, "lstm.Wh": dWh, "lstm.b": dbl, "head.W": dWh_, "head.b": dbh}

    def loss_and_grads(self, desc, prox, tvec, y, mask):
        """Masked squared error summed over steps and actions, averaged over the batch."""
        v, _, caches = self.forward_sequence(desc, prox, tvec)
        B = desc.shape[0]
        err = np.where(mask, v - y, 0.0)
        loss = float(np.sum(err * err)) / B
        grads = self.backward_sequence(caches, 2.0 * err / B)
        return loss, grads


def value_forward(net, obs, target, state=None):
    """Single-observation forward pass; returns (values[3], new LstmState)."""
    if state is None:
        state = net.initial_state()
    tvec = net.encode_target(target)
    v, st = net.step(np.asarray(obs.descriptor, dtype=float)[None], np.array([float(obs.proximity)]),
                     tvec[None], LstmState(state.h[None], state.c[None]))
    return v[0], LstmState(st.h[0], st.c[0])


def select_action(values, epsilon=0.0, rng=None):
    """Greedy argmax (ties: Forward > TurnLeft > TurnRight), optionally epsilon-greedy."""
    values = np.asarray(values, dtype=float)
    if values.shape != (NUM_ACTIONS,) or not np.all(np.isfinite(values)):
        raise NonFinite(f"need {NUM_ACTIONS} finite values, got {values}")
    if epsilon > 0 and rng is not None and rng.random() < epsilon:
        return HighAction(int(rng.integers(NUM_ACTIONS)))
    return HighAction(int(np.argmax(values)))
