"""Actor and critic ConvNets over three stacked 1D LiDAR scans.

Trunk: conv([7, 3, 16], 5) -> conv([5, 1, 20], 3) -> fc(20) -> fc(10), all ReLU.
Actor head: fc(2) + tanh, scaled to the wheel speed limit.
Critic: trunk embedding concatenated with the action -> fc(10) -> fc(8) -> fc(1).
"""
import numpy as np

from ..errors import ShapeMismatch
from ..maze import Twist
from ..nn import (ParamSet, conv2d_backward, conv2d_forward, conv_output_size, dense_backward,
                  dense_forward, load_tensors, save_tensors, uniform_init)

CONV1 = ((7, 3, 16), (5, 1))
CONV2 = ((5, 1, 20), (3, 1))
FC = (20, 10)
CRITIC_FC = (10, 8)


def trunk_shapes(num_beams):
    h1 = conv_output_size(num_beams, CONV1[0][0], CONV1[1][0])
    h2 = conv_output_size(h1, CONV2[0][0], CONV2[1][0])
    return h1, h2


def _init_trunk(rng, num_beams, prefix=""):
    (k1h, k1w, c1), _ = CONV1
    (k2h, k2w, c2), _ = CONV2
    _, h2 = trunk_shapes(num_beams)
    if h2 < 1:
        raise ShapeMismatch(f"{num_beams} beams are too few for the conv trunk (need at least 27)")
    flat = h2 * c2
    return {
        prefix + "conv1.K": uniform_init(rng, (k1h, k1w, 1, c1), k1h * k1w),
        prefix + "conv1.b": np.zeros(c1),
        prefix + "conv2.K": uniform_init(rng, (k2h, k2w, c1, c2), k2h * k2w * c1),
        prefix + "conv2.b": np.zeros(c2),
        prefix + "fc1.W": uniform_init(rng, (flat, FC[0]), flat),
        prefix + "fc1.b": np.zeros(FC[0]),
        prefix + "fc2.W": uniform_init(rng, (FC[0], FC[1]), FC[0]),
        prefix + "fc2.b": np.zeros(FC[1]),
    }


def _trunk_forward(p, x):
    if x.ndim == 3:
        x = x[..., None]
    if x.ndim != 4 or x.shape[2] != CONV1[0][1] or x.shape[3] != 1:
        raise ShapeMismatch(f"scan stack must be (B, beams, 3, 1), got {x.shape}")
    a1, c1 = conv2d_forward(p["conv1.K"], p["conv1.b"], x, CONV1[1])
    a2, c2 = conv2d_forward(p["conv2.K"], p["conv2.b"], a1, CONV2[1])
    flat = a2.reshape(a2.shape[0], -1)
    if flat.shape[1] != p["fc1.W"].shape[0]:
        raise ShapeMismatch(f"trunk output {flat.shape[1]} does not match fc1 {p['fc1.W'].shape}")
    f1, c3 = dense_forward(p["fc1.W"], p["fc1.b"], flat, "relu")
    f2, c4 = dense_forward(p["fc2.W"], p["fc2.b"], f1, "relu")
    return f2, (a2.shape, c1, c2, c3, c4)


def _trunk_backward(p, cache, df2):
    a2_shape, c1, c2, c3, c4 = cache
    df1, g_fc2W, g_fc2b = dense_backward(p["fc2.W"], c4, df2)
    dflat, g_fc1W, g_fc1b = dense_backward(p["fc1.W"], c3, df1)
    da1, g_c2K, g_c2b = conv2d_backward(p["conv2.K"], c2, dflat.reshape(a2_shape))
    _, g_c1K, g_c1b = conv2d_backward(p["conv1.K"], c1, da1, need_dx=False)
    return {"conv1.K": g_c1K, "conv1.b": g_c1b, "conv2.K": g_c2K, "conv2.b": g_c2b,
            "fc1.W": g_fc1W, "fc1.b": g_fc1b, "fc2.W": g_fc2W, "fc2.b": g_fc2b}


class _Net:
    def __init__(self, params, num_beams, omega_max, max_range):
        self.params = params
        self.num_beams = num_beams
        self.omega_max = float(omega_max)
        self.max_range = float(max_range)

    def copy(self):
        out = object.__new__(type(self))
        out.__dict__.update(self.__dict__)
        out.params = self.params.copy()
        return out

    def normalize(self, stack):
        return np.asarray(stack, dtype=float) / self.max_range

    def save(self, path):
        t = self.params.to_tensors()
        t["meta.omega_max"] = np.array(self.omega_max)
        t["meta.max_range"] = np.array(self.max_range)
        t["meta.num_beams"] = np.array(self.num_beams)
        save_tensors(path, t)

    @classmethod
    def load(cls, path):
        t = load_tensors(path)
        ps = ParamSet.from_tensors(t)
        return cls(ps, int(t["meta.num_beams"]), float(t["meta.omega_max"]), float(t["meta.max_range"]))


class Actor(_Net):
    @classmethod
    def create(cls, num_beams=64, omega_max=5.0, max_range=5.0, seed=0):
        rng = np.random.default_rng(seed)
        p = _init_trunk(rng, num_beams)
        p["head.W"] = rng.uniform(-3e-3, 3e-3, (FC[1], 2))
        p["head.b"] = np.zeros(2)
        return cls(ParamSet(p), num_beams, omega_max, max_range)

    def forward(self, stack):
        """stack (B, beams, 3[, 1]) in metres -> wheel speeds (B, 2)."""
        p = self.params
        f2, ct = _trunk_forward(p, self.normalize(stack))
        u, ch = dense_forward(p["head.W"], p["head.b"], f2, "tanh")
        return self.omega_max * u, (ct, ch)

    def __call__(self, stack):
        return self.forward(stack)[0]

    def backward(self, cache, d_action):
        p = self.params
        ct, ch = cache
        df2, gW, gb = dense_backward(p["head.W"], ch, self.omega_max * d_action)
        grads = _trunk_backward(p, ct, df2)
        grads["head.W"], grads["head.b"] = gW, gb
        return grads


class Critic(_Net):
    @classmethod
    def create(cls, num_beams=64, omega_max=5.0, max_range=5.0, seed=0):
        rng = np.random.default_rng(seed)
        p = _init_trunk(rng, num_beams)
        fin = FC[1] + 2
        p["q1.W"] = uniform_init(rng, (fin, CRITIC_FC[0]), fin)
        p["q1.b"] = np.zeros(CRITIC_FC[0])
        p["q2.W"] = uniform_init(rng, (CRITIC_FC[0], CRITIC_FC[1]), CRITIC_FC[0])
        p["q2.b"] = np.zeros(CRITIC_FC[1])
        p["out.W"] = rng.uniform(-3e-3, 3e-3, (CRITIC_FC[1], 1))
        p["out.b"] = np.zeros(1)
        return cls(ParamSet(p), num_beams, omega_max, max_range)

    def forward(self, stack, action):
        p = self.params
        action = np.asarray(action, dtype=float)
        if action.ndim != 2 or action.shape[1] != 2:
            raise ShapeMismatch(f"actions must be (B, 2), got {action.shape}")
        f2, ct = _trunk_forward(p, self.normalize(stack))
        if f2.shape[0] != action.shape[0]:
            raise ShapeMismatch("batch sizes of scans and actions differ")
        z = np.concatenate([f2, action / self.omega_max], axis=1)
        h1, c1 = dense_forward(p["q1.W"], p["q1.b"], z, "relu")
        h2, c2 = dense_forward(p["q2.W"], p["q2.b"], h1, "relu")
        q, c3 = dense_forward(p["out.W"], p["out.b"], h2)
        return q[:, 0], (ct, c1, c2, c3)

    def __call__(self, stack, action):
        return self.forward(stack, action)[0]

    def backward(self, cache, dq, param_grads=True):
        """Returns (param grads, dQ/d action); grads are None if not requested."""
        p = self.params
        ct, c1, c2, c3 = cache
        dh2, gW3, gb3 = dense_backward(p["out.W"], c3, dq[:, None])
        dh1, gW2, gb2 = dense_backward(p["q2.W"], c2, dh2)
        dz, gW1, gb1 = dense_backward(p["q1.W"], c1, dh1)
        da = dz[:, FC[1]:] / self.omega_max
        if not param_grads:
            return None, da
        grads = _trunk_backward(p, ct, dz[:, :FC[1]])
        grads.update({"q1.W": gW1, "q1.b": gb1, "q2.W": gW2, "q2.b": gb2, "out.W": gW3, "out.b": gb3})
        return grads, da


def actor_forward(actor, stack):
    a = actor(np.asarray(stack)[None])[0]
    return Twist(float(a[0]), float(a[1]))


def critic_forward(critic, stack, a):
    return float(critic(np.asarray(stack)[None], np.array([[a.omega_left, a.omega_right]]))[0])
