import struct

import numpy as np

from ..errors import FormatError, ShapeMismatch

CKPT_MAGIC = b"NAVCKPT1"


class ParamSet:
    """Named parameter arrays plus Adam moment buffers and a step counter."""

    def __init__(self, params=None):
        self.params = {k: np.asarray(v, dtype=float) for k, v in (params or {}).items()}
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.step = 0

    def __getitem__(self, name):
        return self.params[name]

    def __setitem__(self, name, value):
        value = np.asarray(value, dtype=float)
        self.params[name] = value
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    def zero_grads(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def copy(self):
        out = ParamSet()
        out.params = {k: v.copy() for k, v in self.params.items()}
        out.m = {k: v.copy() for k, v in self.m.items()}
        out.v = {k: v.copy() for k, v in self.v.items()}
        out.step = self.step
        return out

    def num_params(self):
        return sum(v.size for v in self.params.values())

    def flat(self):
        return np.concatenate([self.params[k].ravel() for k in sorted(self.params)])

    def to_tensors(self, with_moments=True):
        tensors = dict(self.params)
        if with_moments:
            tensors.update({"adam.m/" + k: v for k, v in self.m.items()})
            tensors.update({"adam.v/" + k: v for k, v in self.v.items()})
            tensors["adam.step"] = np.array(float(self.step))
        return tensors

    @classmethod
    def from_tensors(cls, tensors):
        ps = cls({k: v for k, v in tensors.items() if not k.startswith(("adam.", "meta."))})
        for k in ps.params:
            if "adam.m/" + k in tensors:
                ps.m[k] = np.array(tensors["adam.m/" + k], dtype=float)
                ps.v[k] = np.array(tensors["adam.v/" + k], dtype=float)
        if "adam.step" in tensors:
            ps.step = int(tensors["adam.step"])
        return ps


def adam_step(ps, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update with bias correction; returns ``ps``."""
    for k, g in grads.items():
        if k not in ps.params or np.shape(g) != ps.params[k].shape:
            raise ShapeMismatch(f"gradient {k!r} does not match its parameter")
    ps.step += 1
    t = ps.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, g in grads.items():
        m = ps.m[k]
        v = ps.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        ps.params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return ps


def clip_by_global_norm(grads, max_norm):
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm and total > max_norm:
        scale = max_norm / total
        grads = {k: g * scale for k, g in grads.items()}
    return grads, total


def save_tensors(path, tensors):
    """Write NAVCKPT1: magic, count, then (name, dims, little-endian f64 data)."""
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.asarray(tensors[name], dtype="<f8")
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            f.write(np.ascontiguousarray(arr).tobytes())


def load_tensors(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a NAVCKPT1 checkpoint")
    pos = 8
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}q", data, pos)
        pos += 8 * ndim
        n = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape).astype(float)
        pos += 8 * n
    return out


def uniform_init(rng, shape, fan_in, gain=2.0):
    """Uniform fan-in init; gain 2 is He scaling for ReLU layers, 1 for linear/tanh."""
    bound = np.sqrt(3.0 * gain / fan_in)
    return rng.uniform(-bound, bound, size=shape)
