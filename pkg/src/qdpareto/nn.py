"""Small dense networks with manual backpropagation and Adam updates."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_MAGIC = b"QDNN"
CHECKPOINT_VERSION = 1


class MLP:
    """Fully connected network with ReLU hidden layers and a linear output."""

    def __init__(self, sizes, rng: np.random.Generator, out_scale: float = 1.0):
        self.sizes = tuple(int(s) for s in sizes)
        self.params: list[np.ndarray] = []
        for k, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = 1.0 / np.sqrt(n_in)
            if k == len(self.sizes) - 2:
                bound *= out_scale
            self.params.append(rng.uniform(-bound, bound, (n_in, n_out)))
            self.params.append(np.zeros(n_out))
        self._cache = None

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def forward(self, x: np.ndarray, keep: bool = True) -> np.ndarray:
        acts = [x]
        h = x
        for k in range(self.n_layers):
            h = h @ self.params[2 * k] + self.params[2 * k + 1]
            if k < self.n_layers - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        if keep:
            self._cache = acts
        return h

    __call__ = forward

    def backward(self, grad_out: np.ndarray, need_params: bool = True):
        """Gradients of ``sum(grad_out * output)`` w.r.t. parameters and input.

        Uses the activations of the most recent ``forward(keep=True)`` call.
        """
        acts = self._cache
        grads = [None] * len(self.params)
        g = grad_out
        for k in reversed(range(self.n_layers)):
            if k < self.n_layers - 1:
                g = g * (acts[k + 1] > 0)
            if need_params:
                grads[2 * k] = acts[k].T @ g
                grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.params[2 * k].T
        return grads, g

    def copy_from(self, other: "MLP") -> None:
        for mine, theirs in zip(self.params, other.params):
            mine[...] = theirs

    def polyak_from(self, other: "MLP", rho: float) -> None:
        for mine, theirs in zip(self.params, other.params):
            mine *= rho
            mine += (1.0 - rho) * theirs


@dataclass
class Adam:
    params: list
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def write_checkpoint(path, arrays, tag: str = "") -> None:
    """Flat binary checkpoint.

    Layout (little endian): magic ``QDNN``, uint32 version, uint32 tag length,
    tag bytes (UTF-8), uint32 array count, then per array: uint32 ndim, ndim
    uint32 dims, float64 data in C order.
    """
    tag_b = tag.encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(tag_b)))
        fh.write(tag_b)
        fh.write(struct.pack("<I", len(arrays)))
        for a in arrays:
            a = np.ascontiguousarray(a, dtype="<f8")
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(a.tobytes())


def read_checkpoint(path) -> tuple[str, list[np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file")
    version, n_tag = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 12
    tag = data[pos:pos + n_tag].decode()
    pos += n_tag
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    arrays = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arrays.append(np.frombuffer(data, "<f8", size, pos).reshape(shape).copy())
        pos += 8 * size
    return tag, arrays


def numerical_gradient(f, params: list[np.ndarray], h: float = 1e-6) -> list[np.ndarray]:
    """Central finite differences of the scalar ``f()`` w.r.t. each array in ``params``."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            fp = f()
            p[i] = old - h
            fm = f()
            p[i] = old
            g[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def relative_error(a, b) -> float:
    a = np.concatenate([np.ravel(x) for x in a])
    b = np.concatenate([np.ravel(x) for x in b])
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300))
