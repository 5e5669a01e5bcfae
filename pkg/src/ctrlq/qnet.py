"""One-hidden-layer wide ReLU Q-network with exact per-parameter gradients.

Parameters live in one flat float64 vector with the canonical ordering
(W1 row-major, b1, W2 row-major, b2); W1/b1/W2/b2 are reshaped views into
it. Gradients use the same layout, so the neural tangent kernel is a plain
dot product and a gradient step is a single vector update. The ReLU
subgradient at exactly zero is taken as zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ctrlq.errors import ConfigurationError, TrainingError


@dataclass
class NTKPair:
    """Kernel values driving the learning model: theta1 = k((s,a),(s,a)),
    theta2 = k((s,a),(s',a'))."""

    theta1: float
    theta2: float


class QNetwork:
    """Q: R^{n_s} -> R^{n_a}, Q = W2 relu(W1 s + b1) + b2."""

    __slots__ = ("n_s", "hidden", "n_a", "n_params", "params", "W1", "b1", "W2", "b2",
                 "_axpy_buf")

    def __init__(self, n_s: int, hidden: int, n_a: int, params: np.ndarray | None = None):
        if n_s < 1 or hidden < 1 or n_a < 1:
            raise ConfigurationError(
                f"network dimensions must be >= 1, got ({n_s}, {hidden}, {n_a})"
            )
        self.n_s = n_s
        self.hidden = hidden
        self.n_a = n_a
        self.n_params = hidden * n_s + hidden + n_a * hidden + n_a
        if params is None:
            params = np.zeros(self.n_params)
        else:
            params = np.ascontiguousarray(params, dtype=np.float64)
            if params.shape != (self.n_params,):
                raise ConfigurationError(
                    f"parameter vector has length {params.size}, expected {self.n_params}"
                )
        self.params = params
        i0 = hidden * n_s
        i1 = i0 + hidden
        i2 = i1 + n_a * hidden
        self.W1 = params[:i0].reshape(hidden, n_s)
        self.b1 = params[i0:i1]
        self.W2 = params[i1:i2].reshape(n_a, hidden)
        self.b2 = params[i2:]
        self._axpy_buf: np.ndarray | None = None

    def forward(self, s: np.ndarray) -> np.ndarray:
        """Q-values for all actions at state s."""
        z = self.W1 @ s
        z += self.b1
        np.maximum(z, 0.0, out=z)
        q = self.W2 @ z
        q += self.b2
        return q

    def grad(self, s: np.ndarray, a: int, out: np.ndarray | None = None) -> np.ndarray:
        """Exact gradient of Q(s, a) w.r.t. every parameter, flat layout."""
        if not 0 <= a < self.n_a:
            raise ValueError(f"action {a} out of range [0, {self.n_a})")
        if out is None:
            out = np.empty(self.n_params)
        z = self.W1 @ s
        z += self.b1
        active = z > 0.0
        np.maximum(z, 0.0, out=z)          # z is now h
        dz = self.W2[a] * active

        hidden, n_s, n_a = self.hidden, self.n_s, self.n_a
        i0 = hidden * n_s
        i1 = i0 + hidden
        i2 = i1 + n_a * hidden
        np.matmul(dz[:, None], s[None, :], out=out[:i0].reshape(hidden, n_s))
        out[i0:i1] = dz
        w2_block = out[i1:i2].reshape(n_a, hidden)
        w2_block[:] = 0.0
        w2_block[a] = z
        out[i2:] = 0.0
        out[i2 + a] = 1.0
        return out

    def copy(self) -> "QNetwork":
        return QNetwork(self.n_s, self.hidden, self.n_a, self.params.copy())

    def copy_from(self, other: "QNetwork") -> None:
        """Parameter-wise copy (target-network sync)."""
        if (self.n_s, self.hidden, self.n_a) != (other.n_s, other.hidden, other.n_a):
            raise ConfigurationError("network architecture mismatch")
        self.params[:] = other.params


DEFAULT_BIAS_STD = 0.45


def init(n_s: int, hidden: int, n_a: int, seed: int,
         bias_std: float = DEFAULT_BIAS_STD, gain: float = 1.0) -> QNetwork:
    """He-initialized network: first-layer weights N(0, gain^2 * 2/fan_in),
    hidden biases N(0, (gain*bias_std)^2), output weights N(0, 2/fan_in),
    output biases zero.

    The hidden-bias spread keeps the tangent kernel bounded away from zero
    near the origin of the state space; with zero biases the kernel scales
    like |s|^2 and learning stalls wherever states are small. The gain
    scales the kernel magnitude (the effective learning speed at fixed
    alpha) without touching the output scale.
    """
    net = QNetwork(n_s, hidden, n_a)
    rng = np.random.default_rng(seed)
    net.W1[:] = rng.normal(0.0, gain * np.sqrt(2.0 / n_s), size=(hidden, n_s))
    net.b1[:] = rng.normal(0.0, gain * bias_std, size=hidden)
    net.W2[:] = rng.normal(0.0, np.sqrt(2.0 / hidden), size=(n_a, hidden))
    return net


def ntk(net: QNetwork, x: tuple[np.ndarray, int], x2: tuple[np.ndarray, int]) -> float:
    """Kernel value grad(s,a) . grad(s2,a2)."""
    g = net.grad(*x)
    g2 = net.grad(*x2)
    return float(g @ g2)


def ntk_for_transition(net: QNetwork, s: np.ndarray, a: int, s_next: np.ndarray) -> NTKPair:
    """(theta1, theta2) for one transition, with a' = argmax Q(s')."""
    a_next = int(np.argmax(net.forward(s_next)))
    g = net.grad(s, a)
    g_next = net.grad(s_next, a_next)
    return NTKPair(float(g @ g), float(g @ g_next))


def sgd_step(net: QNetwork, delta: float, g: np.ndarray, alpha: float) -> QNetwork:
    """theta <- theta + alpha * delta * g, in place.

    This single form implements every loss variant: the gradient of each
    controlled loss with the frozen-target convention is -delta * g.
    """
    if not np.isfinite(delta):
        raise TrainingError(f"non-finite temporal difference: {delta}")
    buf = net._axpy_buf
    if buf is None or buf.shape != g.shape:
        buf = net._axpy_buf = np.empty_like(g)
    np.multiply(g, alpha * delta, out=buf)
    net.params += buf
    return net


def save_checkpoint(net: QNetwork, path: str | Path, seed: int | None = None) -> None:
    """Dump the canonical parameter vector with a dimension header."""
    np.savez(
        path,
        n_s=net.n_s,
        hidden=net.hidden,
        n_a=net.n_a,
        seed=-1 if seed is None else seed,
        params=net.params,
    )


def load_checkpoint(path: str | Path) -> QNetwork:
    with np.load(path) as data:
        return QNetwork(int(data["n_s"]), int(data["hidden"]), int(data["n_a"]),
                        data["params"])
