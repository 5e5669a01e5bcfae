"""Uncertain LTI model of Q-learning dynamics and frequency-domain analysis.

The two learning states are the actual Q-value Q1(t) and the next-state
Q-value Q2(t); their drift rates are set by the kernel pair (theta1, theta2)
and the discount. Everything here is a pure function, safe for concurrent
use.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ctrlq import qnet
from ctrlq.envs import Transition
from ctrlq.errors import ConfigurationError, SingularFrequencyError
from ctrlq.qnet import NTKPair, QNetwork


@dataclass
class StateSpace:
    """Dense (A, B, C, D) LTI system; dt=None marks continuous time."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    dt: float | None = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.D = np.atleast_2d(np.asarray(self.D, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ConfigurationError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise ConfigurationError("B row count must match A")
        if self.C.shape[1] != n:
            raise ConfigurationError("C column count must match A")
        if self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise ConfigurationError("D must be (outputs x inputs)")
        for name, m in (("A", self.A), ("B", self.B), ("C", self.C), ("D", self.D)):
            if not np.all(np.isfinite(m)):
                raise ConfigurationError(f"non-finite entries in {name}")

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]


@dataclass
class UncertaintyModel:
    """Magnitudes of the three uncertainty sources, combined additively.

    delta_q: per-state magnitudes overbounding the drift of the Q-values as
    the environment state changes; delta_theta: kernel parametric magnitude
    (off-diagonal coupling fixed at 0.1 of the diagonal); delta_exp:
    exploration-induced uncertainty on the Q2 channel.
    """

    delta_q: np.ndarray = field(default_factory=lambda: np.array([0.1, 0.1]))
    delta_theta: float = 0.0
    delta_exp: float = 0.1

    def __post_init__(self):
        self.delta_q = np.asarray(self.delta_q, dtype=float)
        if self.delta_q.shape != (2,):
            raise ConfigurationError("delta_q must have two entries")
        mags = (*self.delta_q, self.delta_theta, self.delta_exp)
        if not all(np.isfinite(m) and m >= 0.0 for m in mags):
            raise ConfigurationError("uncertainty magnitudes must be finite and >= 0")

    def combined(self) -> np.ndarray:
        """Single 2x2 block: state + kernel + exploration contributions."""
        dth = self.delta_theta
        return np.array(
            [
                [self.delta_q[0] + dth, 0.1 * dth],
                [0.1 * dth, self.delta_q[1] + dth + self.delta_exp],
            ]
        )


@dataclass
class LearningModel:
    """Uncertain LTI description of one learning process."""

    ntk: NTKPair
    discount: float
    uncertainty: UncertaintyModel = field(default_factory=UncertaintyModel)

    def __post_init__(self):
        if not 0.0 < self.discount <= 1.0:
            raise ConfigurationError(f"discount must be in (0, 1], got {self.discount}")


@dataclass
class NTKBounds:
    """Box bounds for theta1 and for the ratio theta2/theta1."""

    theta1_min: float
    theta1_max: float
    ratio_min: float
    ratio_max: float

    def __post_init__(self):
        if not 0.0 < self.theta1_min <= self.theta1_max:
            raise ConfigurationError("need 0 < theta1_min <= theta1_max")
        if self.ratio_min > self.ratio_max:
            raise ConfigurationError("need ratio_min <= ratio_max")

    def midpoint(self) -> NTKPair:
        t1 = 0.5 * (self.theta1_min + self.theta1_max)
        return NTKPair(t1, t1 * 0.5 * (self.ratio_min + self.ratio_max))

    def vertices(self) -> list[NTKPair]:
        return [
            NTKPair(t1, t1 * ratio)
            for t1 in (self.theta1_min, self.theta1_max)
            for ratio in (self.ratio_min, self.ratio_max)
        ]

    def sample(self, rng: np.random.Generator, n: int) -> list[NTKPair]:
        t1 = rng.uniform(self.theta1_min, self.theta1_max, size=n)
        ratio = rng.uniform(self.ratio_min, self.ratio_max, size=n)
        return [NTKPair(float(a), float(a * b)) for a, b in zip(t1, ratio)]

    def contains(self, theta1: float, theta2: float) -> bool:
        if not self.theta1_min <= theta1 <= self.theta1_max:
            return False
        ratio = theta2 / theta1
        return self.ratio_min <= ratio <= self.ratio_max


@dataclass
class StabilityReport:
    """Closed-form spectrum of the nominal 2-state model."""

    eigenvalues: np.ndarray  # {0, discount*theta2 - theta1}
    stable: bool             # strict: theta1 > discount*theta2
    marginal_zero_mode: bool = True


def nominal_ss(model: LearningModel) -> StateSpace:
    """Two-state nominal model driven by the reward."""
    t1, t2 = model.ntk.theta1, model.ntk.theta2
    g = model.discount
    a = np.array([[-t1, g * t1], [-t2, g * t2]])
    b = np.array([[t1], [t2]])
    return StateSpace(a, b, np.eye(2), np.zeros((2, 1)))


def augmented_ss(model: LearningModel) -> StateSpace:
    """Adds the tracking-error integrator x_e; inputs ordered (r, qhat2, u).

    x_e integrates r + discount*qhat2 - Q1; the control enters Q1 only.
    """
    t1, t2 = model.ntk.theta1, model.ntk.theta2
    g = model.discount
    a = np.array([[-t1, g * t1, 0.0], [-t2, g * t2, 0.0], [-1.0, 0.0, 0.0]])
    b = np.array([[t1, 0.0, t1], [t2, 0.0, 0.0], [1.0, g, 0.0]])
    return StateSpace(a, b, np.eye(3), np.zeros((3, 3)))


def nominal_stability(model: LearningModel) -> StabilityReport:
    t1, t2 = model.ntk.theta1, model.ntk.theta2
    g = model.discount
    eigs = np.array([0.0, g * t2 - t1])
    return StabilityReport(eigenvalues=eigs, stable=bool(t1 > g * t2))


def estimate_ntk_bounds(
    net: QNetwork,
    transitions: list[Transition],
    safety: float = 1.1,
) -> NTKBounds:
    """Evaluate the kernel on every transition and box the observed range.

    The upper theta1 bound and the ratio span are widened by `safety`;
    kernel excursions beyond the sampled range occur when exploring.
    """
    if not transitions:
        raise ConfigurationError("cannot estimate bounds from an empty transition list")
    theta1s = np.empty(len(transitions))
    ratios = np.empty(len(transitions))
    for i, tr in enumerate(transitions):
        pair = qnet.ntk_for_transition(net, tr.s, tr.a, tr.s_next)
        theta1s[i] = pair.theta1
        ratios[i] = pair.theta2 / pair.theta1
    r_lo, r_hi = float(ratios.min()), float(ratios.max())
    r_mid, r_half = 0.5 * (r_lo + r_hi), 0.5 * (r_hi - r_lo)
    return NTKBounds(
        theta1_min=float(theta1s.min()),
        theta1_max=float(theta1s.max()) * safety,
        ratio_min=r_mid - safety * r_half,
        ratio_max=r_mid + safety * r_half,
    )


def fft_spectrum(signal: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """One-sided discrete Fourier magnitude spectrum of a real signal."""
    signal = np.asarray(signal, dtype=float)
    if signal.ndim != 1 or signal.size < 2:
        raise ValueError("signal must be a 1-d array with at least 2 samples")
    mags = np.abs(np.fft.rfft(signal))
    freqs = np.fft.rfftfreq(signal.size, d=dt)
    return freqs, mags


def freq_response(ss: StateSpace, omegas: np.ndarray) -> np.ndarray:
    """C (i*omega*I - A)^-1 B + D per frequency; shape (len(omegas), p, m)."""
    if ss.dt is not None:
        raise ConfigurationError("freq_response expects a continuous-time system")
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    n = ss.n_states
    out = np.empty((omegas.size, ss.n_outputs, ss.n_inputs), dtype=complex)
    eye = np.eye(n)
    for k, w in enumerate(omegas):
        try:
            x = np.linalg.solve(1j * w * eye - ss.A, ss.B)
        except np.linalg.LinAlgError:
            raise SingularFrequencyError(
                f"omega={w} coincides with an imaginary-axis pole"
            ) from None
        out[k] = ss.C @ x + ss.D
    return out
