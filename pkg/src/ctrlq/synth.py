"""Robust control synthesis for the learning model.

Continuous algebraic Riccati equations are solved through the stable
invariant subspace of the associated Hamiltonian (ordered real Schur form
with balancing). On top of that sit the H2/LQ gain computation for the
augmented learning model, the bisection H-infinity norm, the weighted
generalized plant, the two-Riccati gamma-iteration H-infinity synthesis,
derivative-free fixed-structure tuning, and zero-order-hold discretization
for per-step deployment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg
import scipy.optimize

from ctrlq.errors import ConfigurationError, SynthesisError, UnstableSystemError
from ctrlq.lti import LearningModel, NTKBounds, StateSpace, freq_response
from ctrlq.qnet import NTKPair

_AXIS_TOL = 1e-8  # relative threshold for "eigenvalue on the imaginary axis"


# ---------------------------------------------------------------------------
# Weight and controller containers


@dataclass
class H2Weights:
    """Diagonal state weights (Q1, Q2, x_e) and the control weight.

    The default puts most weight on Q2, slowing the drift of the target,
    with cheap control.
    """

    wx: np.ndarray = field(default_factory=lambda: np.array([1e-4, 1.0, 1e-2]))
    wc: float = 1e-4

    def __post_init__(self):
        self.wx = np.asarray(self.wx, dtype=float)
        if self.wx.shape != (3,) or np.any(self.wx < 0.0):
            raise ConfigurationError("wx must be three nonnegative entries")
        if not self.wc > 0.0:
            raise ConfigurationError("wc must be positive")


def default_wp() -> StateSpace:
    """Tracking-error weight 0.001 / (0.1 s + 1): large at low frequency only."""
    return StateSpace([[-10.0]], [[1.0]], [[0.01]], [[0.0]])


def default_wu() -> StateSpace:
    """Control weight 0.01 s / ((0.1 s + 1)(0.001 s + 1)), band-pass."""
    return StateSpace([[0.0, 1.0], [-1e4, -1010.0]], [[0.0], [1.0]],
                      [[0.0, 100.0]], [[0.0]])


@dataclass
class HinfWeights:
    """Frequency weights of the generalized plant.

    wp shapes the tracking error, wu the control input; w_delta is the
    constant 2x2 disturbance weight (None: take it from the model's
    uncertainty block scaled by q_scale); w_r and w_qhat normalize the
    reward and target reference channels.
    """

    wp: StateSpace = field(default_factory=default_wp)
    wu: StateSpace = field(default_factory=default_wu)
    w_delta: np.ndarray | None = None
    w_r: float = 1.0
    w_qhat: float = 1.0
    q_scale: float = 1.0

    def __post_init__(self):
        if self.w_delta is not None:
            self.w_delta = np.asarray(self.w_delta, dtype=float)
            if self.w_delta.shape != (2, 2):
                raise ConfigurationError("w_delta must be 2x2")
        if not (self.w_r > 0.0 and self.w_qhat > 0.0 and self.q_scale >= 0.0):
            raise ConfigurationError("w_r, w_qhat must be positive, q_scale >= 0")

    def delta_weight(self, model: LearningModel) -> np.ndarray:
        if self.w_delta is not None:
            return self.w_delta
        return self.q_scale * model.uncertainty.combined()


@dataclass
class FixedGains:
    """Static output-feedback gains: u = -k1 Q1 - k2 Q2 + k3 x_e."""

    k1: float
    k2: float
    k3: float

    def __post_init__(self):
        if not all(np.isfinite((self.k1, self.k2, self.k3))):
            raise ConfigurationError("gains must be finite")
        if 1.0 + self.k1 <= 0.0:
            raise ConfigurationError("need 1 + k1 > 0 (positive loss prefactor)")


@dataclass
class LTIController:
    """Dynamic output-feedback controller, inputs (e, y1, y2), one output."""

    Ac: np.ndarray
    Bc: np.ndarray
    Cc: np.ndarray
    Dc: np.ndarray
    gamma: float | None = None

    def __post_init__(self):
        self.Ac = np.atleast_2d(np.asarray(self.Ac, dtype=float))
        self.Bc = np.atleast_2d(np.asarray(self.Bc, dtype=float))
        self.Cc = np.atleast_2d(np.asarray(self.Cc, dtype=float))
        self.Dc = np.atleast_2d(np.asarray(self.Dc, dtype=float))
        if np.max(np.linalg.eigvals(self.Ac).real) >= 0.0:
            raise SynthesisError("controller state matrix is not Hurwitz")

    @property
    def order(self) -> int:
        return self.Ac.shape[0]

    def to_ss(self) -> StateSpace:
        return StateSpace(self.Ac, self.Bc, self.Cc, self.Dc)


class PlantPartitions(NamedTuple):
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D11: np.ndarray
    D12: np.ndarray
    D21: np.ndarray
    D22: np.ndarray


@dataclass
class GeneralizedPlant:
    """StateSpace with channel partitions: inputs [w, u], outputs [z, y]."""

    ss: StateSpace
    n_w: int
    n_u: int
    n_z: int
    n_y: int

    def __post_init__(self):
        if self.ss.n_inputs != self.n_w + self.n_u:
            raise ConfigurationError("input partition does not match B")
        if self.ss.n_outputs != self.n_z + self.n_y:
            raise ConfigurationError("output partition does not match C")

    def partitions(self) -> PlantPartitions:
        nw, nz = self.n_w, self.n_z
        b, c, d = self.ss.B, self.ss.C, self.ss.D
        return PlantPartitions(
            A=self.ss.A,
            B1=b[:, :nw], B2=b[:, nw:],
            C1=c[:nz, :], C2=c[nz:, :],
            D11=d[:nz, :nw], D12=d[:nz, nw:],
            D21=d[nz:, :nw], D22=d[nz:, nw:],
        )


# ---------------------------------------------------------------------------
# Riccati machinery


def _stable_invariant_solution(ham: np.ndarray) -> np.ndarray:
    """X = U2 U1^-1 from the stable invariant subspace of a Hamiltonian."""
    n2 = ham.shape[0]
    n = n2 // 2
    balanced, tmat = scipy.linalg.matrix_balance(ham)
    tsc, zsc, sdim = scipy.linalg.schur(balanced, output="real", sort="lhp")
    if sdim != n:
        raise SynthesisError(
            f"Hamiltonian has eigenvalues on the imaginary axis ({sdim} stable of {n})"
        )
    basis = tmat @ zsc[:, :n]
    u1 = basis[:n, :]
    u2 = basis[n:, :]
    if np.linalg.cond(u1) > 1e13:
        raise SynthesisError("stable subspace is nearly singular; no stabilizing solution")
    x = np.linalg.solve(u1.T, u2.T).T
    return 0.5 * (x + x.T)


def care_residual(A, B, Q, R, P) -> float:
    """Frobenius norm of A'P + PA - PB R^-1 B'P + Q."""
    brb = B @ np.linalg.solve(R, B.T)
    res = A.T @ P + P @ A - P @ brb @ P + Q
    return float(np.linalg.norm(res, "fro"))


def solve_care(A, B, Q, R) -> np.ndarray:
    """Stabilizing solution of A'P + PA - P B R^-1 B' P + Q = 0.

    Computed from the stable invariant subspace of the Hamiltonian
    [[A, -B R^-1 B'], [-Q, -A']], with one Newton (Kleinman) polish step
    if the raw residual misses the 1e-8 gate.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]
    brb = B @ np.linalg.solve(R, B.T)
    ham = np.block([[A, -brb], [-Q, -A.T]])
    p = _stable_invariant_solution(ham)

    if care_residual(A, B, Q, R, p) >= 1e-8:
        # Kleinman step: Lyapunov solve around the current closed loop.
        acl = A - brb @ p
        rhs = -(Q + p @ brb @ p)
        p = scipy.linalg.solve_sylvester(acl.T, acl, rhs)
        p = 0.5 * (p + p.T)

    res = care_residual(A, B, Q, R, p)
    if res >= 1e-8:
        raise SynthesisError(f"CARE residual {res:.3e} exceeds 1e-8")
    eigs = np.linalg.eigvalsh(p)
    if eigs.min() < -1e-8 * max(1.0, eigs.max()):
        raise SynthesisError("CARE solution is not positive semidefinite")
    cl = np.linalg.eigvals(A - brb @ p)
    if cl.real.max() >= 0.0:
        raise SynthesisError("CARE solution is not stabilizing")
    return p


# ---------------------------------------------------------------------------
# H2 gains on the augmented learning model


def h2_gains(ntk: NTKPair, discount: float, weights: H2Weights) -> FixedGains:
    """LQ state-feedback gains for the 3-state augmented model.

    Returned in the sign convention u = -k1 Q1 - k2 Q2 + k3 x_e.
    """
    t1, t2 = ntk.theta1, ntk.theta2
    if t1 <= 0.0:
        raise SynthesisError(f"theta1 must be positive for controllability, got {t1}")
    g = discount
    a = np.array([[-t1, g * t1, 0.0], [-t2, g * t2, 0.0], [-1.0, 0.0, 0.0]])
    b = np.array([[t1], [0.0], [0.0]])
    q = np.diag(weights.wx)
    r = np.array([[weights.wc]])
    p = solve_care(a, b, q, r)
    k_row = (b.T @ p)[0] / weights.wc
    return FixedGains(k1=float(k_row[0]), k2=float(k_row[1]), k3=float(-k_row[2]))


def h2_closed_loop_a(ntk: NTKPair, discount: float, gains: FixedGains) -> np.ndarray:
    """Closed-loop state matrix of the augmented model under fixed gains."""
    t1, t2 = ntk.theta1, ntk.theta2
    g = discount
    return np.array(
        [
            [-t1 * (1.0 + gains.k1), (g - gains.k2) * t1, t1 * gains.k3],
            [-t2, g * t2, 0.0],
            [-1.0, 0.0, 0.0],
        ]
    )


# ---------------------------------------------------------------------------
# H-infinity norm (bisection on Hamiltonian imaginary-axis eigenvalues)


def _has_imaginary_axis_eig(mat: np.ndarray) -> bool:
    eigs = np.linalg.eigvals(mat)
    return bool(np.any(np.abs(eigs.real) <= _AXIS_TOL * np.maximum(1.0, np.abs(eigs))))


def _norm_hamiltonian(ss: StateSpace, gamma: float) -> np.ndarray:
    a, b, c, d = ss.A, ss.B, ss.C, ss.D
    m = b.shape[1]
    p = c.shape[0]
    r = gamma * gamma * np.eye(m) - d.T @ d
    rinv = np.linalg.inv(r)
    a_h = a + b @ rinv @ d.T @ c
    return np.block(
        [
            [a_h, b @ rinv @ b.T],
            [-c.T @ (np.eye(p) + d @ rinv @ d.T) @ c, -a_h.T],
        ]
    )


def hinf_norm(ss: StateSpace, tol: float = 1e-4) -> float:
    """H-infinity norm of a stable continuous-time system, within relative tol.

    gamma is an upper bound iff the associated Hamiltonian has no
    imaginary-axis eigenvalues; the returned value is the certified upper
    end of the bisection bracket.
    """
    if ss.dt is not None:
        raise ConfigurationError("hinf_norm expects a continuous-time system")
    if ss.n_states > 0:
        poles = np.linalg.eigvals(ss.A)
        if poles.real.max() >= 0.0:
            raise UnstableSystemError("system is not Hurwitz; H-infinity norm is infinite")
    else:
        poles = np.array([])

    sigma_d = float(np.linalg.svd(ss.D, compute_uv=False).max()) if ss.D.size else 0.0
    if ss.n_states == 0:
        return sigma_d

    # Certified lower bound from singular values at probe frequencies.
    probe = {0.0}
    for lam in poles:
        if abs(lam.imag) > 1e-12:
            probe.add(abs(lam.imag))
        probe.add(abs(lam))
    resp = freq_response(ss, np.array(sorted(probe)))
    lo = max(
        sigma_d,
        max(float(np.linalg.svd(r, compute_uv=False).max()) for r in resp),
    )
    if lo == 0.0:
        return 0.0

    hi = 2.0 * lo
    while _has_imaginary_axis_eig(_norm_hamiltonian(ss, hi)):
        hi *= 4.0
        if hi > 1e14 * lo:
            raise SynthesisError("H-infinity norm bisection failed to bracket")
    lo_b = lo
    while hi - lo_b > tol * hi:
        mid = np.sqrt(hi * lo_b)
        if mid <= sigma_d * (1.0 + 1e-12):
            break
        if _has_imaginary_axis_eig(_norm_hamiltonian(ss, mid)):
            lo_b = mid
        else:
            hi = mid
    return float(hi)


# ---------------------------------------------------------------------------
# Generalized plant (weighted interconnection)


def build_plant(model: LearningModel, weights: HinfWeights) -> GeneralizedPlant:
    """Weighted open-loop interconnection for synthesis.

    Exogenous inputs w = (d1, d2, r, qhat2), control u; performance outputs
    z = (y1, y2, z_u, z_p); measured outputs y = (e, y1~, y2~) with
    e = w_r r + discount*w_qhat qhat2 - Q1~ and y~ the disturbed states.
    """
    t1, t2 = model.ntk.theta1, model.ntk.theta2
    g = model.discount
    wd = weights.delta_weight(model)
    wp, wu = weights.wp, weights.wu
    n_p, n_q = wp.n_states, wu.n_states
    n = 2 + n_p + n_q

    a_l = np.array([[-t1, g * t1], [-t2, g * t2]])
    b_r = np.array([t1, t2])
    b_u = np.array([t1, 0.0])

    A = np.zeros((n, n))
    A[:2, :2] = a_l
    sl_p = slice(2, 2 + n_p)
    sl_q = slice(2 + n_p, n)
    A[sl_p, sl_p] = wp.A
    # wp is driven by e, whose state part is -Q1.
    A[sl_p, 0:1] = -wp.B
    A[sl_q, sl_q] = wu.A

    B1 = np.zeros((n, 4))
    B1[:2, 2] = weights.w_r * b_r
    B1[sl_p, 0:2] = -wp.B @ wd[0:1, :]
    B1[sl_p, 2:3] = wp.B * weights.w_r
    B1[sl_p, 3:4] = wp.B * (g * weights.w_qhat)

    B2 = np.zeros((n, 1))
    B2[:2, 0] = b_u
    B2[sl_q, 0:1] = wu.B

    C1 = np.zeros((4, n))
    C1[0, 0] = 1.0
    C1[1, 1] = 1.0
    C1[2, sl_q] = wu.C[0]
    C1[3, sl_p] = wp.C[0]

    C2 = np.zeros((3, n))
    C2[0, 0] = -1.0
    C2[1, 0] = 1.0
    C2[2, 1] = 1.0

    D = np.zeros((7, 5))
    # e row feedthrough: -c' Wd on d, w_r on r, discount*w_qhat on qhat2.
    D[4, 0:2] = -wd[0, :]
    D[4, 2] = weights.w_r
    D[4, 3] = g * weights.w_qhat
    D[5:7, 0:2] = wd

    ss = StateSpace(A, np.hstack([B1, B2]), np.vstack([C1, C2]), D)
    return GeneralizedPlant(ss=ss, n_w=4, n_u=1, n_z=4, n_y=3)


# ---------------------------------------------------------------------------
# Lower LFT (controller closure)


def lower_lft(plant: GeneralizedPlant, ctrl: StateSpace) -> StateSpace:
    """Closed loop from w to z after closing the control channel with ctrl."""
    p = plant.partitions()
    ak, bk, ck, dk = ctrl.A, ctrl.B, ctrl.C, ctrl.D
    m2 = p.B2.shape[1]
    gap = np.eye(m2) - dk @ p.D22
    if abs(np.linalg.det(gap)) < 1e-12:
        raise SynthesisError("ill-posed interconnection: I - Dk D22 singular")
    ninv = np.linalg.inv(gap)
    fu = ninv @ dk            # u = fu*(C2 x + D21 w) + fc*xk
    fc = ninv @ ck
    acl = np.block(
        [
            [p.A + p.B2 @ fu @ p.C2, p.B2 @ fc],
            [bk @ (p.C2 + p.D22 @ fu @ p.C2), ak + bk @ p.D22 @ fc],
        ]
    )
    bcl = np.vstack(
        [
            p.B1 + p.B2 @ fu @ p.D21,
            bk @ (p.D21 + p.D22 @ fu @ p.D21),
        ]
    )
    ccl = np.hstack([p.C1 + p.D12 @ fu @ p.C2, p.D12 @ fc])
    dcl = p.D11 + p.D12 @ fu @ p.D21
    return StateSpace(acl, bcl, ccl, dcl)


def fixed_structure_ss(gains: FixedGains) -> StateSpace:
    """Gains as a one-state LTI controller: integrator on e, static feedback."""
    return StateSpace(
        [[0.0]],
        [[1.0, 0.0, 0.0]],
        [[gains.k3]],
        [[0.0, -gains.k1, -gains.k2]],
    )


# ---------------------------------------------------------------------------
# H-infinity synthesis (two-Riccati gamma iteration)


def _regularize(p: PlantPartitions, eps: float, process_noise: float) -> PlantPartitions:
    """Repair the standard regularity assumptions.

    Rank-deficient D12/D21 get eps feedthrough rows/columns. The learning
    model always carries a zero eigenvalue whose mode is uncontrollable
    from every exogenous channel of the weighted interconnection (the
    reward residue cancels structurally), which violates the no-axis-zeros
    rank condition and would leave that mode marginal in the closed loop;
    small process-noise columns on the states restore it.
    """
    a, b1, b2, c1, c2 = p.A, p.B1, p.B2, p.C1, p.C2
    d11, d12, d21, d22 = p.D11, p.D12, p.D21, p.D22
    n = a.shape[0]
    m2 = b2.shape[1]
    p2 = c2.shape[0]
    if process_noise > 0.0:
        b1 = np.hstack([b1, process_noise * np.eye(n)])
        d11 = np.hstack([d11, np.zeros((d11.shape[0], n))])
        d21 = np.hstack([d21, np.zeros((p2, n))])
    if np.linalg.matrix_rank(d12, tol=1e-12) < m2:
        c1 = np.vstack([c1, np.zeros((m2, n))])
        d11 = np.vstack([d11, np.zeros((m2, d11.shape[1]))])
        d12 = np.vstack([d12, eps * np.eye(m2)])
    if np.linalg.matrix_rank(d21, tol=1e-12) < p2:
        b1 = np.hstack([b1, np.zeros((n, p2))])
        d11 = np.hstack([d11, np.zeros((d11.shape[0], p2))])
        d21 = np.hstack([d21, eps * np.eye(p2)])
    return PlantPartitions(a, b1, b2, c1, c2, d11, d12, d21, d22)


class _GammaTest:
    """Feasibility test and central-controller construction at fixed gamma."""

    def __init__(self, p: PlantPartitions):
        if np.any(p.D11 != 0.0):
            raise SynthesisError("plants with nonzero D11 are not supported")
        self.p = p
        # Normalize D12'D12 = I and D21 D21' = I via control/measurement scalings.
        u1, s1, v1t = np.linalg.svd(p.D12, full_matrices=False)
        if s1.min() <= 0.0:
            raise SynthesisError("D12 is rank deficient after regularization")
        self.su = v1t.T / s1                       # u = su @ u'
        u2, s2, v2t = np.linalg.svd(p.D21, full_matrices=False)
        if s2.min() <= 0.0:
            raise SynthesisError("D21 is rank deficient after regularization")
        self.sy = (u2 / s2).T                      # y' = sy @ y

        self.A = p.A
        self.B1 = p.B1
        self.B2 = p.B2 @ self.su
        self.C1 = p.C1
        self.C2 = self.sy @ p.C2
        self.D12 = p.D12 @ self.su                 # orthonormal columns
        self.D21 = self.sy @ p.D21                 # orthonormal rows

        self.abar = self.A - self.B2 @ self.D12.T @ self.C1
        self.ctc = self.C1.T @ (np.eye(self.C1.shape[0]) - self.D12 @ self.D12.T) @ self.C1
        self.ahat = self.A - self.B1 @ self.D21.T @ self.C2
        self.bbt = self.B1 @ (np.eye(self.B1.shape[1]) - self.D21.T @ self.D21) @ self.B1.T

    def riccatis(self, gamma: float) -> tuple[np.ndarray, np.ndarray]:
        gi2 = 1.0 / (gamma * gamma)
        rx = gi2 * self.B1 @ self.B1.T - self.B2 @ self.B2.T
        hx = np.block([[self.abar, rx], [-self.ctc, -self.abar.T]])
        x = _stable_invariant_solution(hx)
        ry = gi2 * self.C1.T @ self.C1 - self.C2.T @ self.C2
        hy = np.block([[self.ahat.T, ry], [-self.bbt, -self.ahat]])
        y = _stable_invariant_solution(hy)
        return x, y

    def feasible(self, gamma: float) -> tuple[bool, str]:
        try:
            x, y = self.riccatis(gamma)
        except SynthesisError as exc:
            return False, f"Riccati: {exc}"
        for name, m in (("X", x), ("Y", y)):
            eigs = np.linalg.eigvalsh(m)
            if eigs.min() < -1e-8 * max(1.0, eigs.max()):
                return False, f"{name} is not positive semidefinite"
        rho = np.abs(np.linalg.eigvals(x @ y)).max()
        if rho >= gamma * gamma * (1.0 - 1e-10):
            return False, f"spectral radius rho(XY)={rho:.3e} >= gamma^2"
        return True, ""

    def central_controller(self, gamma: float) -> tuple[np.ndarray, ...]:
        x, y = self.riccatis(gamma)
        gi2 = 1.0 / (gamma * gamma)
        f = -(self.B2.T @ x + self.D12.T @ self.C1)
        gain_l = -(y @ self.C2.T + self.B1 @ self.D21.T)
        n = self.A.shape[0]
        z = np.linalg.inv(np.eye(n) - gi2 * (y @ x))
        zl = z @ gain_l
        ak = (
            self.A
            + gi2 * self.B1 @ (self.B1.T @ x)
            + self.B2 @ f
            + zl @ (self.C2 + gi2 * self.D21 @ (self.B1.T @ x))
        )
        bk = -zl @ self.sy                 # unscale measurement side
        ck = self.su @ f                   # unscale control side
        dk = np.zeros((ck.shape[0], bk.shape[1]))
        return ak, bk, ck, dk


def hinf_synthesize(
    plant: GeneralizedPlant,
    gamma_tol: float = 1e-3,
    eps: float = 1e-6,
    process_noise: float = 1e-2,
    gamma_min: float = 1e-3,
    gamma_max: float = 1e6,
) -> tuple[LTIController, float]:
    """Central controller from the two-Riccati gamma iteration.

    Bisects gamma to relative width gamma_tol, builds the controller at the
    feasible upper end, and validates closed-loop internal stability and
    norm on the unregularized plant. The returned controller is internally
    stable; gamma is increased (more conservative) if the near-optimal
    central controller is not.
    """
    reg = _regularize(plant.partitions(), eps, process_noise)
    test = _GammaTest(reg)

    # Find a feasible upper bound.
    hi = 1.0
    feasible, reason = test.feasible(hi)
    while not feasible:
        hi *= 10.0
        if hi > gamma_max:
            raise SynthesisError(f"no feasible gamma <= {gamma_max:g} ({reason})")
        feasible, reason = test.feasible(hi)
    lo = gamma_min
    while hi - lo > gamma_tol * hi:
        mid = np.sqrt(hi * lo)
        ok, _ = test.feasible(mid)
        if ok:
            hi = mid
        else:
            lo = mid

    # Construct at the certified upper end; back off if the central
    # controller is itself unstable or fails validation numerically.
    gamma = hi
    last_err = ""
    for _ in range(8):
        try:
            ak, bk, ck, dk = test.central_controller(gamma)
        except SynthesisError as exc:
            last_err = str(exc)
            gamma *= 2.0
            continue
        if np.linalg.eigvals(ak).real.max() >= 0.0:
            last_err = "central controller not internally stable"
            gamma *= 2.0
            continue
        ctrl_ss = StateSpace(ak, bk, ck, dk)
        closed = lower_lft(plant, ctrl_ss)
        if np.linalg.eigvals(closed.A).real.max() >= 0.0:
            last_err = "closed loop unstable at synthesis gamma"
            gamma *= 2.0
            continue
        achieved = hinf_norm(closed, tol=1e-6)
        if achieved > gamma * (1.0 + 1e-6):
            last_err = f"closed-loop norm {achieved:.4e} exceeds gamma {gamma:.4e}"
            gamma *= 2.0
            continue
        return LTIController(ak, bk, ck, dk, gamma=float(gamma)), float(gamma)
    raise SynthesisError(f"gamma iteration produced no valid controller ({last_err})")


# ---------------------------------------------------------------------------
# Fixed-structure tuning


def _with_ntk(model: LearningModel, pair: NTKPair) -> LearningModel:
    return LearningModel(ntk=pair, discount=model.discount, uncertainty=model.uncertainty)


def worst_case_norm(
    plants: list[GeneralizedPlant],
    gains: FixedGains,
    norm_tol: float = 1e-3,
) -> float:
    """Max closed-loop H-infinity norm over plants; inf if any loop unstable."""
    ctrl = fixed_structure_ss(gains)
    worst = 0.0
    for plant in plants:
        closed = lower_lft(plant, ctrl)
        if np.linalg.eigvals(closed.A).real.max() >= 0.0:
            return np.inf
        worst = max(worst, hinf_norm(closed, tol=norm_tol))
    return worst


def tune_fixed_structure(
    model: LearningModel,
    weights: HinfWeights,
    bounds: NTKBounds,
    init: FixedGains | None = None,
    max_iter: int = 400,
) -> FixedGains:
    """Direct-search gains minimizing the worst closed-loop norm over the
    kernel bound box vertices (plus the nominal midpoint plant).

    Nelder-Mead on (k1, k2, k3) with a stability-penalized objective; the
    initial point comes from a coarse stabilizing grid search when not
    supplied.
    """
    corner_models = [_with_ntk(model, v) for v in bounds.vertices()]
    plants = [build_plant(m, weights) for m in corner_models]
    plants.append(build_plant(_with_ntk(model, bounds.midpoint()), weights))

    def objective(kvec: np.ndarray) -> float:
        k1, k2, k3 = kvec
        if 1.0 + k1 <= 1e-9:
            return 1e12
        ctrl = fixed_structure_ss(FixedGains(k1, k2, k3))
        worst = 0.0
        for plant in plants:
            closed = lower_lft(plant, ctrl)
            max_re = float(np.linalg.eigvals(closed.A).real.max())
            if max_re >= -1e-12:
                return 1e9 * (1.0 + max(0.0, max_re))
            worst = max(worst, hinf_norm(closed, tol=1e-3))
        return worst

    if init is None:
        # The LQ gains at the box midpoint are a natural stabilizing start;
        # fall back to a coarse sign-agnostic grid if they do not cover the
        # vertices.
        candidates: list[tuple[float, float, float]] = []
        try:
            h2 = h2_gains(bounds.midpoint(), model.discount, H2Weights())
            candidates.append((h2.k1, h2.k2, h2.k3))
        except SynthesisError:
            pass
        candidates += [
            (k1, k2, k3)
            for k1 in (0.0, 1.0, 5.0, 20.0)
            for k2 in (0.0, -1.0, -10.0, -100.0)
            for k3 in (0.0, 0.1, -0.1, 1.0, -1.0, 10.0, -10.0)
        ]
        best_val, best_k = np.inf, None
        for cand in candidates:
            val = objective(np.array(cand))
            if val < best_val:
                best_val, best_k = val, cand
        if best_k is None or best_val >= 1e9:
            raise SynthesisError("no stabilizing fixed-structure gains in the search box")
        x0 = np.array(best_k)
    else:
        x0 = np.array([init.k1, init.k2, init.k3])
        if objective(x0) >= 1e9:
            raise SynthesisError("initial gains do not stabilize all vertex plants")

    result = scipy.optimize.minimize(
        objective,
        x0,
        method="Nelder-Mead",
        options={"maxiter": max_iter, "xatol": 1e-6, "fatol": 1e-6},
    )
    kvec = result.x
    if objective(kvec) >= 1e9:
        # Nelder-Mead should never accept an unstable simplex point as best,
        # but guard against degenerate shrinkage.
        kvec = x0
    return FixedGains(*map(float, kvec))


# ---------------------------------------------------------------------------
# Discretization


def discretize(ss: StateSpace, dt: float) -> StateSpace:
    """Exact zero-order-hold discretization via the block matrix exponential."""
    if dt <= 0.0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    n, m = ss.n_states, ss.n_inputs
    block = np.zeros((n + m, n + m))
    block[:n, :n] = ss.A * dt
    block[:n, n:] = ss.B * dt
    phi = scipy.linalg.expm(block)
    return StateSpace(phi[:n, :n], phi[:n, n:], ss.C, ss.D, dt=dt)
