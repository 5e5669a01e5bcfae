"""Training loops: epsilon-greedy interaction and the controlled TD updates.

All controlled variants update online from the single current transition
(no replay buffer, no target network); the controller output enters the
loss as a fictitious reward. One environment step advances the
gradient-flow clock by alpha, so controller dynamics and the tracking
integrator are discretized with dt = alpha.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ctrlq import envs, qnet, synth
from ctrlq.envs import Transition
from ctrlq.errors import ConfigurationError, SynthesisError, TrainingError
from ctrlq.qnet import NTKPair, QNetwork
from ctrlq.synth import FixedGains, H2Weights, LTIController

VARIANTS = ("plain", "ddqn", "h2_scheduled", "hinf_dynamic", "hinf_fixed")


@dataclass
class AgentConfig:
    variant: str = "plain"
    alpha: float = 5e-5
    discount: float = 1.0
    hidden: int = 2500
    bias_std: float = qnet.DEFAULT_BIAS_STD
    init_gain: float = 1.0
    episodes: int = 2000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay: float = 0.995
    # DDQN extras.
    target_sync: int = 500
    buffer_size: int = 100_000
    batch_size: int = 64
    # H2 rescheduling cache: skip the CARE solve if the kernel pair moved
    # less than this relative amount since the last solve.
    h2_cache_tol: float = 0.01
    collect_traces: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if self.alpha <= 0.0:
            raise ConfigurationError("alpha must be positive")
        if not 0.0 < self.discount <= 1.0:
            raise ConfigurationError("discount must be in (0, 1]")

    def epsilon(self, episode: int) -> float:
        return max(self.eps_end, self.eps_start * self.eps_decay**episode)


@dataclass
class ControllerState:
    """Per-episode controller memory; reset to zero at every episode start."""

    x_e: float = 0.0
    x_c: np.ndarray = field(default_factory=lambda: np.zeros(0))
    last_u: float = 0.0


class H2Scheduler:
    """Per-step gain scheduling: re-solve the LQ problem at the measured
    kernel pair, served from a cache while the pair moves < cache_tol."""

    def __init__(self, weights: H2Weights, discount: float, cache_tol: float = 0.01):
        self.weights = weights
        self.discount = discount
        self.cache_tol = cache_tol
        self.cached_pair: NTKPair | None = None
        self.cached_gains: FixedGains | None = None
        self.solve_count = 0
        self.failure_count = 0

    def gains_for(self, theta1: float, theta2: float) -> tuple[FixedGains, bool]:
        """Returns (gains, failed). On synthesis failure the previous gains
        are retained and failed=True."""
        if self.cached_pair is not None and self.cached_gains is not None:
            ref1 = abs(self.cached_pair.theta1)
            ref2 = max(abs(self.cached_pair.theta2), 1e-12)
            if (
                abs(theta1 - self.cached_pair.theta1) < self.cache_tol * ref1
                and abs(theta2 - self.cached_pair.theta2) < self.cache_tol * ref2
            ):
                return self.cached_gains, False
        try:
            gains = synth.h2_gains(NTKPair(theta1, theta2), self.discount, self.weights)
        except SynthesisError:
            self.failure_count += 1
            if self.cached_gains is None:
                raise
            return self.cached_gains, True
        self.solve_count += 1
        self.cached_pair = NTKPair(theta1, theta2)
        self.cached_gains = gains
        return gains, False


class DynamicController:
    """Zero-order-hold discretization of a synthesized LTI controller,
    stepped once per environment interaction (dt = alpha)."""

    def __init__(self, controller: LTIController, alpha: float):
        dd = synth.discretize(controller.to_ss(), alpha)
        self.Ad = dd.A
        self.Bd = dd.B
        self.Cd = dd.C[0]
        self.Dd = dd.D[0]
        self.order = self.Ad.shape[0]
        self.continuous = controller

    def output(self, x_c: np.ndarray, inputs: np.ndarray) -> float:
        return float(self.Cd @ x_c + self.Dd @ inputs)

    def advance(self, x_c: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        return self.Ad @ x_c + self.Bd @ inputs


Controller = H2Scheduler | DynamicController | FixedGains | None


def select_action(
    net: QNetwork,
    s: np.ndarray,
    epsilon: float,
    rng: np.random.Generator,
    q_values: np.ndarray | None = None,
) -> int:
    """Epsilon-greedy action: argmax of the Q-values (lowest index on ties)
    with probability 1 - epsilon, else uniform random."""
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigurationError(f"epsilon must be in [0, 1], got {epsilon}")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(net.n_a))
    if q_values is None:
        q_values = net.forward(s)
    return int(np.argmax(q_values))


def compute_delta(
    variant: str,
    tr: Transition,
    net: QNetwork,
    controller: Controller,
    state: ControllerState,
    config: AgentConfig,
    target_net: QNetwork | None = None,
    q_s: np.ndarray | None = None,
    q_next: np.ndarray | None = None,
    ntk_pair: NTKPair | None = None,
) -> tuple[float, float, ControllerState, bool]:
    """Temporal-difference multiplier for one transition.

    Returns (delta, u, updated controller state, reschedule_failed). The
    parameter update for every variant is theta += alpha * delta * grad;
    u is the fictitious reward implied by the controller (0 for
    plain/ddqn). The bootstrap term is dropped on terminal transitions.
    """
    g = config.discount
    if q_s is None:
        q_s = net.forward(tr.s)
    q1 = float(q_s[tr.a])
    if variant == "ddqn":
        if target_net is None:
            raise ConfigurationError("ddqn needs a target network")
        q2 = 0.0 if tr.done else float(np.max(target_net.forward(tr.s_next)))
    else:
        if q_next is None:
            q_next = net.forward(tr.s_next)
        q2 = 0.0 if tr.done else float(np.max(q_next))

    e = tr.r + g * q2 - q1
    failed = False

    if variant in ("plain", "ddqn"):
        delta = e
        u = 0.0
        new_state = state
    elif variant in ("h2_scheduled", "hinf_fixed"):
        if variant == "h2_scheduled":
            if not isinstance(controller, H2Scheduler):
                raise ConfigurationError("h2_scheduled needs an H2Scheduler")
            if ntk_pair is None:
                ntk_pair = qnet.ntk_for_transition(net, tr.s, tr.a, tr.s_next)
            gains, failed = controller.gains_for(ntk_pair.theta1, ntk_pair.theta2)
        else:
            if not isinstance(controller, FixedGains):
                raise ConfigurationError("hinf_fixed needs FixedGains")
            gains = controller
        delta = (
            tr.r
            + (g - gains.k2) * q2
            - (1.0 + gains.k1) * q1
            + gains.k3 * state.x_e
        )
        u = delta - e
        new_state = replace(state, x_e=state.x_e + config.alpha * e, last_u=u)
    elif variant == "hinf_dynamic":
        if not isinstance(controller, DynamicController):
            raise ConfigurationError("hinf_dynamic needs a DynamicController")
        inputs = np.array([e, q1, q2])
        u = controller.output(state.x_c, inputs)
        delta = e + u
        new_state = ControllerState(
            x_e=state.x_e + config.alpha * e,
            x_c=controller.advance(state.x_c, inputs),
            last_u=u,
        )
    else:
        raise ConfigurationError(f"unknown variant {variant!r}")

    if not math.isfinite(delta):
        raise TrainingError(f"non-finite delta in variant {variant}: {delta}")
    return float(delta), float(u), new_state, failed


def loss_value(variant: str, delta: float, gains: FixedGains | None = None) -> float:
    """Scalar loss implied by the variant's controlled quadratic form."""
    if variant in ("h2_scheduled", "hinf_fixed"):
        if gains is None:
            raise ConfigurationError("gain-based loss needs the gains")
        return delta * delta / (2.0 * (1.0 + gains.k1))
    return 0.5 * delta * delta


def ddqn_target_sync(net: QNetwork, target_net: QNetwork) -> QNetwork:
    """Parameter-wise copy of the online network into the target network."""
    target_net.copy_from(net)
    return target_net


class ReplayBuffer:
    """Circular uniform replay buffer over fixed-size arrays."""

    def __init__(self, capacity: int, n_s: int):
        self.capacity = capacity
        self.s = np.empty((capacity, n_s))
        self.a = np.empty(capacity, dtype=np.int64)
        self.r = np.empty(capacity)
        self.s_next = np.empty((capacity, n_s))
        self.done = np.empty(capacity)
        self.size = 0
        self.head = 0

    def push(self, tr: Transition) -> None:
        i = self.head
        self.s[i] = tr.s
        self.a[i] = tr.a
        self.r[i] = tr.r
        self.s_next[i] = tr.s_next
        self.done[i] = 1.0 if tr.done else 0.0
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch: int):
        idx = rng.integers(0, self.size, size=batch)
        return (self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.done[idx])


class _BatchScratch:
    """Reusable minibatch buffers for the DDQN update."""

    def __init__(self, batch: int, n_s: int, hidden: int, n_a: int):
        self.z1 = np.empty((batch, hidden))
        self.h = np.empty((batch, hidden))
        self.g1 = np.empty((batch, hidden))
        self.q = np.empty((batch, n_a))
        self.upstream = np.empty((batch, n_a))
        self.rows = np.arange(batch)


def _ddqn_minibatch_update(
    net: QNetwork,
    target_net: QNetwork,
    batch,
    alpha: float,
    discount: float,
    scr: _BatchScratch,
) -> float:
    """One mean-squared TD step on a sampled minibatch; returns the loss."""
    s, a, r, s_next, done = batch
    np.matmul(s, net.W1.T, out=scr.z1)
    scr.z1 += net.b1
    np.maximum(scr.z1, 0.0, out=scr.h)
    np.matmul(scr.h, net.W2.T, out=scr.q)
    scr.q += net.b2
    q_sel = scr.q[scr.rows, a]

    np.matmul(s_next, target_net.W1.T, out=scr.g1)
    scr.g1 += target_net.b1
    np.maximum(scr.g1, 0.0, out=scr.g1)
    q2 = np.max(scr.g1 @ target_net.W2.T + target_net.b2, axis=1)
    delta = r + discount * (1.0 - done) * q2 - q_sel
    if not np.all(np.isfinite(delta)):
        raise TrainingError("non-finite delta in ddqn minibatch")

    scr.upstream[:] = 0.0
    scr.upstream[scr.rows, a] = delta
    scale = alpha / len(a)
    np.matmul(scr.upstream, net.W2, out=scr.g1)
    scr.g1 *= scr.z1 > 0.0
    net.W2 += scale * (scr.upstream.T @ scr.h)
    net.b2 += scale * scr.upstream.sum(axis=0)
    net.W1 += scale * (scr.g1.T @ s)
    net.b1 += scale * scr.g1.sum(axis=0)
    return float(0.5 * np.mean(delta * delta))


@dataclass
class EpisodeLog:
    episode: int
    steps: int
    ret: float
    loss_mean: float
    theta1_mean: float
    theta2_mean: float
    u_mean_abs: float
    u_max_abs: float
    epsilon: float
    synth_failures: int = 0


@dataclass
class StepTraces:
    """Per-step signals for spectrum analysis and kernel scatter plots."""

    r: list[float] = field(default_factory=list)
    q1: list[float] = field(default_factory=list)
    q2: list[float] = field(default_factory=list)
    theta1: list[float] = field(default_factory=list)
    theta2: list[float] = field(default_factory=list)
    u: list[float] = field(default_factory=list)
    epsilon: list[float] = field(default_factory=list)

    def append(self, r, q1, q2, theta1, theta2, u, epsilon) -> None:
        self.r.append(r)
        self.q1.append(q1)
        self.q2.append(q2)
        self.theta1.append(theta1)
        self.theta2.append(theta2)
        self.u.append(u)
        self.epsilon.append(epsilon)


@dataclass
class RunLog:
    env_id: str
    variant: str
    seed: int
    episodes: list[EpisodeLog]
    traces: StepTraces | None = None

    def returns(self) -> np.ndarray:
        return np.array([ep.ret for ep in self.episodes])

    def final_score(self, window: int = 100) -> float:
        rets = self.returns()
        return float(rets[-window:].mean())


class _DdqnState:
    def __init__(self, net: QNetwork, config: AgentConfig, n_s: int):
        self.target = net.copy()
        self.buffer = ReplayBuffer(config.buffer_size, n_s)
        self.step_count = 0
        self.scratch = _BatchScratch(config.batch_size, n_s, net.hidden, net.n_a)


def train_episode(
    env_id: str,
    net: QNetwork,
    config: AgentConfig,
    controller: Controller,
    rng: np.random.Generator,
    epsilon: float,
    episode_index: int = 0,
    ddqn_state: _DdqnState | None = None,
    traces: StepTraces | None = None,
    _scratch: tuple[np.ndarray, np.ndarray] | None = None,
) -> EpisodeLog:
    """One episode: reset env and controller state, then loop
    select_action -> step -> compute_delta -> gradient step."""
    spec = envs.spec(env_id)
    variant = config.variant
    s = envs.reset(env_id, rng)
    state = ControllerState()
    if isinstance(controller, DynamicController):
        state.x_c = np.zeros(controller.order)
    if _scratch is None:
        _scratch = (np.empty(net.n_params), np.empty(net.n_params))
    g_buf, g_next_buf = _scratch

    ret = 0.0
    loss_sum = 0.0
    t1_sum = 0.0
    t2_sum = 0.0
    u_abs_sum = 0.0
    u_abs_max = 0.0
    failures = 0
    steps = 0

    for t in range(spec.max_steps):
        q_s = net.forward(s)
        a = select_action(net, s, epsilon, rng, q_values=q_s)
        s_next, r, done_phys = envs.step(env_id, s, a)
        # The step cap truncates the episode but is not a terminal state:
        # only physics termination drops the bootstrap term.
        tr = Transition(s, a, r, s_next, done_phys)

        q_next = net.forward(s_next)
        a_next = int(np.argmax(q_next))
        g = net.grad(s, a, out=g_buf)
        theta1 = float(g @ g)
        if variant == "ddqn":
            theta2 = 0.0  # target gradient is zero w.r.t. online parameters
        else:
            g_next = net.grad(s_next, a_next, out=g_next_buf)
            theta2 = float(g @ g_next)
        pair = NTKPair(theta1, theta2)

        delta, u, state, failed = compute_delta(
            variant, tr, net, controller, state, config,
            target_net=ddqn_state.target if ddqn_state is not None else None,
            q_s=q_s, q_next=q_next, ntk_pair=pair,
        )
        failures += int(failed)

        if variant == "ddqn":
            assert ddqn_state is not None
            ddqn_state.buffer.push(tr)
            if ddqn_state.buffer.size >= config.batch_size:
                loss = _ddqn_minibatch_update(
                    net, ddqn_state.target,
                    ddqn_state.buffer.sample(rng, config.batch_size),
                    config.alpha, config.discount, ddqn_state.scratch,
                )
            else:
                loss = loss_value(variant, delta)
            ddqn_state.step_count += 1
            if ddqn_state.step_count % config.target_sync == 0:
                ddqn_target_sync(net, ddqn_state.target)
        else:
            gains = None
            if variant == "hinf_fixed":
                gains = controller
            elif variant == "h2_scheduled":
                gains = controller.cached_gains
            loss = loss_value(variant, delta, gains)
            qnet.sgd_step(net, delta, g, config.alpha)

        ret += r
        loss_sum += loss
        t1_sum += theta1
        t2_sum += theta2
        u_abs_sum += abs(u)
        u_abs_max = max(u_abs_max, abs(u))
        steps += 1
        if traces is not None:
            traces.append(r, float(q_s[a]), float(0.0 if done_phys else np.max(q_next)),
                          theta1, theta2, u, epsilon)
        s = s_next
        if done_phys:
            break

    return EpisodeLog(
        episode=episode_index,
        steps=steps,
        ret=ret,
        loss_mean=loss_sum / steps,
        theta1_mean=t1_sum / steps,
        theta2_mean=t2_sum / steps,
        u_mean_abs=u_abs_sum / steps,
        u_max_abs=u_abs_max,
        epsilon=epsilon,
        synth_failures=failures,
    )


def train_run(
    env_id: str,
    config: AgentConfig,
    seed: int,
    controller: Controller = None,
) -> RunLog:
    """Full training run, deterministic under the seed."""
    spec = envs.spec(env_id)
    net = qnet.init(spec.n_s, config.hidden, spec.n_a, seed=seed,
                    bias_std=config.bias_std, gain=config.init_gain)
    rng = np.random.default_rng(seed)
    ddqn_state = _DdqnState(net, config, spec.n_s) if config.variant == "ddqn" else None
    traces = StepTraces() if config.collect_traces else None
    scratch = (np.empty(net.n_params), np.empty(net.n_params))

    logs = []
    for ep in range(config.episodes):
        logs.append(
            train_episode(
                env_id, net, config, controller, rng,
                epsilon=config.epsilon(ep), episode_index=ep,
                ddqn_state=ddqn_state, traces=traces, _scratch=scratch,
            )
        )
    return RunLog(env_id=env_id, variant=config.variant, seed=seed,
                  episodes=logs, traces=traces)


def h2_reschedule(
    net: QNetwork,
    tr: Transition,
    weights: H2Weights,
    discount: float,
) -> FixedGains:
    """Fresh LQ gains at the kernel pair measured on one transition."""
    pair = qnet.ntk_for_transition(net, tr.s, tr.a, tr.s_next)
    return synth.h2_gains(pair, discount, weights)


def build_controller(
    variant: str,
    config: AgentConfig,
    h2_weights: H2Weights | None = None,
    hinf_controller: LTIController | None = None,
    fixed_gains: FixedGains | None = None,
) -> Controller:
    """Assemble the per-run controller object for a variant."""
    if variant in ("plain", "ddqn"):
        return None
    if variant == "h2_scheduled":
        return H2Scheduler(h2_weights or H2Weights(), config.discount,
                           cache_tol=config.h2_cache_tol)
    if variant == "hinf_dynamic":
        if hinf_controller is None:
            raise ConfigurationError("hinf_dynamic needs a synthesized controller")
        return DynamicController(hinf_controller, config.alpha)
    if variant == "hinf_fixed":
        if fixed_gains is None:
            raise ConfigurationError("hinf_fixed needs tuned gains")
        return fixed_gains
    raise ConfigurationError(f"unknown variant {variant!r}")
